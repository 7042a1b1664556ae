#pragma once

#include <utility>
#include <vector>

#include "normprod/engine.hpp"

namespace normprod {

enum class Certificate { integral_no_ties, ties_present, stalled_inconsistent };

const char* certificate_name(Certificate c);

struct MapResult {
    Assignment assignment;
    std::vector<bool> tie_flags;
    double energy = 0.0;      // energy_of_assignment of the decoded point
    double dual_value = 0.0;  // NaN for non-convex settings
    Certificate certificate = Certificate::integral_no_ties;
};

struct AnnealSchedule {
    double eps_start = 1.0;
    double ratio = 0.5;     // in (0,1)
    double eps_min = 1e-3;  // the paper's operating point
    double tol = 1e-8;      // per-stage tolerance; the final stage also
                            // drives the duality gap below it
    int max_sweeps = 10000;
};

struct AnnealResult {
    BeliefSet beliefs;       // at eps_min
    double delta = 0.0;      // Proposition-1 bound at eps_min
    RunReport report;        // stitched trace across stages
    double final_primal = 0.0;
    double final_dual = 0.0;
    Assignment decoded;
    std::vector<bool> tie_flags;
    MessageState state;
};

/// Per-variable argmax with ties broken toward the lowest state index and
/// flagged.
std::pair<Assignment, std::vector<bool>> decode(const std::vector<Table>& max_marginals);

/// Norm-product at eps = 0 on a convex setting, converged in the dual, then
/// decoded. certificate = stalled_inconsistent when the dual converged but
/// the recovered beliefs violate marginal consistency beyond tol.
std::pair<MapResult, RunReport> convex_max_product(const Model& model,
                                                   const CountingNumbers& cn,
                                                   RunConfig config = {});

/// Geometric epsilon annealing eps_start, eps_start*ratio, ..., eps_min
/// with warm-started messages; the final stage keeps sweeping until the
/// duality gap drops below tol (or max_sweeps runs out).
AnnealResult anneal_lp(const Model& model, const CountingNumbers& cn,
                       const AnnealSchedule& schedule = {});

/// Proposition-1 bound
/// delta = eps (sum_a c_a ln n_a + sum_i c_i ln n_i + sum_{ia} c_ia ln(n_a/n_i)).
double lp_bound_delta(const Model& model, const CountingNumbers& cn, double eps);

/// CSV export `var,state,tie`.
std::string map_csv(const MapResult& result);

}  // namespace normprod
