#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normprod/map_lp.hpp"
#include "normprod/model.hpp"

namespace normprod {

enum class ExperimentKind { marginals_grid, marginals_complete, lp_binary_grid, lp_ternary_grid };

ExperimentKind parse_experiment_kind(const std::string& name);
const char* experiment_kind_name(ExperimentKind k);

enum class CountingPreset { bethe, trw, l2, trivial, nmplp };

/// A solver entry: counting preset plus temperature, e.g. "bethe@1",
/// "trw@0", "l2@1"; "anneal:trivial@0.001" runs the epsilon-annealed LP
/// solver down to the given eps_min.
struct SolverSpec {
    std::string label;
    CountingPreset preset = CountingPreset::bethe;
    double epsilon = 1.0;
    bool anneal = false;

    static SolverSpec parse(const std::string& text);
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::marginals_grid;
    int trials = 100;
    std::vector<double> omegas;  // default 0:2:0.25 (marginal kinds) / {1} (LP kinds)
    std::vector<SolverSpec> solvers;
    std::uint64_t base_seed = 0;
    double tol = 1e-8;
    int max_sweeps = 10000;
    int grid_rows = 10, grid_cols = 10;
    int complete_vars = 10;
    /// unset: attractive for the marginal kinds, gaussian for the LP kinds
    std::optional<CouplingSpec::Kind> coupling;
    /// worker threads over (trial, omega) cells; 0 = auto. Output content
    /// is identical regardless of the thread count.
    int threads = 0;

    void fill_defaults();
};

struct ExperimentRow {
    int trial;
    double omega;
    std::string solver;
    bool converged;
    int sweeps;
    double avg_l1_error;  // marginal kinds; NaN otherwise
    double dual_value;    // LP kinds; NaN for non-convex solvers
    double energy;        // LP kinds: decoded assignment energy
    std::string certificate;  // LP kinds
    bool excluded;        // true when the row is left out of summary means
    double wall_time;     // seconds; reported separately, never in the CSV
};

struct ExperimentResult {
    std::vector<ExperimentRow> rows;
    std::string csv;      // rows plus trailing summary block; deterministic
    std::string timings;  // per-row wall times; not deterministic
};

/// Runs trials x omegas x solvers. Trial t uses seed base_seed + t for its
/// model regardless of execution order, so the CSV is byte-identical across
/// reruns. Single omega_grid parse helper: "start:stop:step".
ExperimentResult run_experiment(const ExperimentSpec& spec);

std::vector<double> parse_omega_grid(const std::string& text);

}  // namespace normprod
