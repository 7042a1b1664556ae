#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "normprod/engine.hpp"
#include "normprod/model.hpp"

namespace normprod {

/// Ground truth from exact inference. Marginals are linear-domain
/// probability tables (row-major over sorted scopes, like the potentials).
struct ExactResult {
    double log_z = 0.0;
    std::vector<Table> marginals_i;
    std::vector<Table> marginals_alpha;
    Assignment map_assignment;
    double map_energy = 0.0;
};

/// Literal summation over the joint state space; needs prod n_i <= max_states.
/// MAP ties break toward the lexicographically smallest assignment.
ExactResult enumerate_exact(const Model& model, std::int64_t max_states = std::int64_t{1} << 22);

/// Variable elimination in both semirings: log_Z and every singleton and
/// factor marginal by sum-product elimination, the MAP by max-product
/// elimination with traceback. Default order is min-degree (lowest index on
/// ties); pass an explicit permutation of the variables to override.
/// Errors when an intermediate table would exceed 2^24 entries.
ExactResult ve_exact(const Model& model, const std::vector<int>* elimination_order = nullptr);

/// Just the singleton marginals by sum-product elimination; what the
/// experiment harness needs per trial.
std::vector<Table> ve_singleton_marginals(const Model& model,
                                          const std::vector<int>* elimination_order = nullptr);

/// Oracle marginals repackaged as a BeliefSet (log domain) so they flow
/// through the same residual checks and CSV export as engine beliefs.
BeliefSet beliefs_from_exact(const Model& model, const ExactResult& exact);

}  // namespace normprod
