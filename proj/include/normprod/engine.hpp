#pragma once

#include <string>
#include <vector>

#include "normprod/counting.hpp"
#include "normprod/model.hpp"

namespace normprod {

/// Log-domain messages, one table per directed variable-factor edge,
/// indexed [factor][position in scope]. log_m lives over the states of the
/// variable, log_n over the whole factor scope. Every log_n table is kept
/// normalized to max 0; +inf and NaN never appear, -inf marks
/// configurations excluded by zero potentials.
struct MessageState {
    std::vector<std::vector<Table>> log_m;
    std::vector<std::vector<Table>> log_n;
};

enum class ConvergenceMetric { auto_default, message_delta, dual_delta };

struct RunConfig {
    double epsilon = 1.0;
    double tol = 1e-8;
    int max_sweeps = 10000;
    /// auto_default resolves to dual_delta for epsilon == 0 on convex
    /// settings (the dual is what converges there) and message_delta
    /// otherwise.
    ConvergenceMetric metric = ConvergenceMetric::auto_default;
    int trace_every = 0;  // record every k-th sweep plus the last; 0 = off
};

struct BeliefSet {
    std::vector<Table> log_b_i;
    std::vector<Table> log_b_alpha;
    bool b_alpha_available = true;
    double consistency_residual = 0.0;
    double simplex_residual = 0.0;
};

struct TraceRow {
    int sweep;
    double dual;    // NaN when the counting class has no dual
    double primal;  // NaN when factor beliefs are unavailable
    double max_delta;
};

struct RunReport {
    bool converged = false;
    int sweeps_used = 0;
    std::vector<TraceRow> trace;
    double final_consistency_residual = 0.0;
    double final_simplex_residual = 0.0;
    std::string termination;
};

struct RunOutput {
    BeliefSet beliefs;
    RunReport report;
    MessageState state;
};

/// All n_{i->a} = 1 (log 0); m tables allocated, filled on first block update.
MessageState init_messages(const Model& model);

/// One block of the norm-product update for variable i: recompute
/// m_{a->i} for every incident factor from the current n messages, then
/// rewrite every n_{i->a} and renormalize it to max-log 0. For eps == 0
/// the power-sum in m becomes a max. If max_abs_delta is given it receives
/// the largest absolute change over this block's log_n entries.
void update_block(const Model& model, const CountingNumbers& cn, double eps,
                  MessageState& state, int i, double* max_abs_delta = nullptr);

/// Cyclic sweeps i = 1..n until the configured metric drops below tol or
/// max_sweeps is reached. Convergence is guaranteed only for convex
/// settings; converged == false is a legal outcome otherwise. An optional
/// warm start replaces the unit initialization.
RunOutput run(const Model& model, const CountingNumbers& cn, const RunConfig& config,
              const MessageState* warm_start = nullptr);

/// Belief recovery. eps > 0: b_i ~ (phi prod m)^(1/(eps hat_c_i)) and
/// b_a ~ (psi prod n)^(1/(eps c_a)) (factor beliefs only when every
/// c_a > 0). eps == 0: tie-indicator distributions, 1/r over the maximizing
/// states. Messages m are recomputed fresh from n.
BeliefSet beliefs_from_messages(const Model& model, const CountingNumbers& cn, double eps,
                                const MessageState& state);

/// Conjugate-dual value q(lambda) with lambda_{i,a} = -log n_{i->a}.
/// Norms with zero scale (eps == 0, or c_i == 0 / c_ia == 0) are maxima.
/// Only defined for convex settings; invariant under per-table constant
/// shifts of log_n.
double dual_objective(const Model& model, const CountingNumbers& cn, double eps,
                      const MessageState& state);

/// theta' b - eps * Htilde(b) with the 0 ln 0 = 0 convention.
double primal_objective(const Model& model, const CountingNumbers& cn, double eps,
                        const BeliefSet& beliefs);

/// theta' b alone (the energy part of the primal).
double linear_energy(const Model& model, const BeliefSet& beliefs);

/// max over (i, a in N(i), x_i) of |sum_{x_a \ x_i} b_a - b_i|.
double consistency_residual(const Model& model, const BeliefSet& beliefs);

/// CSV exports; %.12g floats, LF endings.
std::string trace_csv(const RunReport& report);
std::string beliefs_csv(const Model& model, const BeliefSet& beliefs, const std::string& source);

}  // namespace normprod
