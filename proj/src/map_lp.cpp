#include "normprod/map_lp.hpp"

#include <cmath>

namespace normprod {

const char* certificate_name(Certificate c) {
    switch (c) {
        case Certificate::integral_no_ties: return "integral_no_ties";
        case Certificate::ties_present: return "ties_present";
        default: return "stalled_inconsistent";
    }
}

std::pair<Assignment, std::vector<bool>> decode(const std::vector<Table>& max_marginals) {
    Assignment x;
    std::vector<bool> ties;
    x.states.reserve(max_marginals.size());
    ties.reserve(max_marginals.size());
    for (const Table& t : max_marginals) {
        if (t.size() == 0) throw ValidationError("decode: empty table");
        int arg = 0;
        for (Eigen::Index k = 1; k < t.size(); ++k)
            if (t[k] > t[arg]) arg = static_cast<int>(k);
        int r = 0;
        for (Eigen::Index k = 0; k < t.size(); ++k)
            if (t[k] == t[arg]) ++r;
        x.states.push_back(arg);
        ties.push_back(r > 1);
    }
    return {std::move(x), std::move(ties)};
}

namespace {

Certificate judge(const BeliefSet& beliefs, const std::vector<bool>& ties, bool dual_converged,
                  double tol) {
    if (dual_converged && beliefs.b_alpha_available && beliefs.consistency_residual > tol)
        return Certificate::stalled_inconsistent;
    for (bool t : ties)
        if (t) return Certificate::ties_present;
    return Certificate::integral_no_ties;
}

}  // namespace

std::pair<MapResult, RunReport> convex_max_product(const Model& model,
                                                   const CountingNumbers& cn,
                                                   RunConfig config) {
    if (classify(model, cn) != CountingClass::convex)
        throw ValidationError("convex_max_product: counting setting must be convex");
    config.epsilon = 0.0;
    if (config.metric == ConvergenceMetric::auto_default)
        config.metric = ConvergenceMetric::dual_delta;

    RunOutput out = run(model, cn, config);

    MapResult res;
    auto [x, ties] = decode(out.beliefs.log_b_i);
    res.assignment = std::move(x);
    res.tie_flags = std::move(ties);
    res.energy = energy_of_assignment(model, res.assignment);
    res.dual_value = dual_objective(model, cn, 0.0, out.state);
    res.certificate = judge(out.beliefs, res.tie_flags, out.report.converged, config.tol);
    return {std::move(res), std::move(out.report)};
}

AnnealResult anneal_lp(const Model& model, const CountingNumbers& cn,
                       const AnnealSchedule& schedule) {
    if (classify(model, cn) != CountingClass::convex)
        throw ValidationError("anneal_lp: counting setting must be convex");
    if (!(schedule.eps_min > 0.0) || !(schedule.eps_start >= schedule.eps_min))
        throw ValidationError("anneal_lp: need eps_start >= eps_min > 0");
    if (!(schedule.ratio > 0.0) || !(schedule.ratio < 1.0))
        throw ValidationError("anneal_lp: ratio must lie in (0,1)");

    std::vector<double> stages;
    for (double e = schedule.eps_start; e > schedule.eps_min; e *= schedule.ratio) {
        stages.push_back(e);
        if (stages.size() > 10000) throw ValidationError("anneal_lp: schedule too long");
    }
    stages.push_back(schedule.eps_min);

    AnnealResult res;
    res.report.converged = true;
    MessageState state = init_messages(model);
    int sweep_base = 0;

    // Each stage runs until its own duality gap closes. The message-change
    // metric goes blind at small eps long after the gap has converged, and
    // a gap evaluated at inconsistent beliefs can undercut the optimum, so
    // the criterion pairs |gap| with the consistency residual.
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const double eps = stages[s];
        bool stage_done = false;
        for (int sweep = 1; sweep <= schedule.max_sweeps; ++sweep) {
            double max_delta = 0.0;
            for (int i = 0; i < model.num_vars(); ++i)
                update_block(model, cn, eps, state, i, &max_delta);
            ++sweep_base;
            // evaluating beliefs and both objectives costs a few sweeps, so
            // once a stage is past its opening sweeps the gap is checked on
            // a stride
            if (sweep > 16 && sweep % 8 != 0 && sweep != schedule.max_sweeps) continue;
            const BeliefSet bel = beliefs_from_messages(model, cn, eps, state);
            const double primal = primal_objective(model, cn, eps, bel);
            const double dual = dual_objective(model, cn, eps, state);
            const double gap = primal - dual;
            res.report.trace.push_back({sweep_base, dual, primal, max_delta});
            stage_done = std::abs(gap) <= schedule.tol &&
                         bel.consistency_residual <= schedule.tol;
            if (stage_done || sweep == schedule.max_sweeps) {
                if (s + 1 == stages.size()) {
                    res.beliefs = bel;
                    res.final_primal = primal;
                    res.final_dual = dual;
                }
                break;
            }
        }
        res.report.converged = res.report.converged && stage_done;
    }
    res.report.sweeps_used = sweep_base;
    res.report.termination = res.report.converged ? "converged" : "max_sweeps";
    res.report.final_consistency_residual = res.beliefs.consistency_residual;
    res.report.final_simplex_residual = res.beliefs.simplex_residual;
    res.delta = lp_bound_delta(model, cn, schedule.eps_min);
    auto [x, ties] = decode(res.beliefs.log_b_i);
    res.decoded = std::move(x);
    res.tie_flags = std::move(ties);
    res.state = std::move(state);
    return res;
}

double lp_bound_delta(const Model& model, const CountingNumbers& cn, double eps) {
    check_shapes(model, cn);
    double d = 0.0;
    for (int a = 0; a < model.num_factors(); ++a) {
        double ln_na = 0.0;  // ln n_a = sum of ln n_i over the scope
        for (int v : model.factors[a].scope) ln_na += std::log(model.cards[v]);
        d += cn.c_alpha[a] * ln_na;
    }
    for (int i = 0; i < model.num_vars(); ++i) d += cn.c_i[i] * std::log(model.cards[i]);
    for (int i = 0; i < model.num_vars(); ++i) {
        const auto& inc = model.var_to_factors[i];
        for (std::size_t p = 0; p < inc.size(); ++p) {
            double ln_na = 0.0;
            for (int v : model.factors[inc[p].factor].scope) ln_na += std::log(model.cards[v]);
            d += cn.c_i_alpha[i][p] * (ln_na - std::log(model.cards[i]));
        }
    }
    return eps * d;
}

std::string map_csv(const MapResult& result) {
    std::string out = "var,state,tie\n";
    for (std::size_t i = 0; i < result.assignment.states.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(result.assignment.states[i]) + "," +
               (result.tie_flags[i] ? "1" : "0") + "\n";
    return out;
}

}  // namespace normprod
