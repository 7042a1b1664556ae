#include "normprod/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace normprod {

namespace {

constexpr std::int64_t kMaxVeTable = std::int64_t{1} << 24;

double joint_log_p(const Model& model, const std::vector<int>& x) {
    double lp = 0.0;
    for (int i = 0; i < model.num_vars(); ++i) {
        lp += model.log_phi[i][x[i]];
        if (lp == kNegInf) return kNegInf;
    }
    for (int a = 0; a < model.num_factors(); ++a) {
        const Factor& f = model.factors[a];
        std::int64_t flat = 0;
        for (std::size_t p = 0; p < f.scope.size(); ++p)
            flat += x[f.scope[p]] * model.layouts[a].strides[p];
        lp += f.log_psi[flat];
        if (lp == kNegInf) return kNegInf;
    }
    return lp;
}

bool advance(std::vector<int>& x, const std::vector<int>& cards) {
    for (int i = static_cast<int>(x.size()) - 1; i >= 0; --i) {
        if (++x[i] < cards[i]) return true;
        x[i] = 0;
    }
    return false;
}

}  // namespace

ExactResult enumerate_exact(const Model& model, std::int64_t max_states) {
    std::int64_t total = 1;
    for (int c : model.cards) {
        total *= c;
        if (total > max_states)
            throw ValidationError("enumerate_exact: state space exceeds max_states");
    }

    ExactResult res;
    std::vector<int> x(model.num_vars(), 0);

    // pass 1: max log p and the MAP (lexicographic iteration keeps the
    // lexicographically smallest argmax under strict comparison)
    double best = kNegInf;
    std::vector<int> best_x = x;
    do {
        const double lp = joint_log_p(model, x);
        if (lp > best) {
            best = lp;
            best_x = x;
        }
    } while (advance(x, model.cards));
    if (best == kNegInf)
        throw NumericError("enumerate_exact: model has no feasible configuration");
    res.map_assignment.states = best_x;
    res.map_energy = -best;

    // pass 2: partition function and marginals, scaled by the max
    res.marginals_i.resize(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i)
        res.marginals_i[i] = Table::Zero(model.cards[i]);
    res.marginals_alpha.resize(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a)
        res.marginals_alpha[a] = Table::Zero(model.layouts[a].total);

    double zscaled = 0.0;
    std::fill(x.begin(), x.end(), 0);
    do {
        const double lp = joint_log_p(model, x);
        if (lp == kNegInf) continue;
        const double w = std::exp(lp - best);
        zscaled += w;
        for (int i = 0; i < model.num_vars(); ++i) res.marginals_i[i][x[i]] += w;
        for (int a = 0; a < model.num_factors(); ++a) {
            const Factor& f = model.factors[a];
            std::int64_t flat = 0;
            for (std::size_t p = 0; p < f.scope.size(); ++p)
                flat += x[f.scope[p]] * model.layouts[a].strides[p];
            res.marginals_alpha[a][flat] += w;
        }
    } while (advance(x, model.cards));

    res.log_z = best + std::log(zscaled);
    for (auto& t : res.marginals_i) t /= zscaled;
    for (auto& t : res.marginals_alpha) t /= zscaled;
    return res;
}

// ---- variable elimination ----------------------------------------------

namespace {

struct VeTable {
    std::vector<int> scope;  // sorted
    Table vals;              // log domain
};

VeTable multiply(const Model& model, const VeTable& a, const VeTable& b) {
    VeTable out;
    std::set_union(a.scope.begin(), a.scope.end(), b.scope.begin(), b.scope.end(),
                   std::back_inserter(out.scope));
    std::vector<int> sizes(out.scope.size());
    for (std::size_t p = 0; p < out.scope.size(); ++p) sizes[p] = model.cards[out.scope[p]];
    TableLayout lay = TableLayout::make(sizes);
    if (lay.total > kMaxVeTable)
        throw NumericError("ve_exact: induced width too large (table of " +
                           std::to_string(lay.total) + " entries; width " +
                           std::to_string(out.scope.size()) + ")");
    TableLayout la = TableLayout::make([&] {
        std::vector<int> s(a.scope.size());
        for (std::size_t p = 0; p < a.scope.size(); ++p) s[p] = model.cards[a.scope[p]];
        return s;
    }());
    TableLayout lb2 = TableLayout::make([&] {
        std::vector<int> s(b.scope.size());
        for (std::size_t p = 0; p < b.scope.size(); ++p) s[p] = model.cards[b.scope[p]];
        return s;
    }());
    // per out-scope position: stride into a's and b's tables (0 when the
    // variable is absent), walked by odometer instead of div/mod per entry
    const int k = static_cast<int>(out.scope.size());
    std::vector<std::int64_t> sa(k, 0), sb(k, 0);
    for (std::size_t p = 0; p < a.scope.size(); ++p) {
        const int q = static_cast<int>(std::lower_bound(out.scope.begin(), out.scope.end(),
                                                        a.scope[p]) -
                                       out.scope.begin());
        sa[q] = la.strides[p];
    }
    for (std::size_t p = 0; p < b.scope.size(); ++p) {
        const int q = static_cast<int>(std::lower_bound(out.scope.begin(), out.scope.end(),
                                                        b.scope[p]) -
                                       out.scope.begin());
        sb[q] = lb2.strides[p];
    }
    out.vals.resize(lay.total);
    std::vector<int> digit(k, 0);
    std::int64_t fa = 0, fb = 0;
    for (std::int64_t f = 0; f < lay.total; ++f) {
        out.vals[f] = a.vals[fa] + b.vals[fb];
        for (int p = k - 1; p >= 0; --p) {
            fa += sa[p];
            fb += sb[p];
            if (++digit[p] < lay.sizes[p]) break;
            fa -= sa[p] * lay.sizes[p];
            fb -= sb[p] * lay.sizes[p];
            digit[p] = 0;
        }
    }
    return out;
}

/// Sum (or max) out one variable. When maximizing, argmax[k] records the
/// eliminated state for each configuration k of the remaining scope.
VeTable eliminate(const Model& model, const VeTable& t, int var, bool maximize,
                  std::vector<int>* argmax) {
    const auto it = std::lower_bound(t.scope.begin(), t.scope.end(), var);
    const int pos = static_cast<int>(it - t.scope.begin());
    VeTable out;
    out.scope = t.scope;
    out.scope.erase(out.scope.begin() + pos);
    std::vector<int> sizes(out.scope.size());
    for (std::size_t p = 0; p < out.scope.size(); ++p) sizes[p] = model.cards[out.scope[p]];
    TableLayout lay = TableLayout::make(sizes);
    std::vector<int> tsizes(t.scope.size());
    for (std::size_t p = 0; p < t.scope.size(); ++p) tsizes[p] = model.cards[t.scope[p]];
    TableLayout tlay = TableLayout::make(tsizes);

    out.vals = Table::Constant(lay.total, kNegInf);
    if (argmax) argmax->assign(lay.total, 0);
    std::vector<ScaledLse> acc;
    if (!maximize) acc.assign(lay.total, ScaledLse(1.0));

    const int tk = static_cast<int>(t.scope.size());
    std::vector<std::int64_t> sr(tk, 0);  // stride into the reduced table
    for (int p = 0, q = 0; p < tk; ++p) {
        if (p == pos) continue;
        sr[p] = lay.strides[q++];
    }
    std::vector<int> digit(tk, 0);
    std::int64_t rest = 0;
    for (std::int64_t f = 0; f < tlay.total; ++f) {
        if (maximize) {
            if (t.vals[f] > out.vals[rest]) {
                out.vals[rest] = t.vals[f];
                if (argmax) (*argmax)[rest] = digit[pos];
            }
        } else {
            acc[rest].add(t.vals[f]);
        }
        for (int p = tk - 1; p >= 0; --p) {
            rest += sr[p];
            if (++digit[p] < tlay.sizes[p]) break;
            rest -= sr[p] * tlay.sizes[p];
            digit[p] = 0;
        }
    }
    if (!maximize)
        for (std::int64_t k = 0; k < lay.total; ++k) out.vals[k] = acc[k].value();
    return out;
}

std::vector<VeTable> initial_tables(const Model& model) {
    std::vector<VeTable> tabs;
    tabs.reserve(model.num_vars() + model.num_factors());
    for (int i = 0; i < model.num_vars(); ++i) tabs.push_back({{i}, model.log_phi[i]});
    for (int a = 0; a < model.num_factors(); ++a)
        tabs.push_back({model.factors[a].scope, model.factors[a].log_psi});
    return tabs;
}

std::vector<int> min_degree_order(const Model& model) {
    const int n = model.num_vars();
    std::vector<std::set<int>> nbr(n);
    for (const Factor& f : model.factors)
        for (int u : f.scope)
            for (int v : f.scope)
                if (u != v) nbr[u].insert(v);
    std::vector<char> done(n, 0);
    std::vector<int> order;
    order.reserve(n);
    for (int step = 0; step < n; ++step) {
        int best = -1;
        std::size_t best_deg = 0;
        for (int i = 0; i < n; ++i) {
            if (done[i]) continue;
            if (best < 0 || nbr[i].size() < best_deg) {
                best = i;
                best_deg = nbr[i].size();
            }
        }
        order.push_back(best);
        done[best] = 1;
        // connect the remaining neighborhood
        std::vector<int> live;
        for (int v : nbr[best])
            if (!done[v]) live.push_back(v);
        for (int u : live)
            for (int v : live)
                if (u != v) nbr[u].insert(v);
        for (int u : live) nbr[u].erase(best);
    }
    return order;
}

/// Eliminate `targets` == false variables; returns leftover tables (their
/// scopes are subsets of the target set) plus the scalar constant from
/// fully-eliminated components. Order restricted to non-target variables.
struct VeRun {
    std::vector<VeTable> leftovers;
    double constant = 0.0;  // log of the product of scalar leftovers
};

VeRun run_sum_ve(const Model& model, const std::vector<int>& order,
                 const std::vector<char>& keep) {
    std::vector<VeTable> tabs = initial_tables(model);
    for (int var : order) {
        if (keep[var]) continue;
        VeTable bucket;
        bool have = false;
        std::vector<VeTable> rest;
        for (auto& t : tabs) {
            if (std::binary_search(t.scope.begin(), t.scope.end(), var)) {
                bucket = have ? multiply(model, bucket, t) : std::move(t);
                have = true;
            } else {
                rest.push_back(std::move(t));
            }
        }
        VeTable reduced = eliminate(model, bucket, var, false, nullptr);
        rest.push_back(std::move(reduced));
        tabs = std::move(rest);
    }
    VeRun out;
    for (auto& t : tabs) {
        if (t.scope.empty())
            out.constant += t.vals[0];
        else
            out.leftovers.push_back(std::move(t));
    }
    return out;
}

Table query_marginal(const Model& model, const std::vector<int>& order,
                     const std::vector<int>& target_scope) {
    std::vector<char> keep(model.num_vars(), 0);
    for (int v : target_scope) keep[v] = 1;
    VeRun ve = run_sum_ve(model, order, keep);
    VeTable joint{{}, Table::Zero(1)};
    joint.scope.clear();
    bool have = false;
    for (auto& t : ve.leftovers) {
        joint = have ? multiply(model, joint, t) : std::move(t);
        have = true;
    }
    if (!have)
        throw NumericError("ve_exact: no table left for the queried scope");
    // expand to the full requested scope if leftovers missed a variable
    for (int v : target_scope)
        if (!std::binary_search(joint.scope.begin(), joint.scope.end(), v))
            joint = multiply(model, joint, VeTable{{v}, Table::Zero(model.cards[v])});
    const double z = log_sum_exp(joint.vals);
    if (z == kNegInf) throw NumericError("ve_exact: model has no feasible configuration");
    Table out(joint.vals.size());
    for (Eigen::Index k = 0; k < out.size(); ++k)
        out[k] = joint.vals[k] == kNegInf ? 0.0 : std::exp(joint.vals[k] - z);
    return out;
}

}  // namespace

ExactResult ve_exact(const Model& model, const std::vector<int>* elimination_order) {
    std::vector<int> order;
    if (elimination_order) {
        order = *elimination_order;
        std::vector<char> seen(model.num_vars(), 0);
        if (static_cast<int>(order.size()) != model.num_vars())
            throw ValidationError("ve_exact: order must list every variable once");
        for (int v : order) {
            if (v < 0 || v >= model.num_vars() || seen[v])
                throw ValidationError("ve_exact: order must list every variable once");
            seen[v] = 1;
        }
    } else {
        order = min_degree_order(model);
    }

    ExactResult res;

    // log Z
    {
        std::vector<char> keep(model.num_vars(), 0);
        VeRun ve = run_sum_ve(model, order, keep);
        res.log_z = ve.constant;
        if (res.log_z == kNegInf)
            throw NumericError("ve_exact: model has no feasible configuration");
    }

    // marginals, one elimination per query
    res.marginals_i.resize(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i)
        res.marginals_i[i] = query_marginal(model, order, {i});
    res.marginals_alpha.resize(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a)
        res.marginals_alpha[a] = query_marginal(model, order, model.factors[a].scope);

    // MAP by max-elimination with traceback
    {
        std::vector<VeTable> tabs = initial_tables(model);
        struct Step {
            int var;
            std::vector<int> sep_scope;
            std::vector<int> argmax;
        };
        std::vector<Step> steps;
        double constant = 0.0;
        for (int var : order) {
            VeTable bucket;
            bool have = false;
            std::vector<VeTable> rest;
            for (auto& t : tabs) {
                if (std::binary_search(t.scope.begin(), t.scope.end(), var)) {
                    bucket = have ? multiply(model, bucket, t) : std::move(t);
                    have = true;
                } else {
                    rest.push_back(std::move(t));
                }
            }
            Step step;
            step.var = var;
            VeTable reduced = eliminate(model, bucket, var, true, &step.argmax);
            step.sep_scope = reduced.scope;
            steps.push_back(std::move(step));
            if (reduced.scope.empty())
                constant += reduced.vals[0];
            else
                rest.push_back(std::move(reduced));
            tabs = std::move(rest);
        }
        if (constant == kNegInf)
            throw NumericError("ve_exact: model has no feasible configuration");
        res.map_energy = -constant;
        res.map_assignment.states.assign(model.num_vars(), 0);
        for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
            std::vector<int> sizes(it->sep_scope.size());
            for (std::size_t p = 0; p < it->sep_scope.size(); ++p)
                sizes[p] = model.cards[it->sep_scope[p]];
            TableLayout lay = TableLayout::make(sizes);
            std::vector<int> sep_states(it->sep_scope.size());
            for (std::size_t p = 0; p < it->sep_scope.size(); ++p)
                sep_states[p] = res.map_assignment.states[it->sep_scope[p]];
            res.map_assignment.states[it->var] = it->argmax[lay.flat_of(sep_states)];
        }
    }
    return res;
}

std::vector<Table> ve_singleton_marginals(const Model& model,
                                          const std::vector<int>* elimination_order) {
    std::vector<int> order =
        elimination_order ? *elimination_order : min_degree_order(model);
    std::vector<Table> out(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i) out[i] = query_marginal(model, order, {i});
    return out;
}

BeliefSet beliefs_from_exact(const Model& model, const ExactResult& exact) {
    BeliefSet b;
    b.b_alpha_available = true;
    b.log_b_i.resize(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i) {
        Table t(exact.marginals_i[i].size());
        for (Eigen::Index k = 0; k < t.size(); ++k)
            t[k] = exact.marginals_i[i][k] > 0.0 ? std::log(exact.marginals_i[i][k]) : kNegInf;
        b.log_b_i[i] = std::move(t);
    }
    b.log_b_alpha.resize(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a) {
        Table t(exact.marginals_alpha[a].size());
        for (Eigen::Index k = 0; k < t.size(); ++k)
            t[k] = exact.marginals_alpha[a][k] > 0.0 ? std::log(exact.marginals_alpha[a][k])
                                                     : kNegInf;
        b.log_b_alpha[a] = std::move(t);
    }
    b.consistency_residual = consistency_residual(model, b);
    double sr = 0.0;
    for (const Table& t : b.log_b_i) sr = std::max(sr, std::abs(std::expm1(log_sum_exp(t))));
    for (const Table& t : b.log_b_alpha)
        sr = std::max(sr, std::abs(std::expm1(log_sum_exp(t))));
    b.simplex_residual = sr;
    return b;
}

}  // namespace normprod
