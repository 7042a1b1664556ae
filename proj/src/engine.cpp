#include "normprod/engine.hpp"

#include <cmath>
#include <cstdio>

namespace normprod {

namespace {

std::string fmt12(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

/// log psi_a + sum over scope positions q != skip of log_n[a][q];
/// skip < 0 sums everything.
Table combined_table(const Model& model, const MessageState& state, int a, int skip) {
    Table t = model.factors[a].log_psi;
    const int arity = static_cast<int>(model.factors[a].scope.size());
    for (int q = 0; q < arity; ++q) {
        if (q == skip) continue;
        t += state.log_n[a][q];
    }
    return t;
}

/// m_{a->i}(x_i) = scale * log sum_{x_a \ x_i} exp(t(x_a)/scale),
/// the log-domain L_{1/scale} norm; scale == 0 is the max.
Table message_m_from_combined(const Model& model, int a, int pos, const Table& t, double scale) {
    const TableLayout& lay = model.layouts[a];
    const int ni = lay.sizes[pos];
    std::vector<ScaledLse> acc(ni, ScaledLse(scale));
    for (std::int64_t f = 0; f < lay.total; ++f) acc[lay.coord(f, pos)].add(t[f]);
    Table m(ni);
    for (int k = 0; k < ni; ++k) m[k] = acc[k].value();
    return m;
}

double hat_ci_of(const Model& model, const CountingNumbers& cn, int i) {
    double h = cn.c_i[i];
    for (const Incidence& inc : model.var_to_factors[i]) h += cn.c_alpha[inc.factor];
    return h;
}

void check_block_pre(const Model& model, const CountingNumbers& cn, double eps, int i,
                     double hat_ci) {
    if (!(hat_ci > 0.0))
        throw ValidationError("update_block: hat_c_i <= 0 at variable " + std::to_string(i));
    const auto& inc = model.var_to_factors[i];
    for (std::size_t p = 0; p < inc.size(); ++p) {
        const double hca = cn.hat_c_ia(inc[p].factor, i, static_cast<int>(p));
        if (eps > 0.0 && !(hca > 0.0))
            throw ValidationError("update_block: eps > 0 requires hat_c_ia > 0 (variable " +
                                  std::to_string(i) + ", factor " +
                                  std::to_string(inc[p].factor) + ")");
        if (eps == 0.0 && hca == 0.0 &&
            (cn.c_alpha[inc[p].factor] != 0.0 || cn.c_i_alpha[i][p] != 0.0))
            throw ValidationError("update_block: hat_c_ia == 0 divides the update (variable " +
                                  std::to_string(i) + ")");
    }
}

}  // namespace

MessageState init_messages(const Model& model) {
    MessageState s;
    s.log_m.resize(model.num_factors());
    s.log_n.resize(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a) {
        const int arity = static_cast<int>(model.factors[a].scope.size());
        s.log_m[a].resize(arity);
        s.log_n[a].resize(arity);
        for (int p = 0; p < arity; ++p) {
            s.log_m[a][p] = Table::Zero(model.layouts[a].sizes[p]);
            s.log_n[a][p] = Table::Zero(model.layouts[a].total);
        }
    }
    return s;
}

void update_block(const Model& model, const CountingNumbers& cn, double eps,
                  MessageState& state, int i, double* max_abs_delta) {
    if (eps < 0.0) throw ValidationError("update_block: eps must be >= 0");
    const double hat_ci = hat_ci_of(model, cn, i);
    check_block_pre(model, cn, eps, i, hat_ci);

    const auto& inc = model.var_to_factors[i];
    if (inc.empty()) return;
    const int deg = static_cast<int>(inc.size());

    // step (a): refresh every incoming m from the current n of the others
    std::vector<Table> tcache(deg);
    for (int p = 0; p < deg; ++p) {
        const int a = inc[p].factor;
        const double hca = cn.hat_c_ia(a, i, p);
        tcache[p] = combined_table(model, state, a, inc[p].pos);
        state.log_m[a][inc[p].pos] =
            message_m_from_combined(model, a, inc[p].pos, tcache[p], eps * hca);
    }

    // g(x_i) = (log phi_i + sum_b log m_{b->i}) / hat_c_i
    Table g = model.log_phi[i];
    for (int p = 0; p < deg; ++p) g += state.log_m[inc[p].factor][inc[p].pos];
    g /= hat_ci;

    // step (b): rewrite every outgoing n, renormalized to max-log 0.
    // Terms whose counting weight is zero are dropped before touching any
    // -inf entries (the 0 ln 0 convention); a -inf under a nonzero weight
    // kills the configuration.
    for (int p = 0; p < deg; ++p) {
        const int a = inc[p].factor;
        const int pos = inc[p].pos;
        const double ca = cn.c_alpha[a];
        const double cia = cn.c_i_alpha[i][p];
        const double hca = ca + cia;
        const double w2 = (cia == 0.0) ? 0.0 : cia / hca;
        const Table& m = state.log_m[a][pos];
        const Table& t = tcache[p];
        const TableLayout& lay = model.layouts[a];
        Table fresh(lay.total);
        for (std::int64_t f = 0; f < lay.total; ++f) {
            double v = 0.0;
            bool dead = false;
            if (ca != 0.0) {
                const double gx = g[lay.coord(f, pos)];
                if (gx == kNegInf)
                    dead = true;
                else
                    v += ca * (gx - m[lay.coord(f, pos)] / hca);
            }
            if (w2 != 0.0) {
                if (t[f] == kNegInf)
                    dead = true;
                else
                    v -= w2 * t[f];
            }
            fresh[f] = dead ? kNegInf : v;
        }
        double mx = kNegInf;
        for (std::int64_t f = 0; f < lay.total; ++f) {
            if (std::isnan(fresh[f]))
                throw NumericError("update_block: NaN in n message (variable " +
                                   std::to_string(i) + ", factor " + std::to_string(a) + ")");
            if (fresh[f] > mx) mx = fresh[f];
        }
        if (mx == kNegInf)
            throw NumericError("update_block: all configurations forbidden for variable " +
                               std::to_string(i) + ", factor " + std::to_string(a) +
                               "; model is infeasible");
        Table& n = state.log_n[a][pos];
        for (std::int64_t f = 0; f < lay.total; ++f) {
            const double nv = (fresh[f] == kNegInf) ? kNegInf : fresh[f] - mx;
            if (max_abs_delta) {
                double d;
                if (nv == n[f])
                    d = 0.0;  // covers the -inf == -inf case
                else
                    d = std::abs(nv - n[f]);
                if (d > *max_abs_delta) *max_abs_delta = d;
            }
            n[f] = nv;
        }
    }
}

BeliefSet beliefs_from_messages(const Model& model, const CountingNumbers& cn, double eps,
                                const MessageState& state) {
    check_shapes(model, cn);
    if (eps < 0.0) throw ValidationError("beliefs_from_messages: eps must be >= 0");
    BeliefSet out;
    out.log_b_i.resize(model.num_vars());
    out.log_b_alpha.resize(model.num_factors());

    // fresh m for every directed edge
    std::vector<std::vector<Table>> m(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a) {
        const int arity = static_cast<int>(model.factors[a].scope.size());
        m[a].resize(arity);
        for (int p = 0; p < arity; ++p) {
            const int i = model.factors[a].scope[p];
            int p_in_ni = -1;
            const auto& ni = model.var_to_factors[i];
            for (std::size_t q = 0; q < ni.size(); ++q)
                if (ni[q].factor == a) p_in_ni = static_cast<int>(q);
            const double hca = cn.hat_c_ia(a, i, p_in_ni);
            if (eps > 0.0 && !(hca > 0.0))
                throw ValidationError("beliefs_from_messages: eps > 0 requires hat_c_ia > 0");
            const Table t = combined_table(model, state, a, p);
            m[a][p] = message_m_from_combined(model, a, p, t, eps * hca);
        }
    }

    for (int i = 0; i < model.num_vars(); ++i) {
        const double hat_ci = hat_ci_of(model, cn, i);
        if (!(hat_ci > 0.0))
            throw ValidationError("beliefs_from_messages: hat_c_i <= 0 at variable " +
                                  std::to_string(i));
        Table v = model.log_phi[i];
        for (const Incidence& inc : model.var_to_factors[i]) {
            int p_in_scope = inc.pos;
            v += m[inc.factor][p_in_scope];
        }
        v /= hat_ci;
        if (eps > 0.0) {
            v /= eps;
            const double z = log_sum_exp(v);
            if (z == kNegInf)
                throw NumericError("beliefs_from_messages: variable " + std::to_string(i) +
                                   " has no feasible state");
            out.log_b_i[i] = v - z;
        } else {
            double mx = kNegInf;
            for (Eigen::Index k = 0; k < v.size(); ++k)
                if (v[k] > mx) mx = v[k];
            if (mx == kNegInf)
                throw NumericError("beliefs_from_messages: variable " + std::to_string(i) +
                                   " has no feasible state");
            int r = 0;
            for (Eigen::Index k = 0; k < v.size(); ++k)
                if (v[k] == mx) ++r;
            Table b(v.size());
            for (Eigen::Index k = 0; k < v.size(); ++k)
                b[k] = (v[k] == mx) ? -std::log(static_cast<double>(r)) : kNegInf;
            out.log_b_i[i] = std::move(b);
        }
    }

    out.b_alpha_available = true;
    if (eps > 0.0)
        for (int a = 0; a < model.num_factors(); ++a)
            if (!(cn.c_alpha[a] > 0.0)) out.b_alpha_available = false;

    if (out.b_alpha_available) {
        for (int a = 0; a < model.num_factors(); ++a) {
            Table u = combined_table(model, state, a, -1);
            if (eps > 0.0) {
                u /= eps * cn.c_alpha[a];
                const double z = log_sum_exp(u);
                if (z == kNegInf)
                    throw NumericError("beliefs_from_messages: factor " + std::to_string(a) +
                                       " has no feasible configuration");
                out.log_b_alpha[a] = u - z;
            } else {
                double mx = kNegInf;
                for (Eigen::Index k = 0; k < u.size(); ++k)
                    if (u[k] > mx) mx = u[k];
                if (mx == kNegInf)
                    throw NumericError("beliefs_from_messages: factor " + std::to_string(a) +
                                       " has no feasible configuration");
                int r = 0;
                for (Eigen::Index k = 0; k < u.size(); ++k)
                    if (u[k] == mx) ++r;
                Table b(u.size());
                for (Eigen::Index k = 0; k < u.size(); ++k)
                    b[k] = (u[k] == mx) ? -std::log(static_cast<double>(r)) : kNegInf;
                out.log_b_alpha[a] = std::move(b);
            }
        }
        out.consistency_residual = consistency_residual(model, out);
    } else {
        out.log_b_alpha.clear();
        out.consistency_residual = kNaN;
    }

    double sr = 0.0;
    for (const Table& t : out.log_b_i) sr = std::max(sr, std::abs(std::expm1(log_sum_exp(t))));
    for (const Table& t : out.log_b_alpha)
        sr = std::max(sr, std::abs(std::expm1(log_sum_exp(t))));
    out.simplex_residual = sr;
    return out;
}

double dual_objective(const Model& model, const CountingNumbers& cn, double eps,
                      const MessageState& state) {
    if (classify(model, cn) != CountingClass::convex)
        throw ValidationError("dual_objective: undefined for non-convex counting numbers");
    if (eps < 0.0) throw ValidationError("dual_objective: eps must be >= 0");

    double q = 0.0;
    // f* = sum_a  eps c_a * log sum_{x_a} exp((log psi + sum_i log n)/ (eps c_a))
    for (int a = 0; a < model.num_factors(); ++a) {
        const Table u = combined_table(model, state, a, -1);
        const double val = scaled_log_sum_exp(u, eps * cn.c_alpha[a]);
        if (val == kNegInf)
            throw NumericError("dual_objective: factor " + std::to_string(a) +
                               " has no feasible configuration");
        q -= val;
    }
    // h*_i: inner norms over x_a \ x_i of exp(-log n), outer norm over x_i,
    // with dead configurations (log n = -inf) excluded from the inner norm
    for (int i = 0; i < model.num_vars(); ++i) {
        Table outer = model.log_phi[i];
        const auto& inc = model.var_to_factors[i];
        for (std::size_t p = 0; p < inc.size(); ++p) {
            const int a = inc[p].factor;
            const int pos = inc[p].pos;
            const TableLayout& lay = model.layouts[a];
            const Table& n = state.log_n[a][pos];
            const double scale = eps * cn.c_i_alpha[i][p];
            std::vector<ScaledLse> acc(model.cards[i], ScaledLse(scale));
            for (std::int64_t f = 0; f < lay.total; ++f) {
                if (n[f] == kNegInf) continue;
                acc[lay.coord(f, pos)].add(-n[f]);
            }
            for (int k = 0; k < model.cards[i]; ++k) {
                if (acc[k].empty())
                    outer[k] = kNegInf;  // state k is dead for this factor
                else if (outer[k] != kNegInf)
                    outer[k] += acc[k].value();
            }
        }
        const double val = scaled_log_sum_exp(outer, eps * cn.c_i[i]);
        if (val == kNegInf)
            throw NumericError("dual_objective: variable " + std::to_string(i) +
                               " has no feasible state");
        q -= val;
    }
    if (std::isnan(q)) throw NumericError("dual_objective: NaN encountered");
    return q;
}

double linear_energy(const Model& model, const BeliefSet& beliefs) {
    double e = 0.0;
    for (int i = 0; i < model.num_vars(); ++i) {
        const Table& lb = beliefs.log_b_i[i];
        for (Eigen::Index k = 0; k < lb.size(); ++k) {
            if (lb[k] == kNegInf) continue;
            const double theta = -model.log_phi[i][k];
            if (theta == kPosInf) return kPosInf;
            e += theta * std::exp(lb[k]);
        }
    }
    if (!beliefs.b_alpha_available)
        throw ValidationError("linear_energy: factor beliefs unavailable");
    for (int a = 0; a < model.num_factors(); ++a) {
        const Table& lb = beliefs.log_b_alpha[a];
        for (Eigen::Index k = 0; k < lb.size(); ++k) {
            if (lb[k] == kNegInf) continue;
            const double theta = -model.factors[a].log_psi[k];
            if (theta == kPosInf) return kPosInf;
            e += theta * std::exp(lb[k]);
        }
    }
    return e;
}

double primal_objective(const Model& model, const CountingNumbers& cn, double eps,
                        const BeliefSet& beliefs) {
    check_shapes(model, cn);
    const double e = linear_energy(model, beliefs);
    if (eps == 0.0) return e;

    double htilde = 0.0;
    std::vector<double> h_i(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i) {
        h_i[i] = entropy_from_log(beliefs.log_b_i[i]);
        htilde += cn.c_i[i] * h_i[i];
    }
    std::vector<double> h_a(model.num_factors());
    for (int a = 0; a < model.num_factors(); ++a) {
        h_a[a] = entropy_from_log(beliefs.log_b_alpha[a]);
        htilde += cn.c_alpha[a] * h_a[a];
    }
    for (int i = 0; i < model.num_vars(); ++i) {
        const auto& inc = model.var_to_factors[i];
        for (std::size_t p = 0; p < inc.size(); ++p)
            htilde += cn.c_i_alpha[i][p] * (h_a[inc[p].factor] - h_i[i]);
    }
    return e - eps * htilde;
}

double consistency_residual(const Model& model, const BeliefSet& beliefs) {
    if (!beliefs.b_alpha_available)
        throw ValidationError("consistency_residual: factor beliefs unavailable");
    double res = 0.0;
    for (int a = 0; a < model.num_factors(); ++a) {
        const TableLayout& lay = model.layouts[a];
        const Table& lb = beliefs.log_b_alpha[a];
        for (int p = 0; p < static_cast<int>(model.factors[a].scope.size()); ++p) {
            const int i = model.factors[a].scope[p];
            Eigen::ArrayXd marg = Eigen::ArrayXd::Zero(model.cards[i]);
            for (std::int64_t f = 0; f < lay.total; ++f)
                if (lb[f] != kNegInf) marg[lay.coord(f, p)] += std::exp(lb[f]);
            for (int k = 0; k < model.cards[i]; ++k) {
                const double bi =
                    beliefs.log_b_i[i][k] == kNegInf ? 0.0 : std::exp(beliefs.log_b_i[i][k]);
                res = std::max(res, std::abs(marg[k] - bi));
            }
        }
    }
    return res;
}

RunOutput run(const Model& model, const CountingNumbers& cn, const RunConfig& config,
              const MessageState* warm_start) {
    check_shapes(model, cn);
    if (config.epsilon < 0.0) throw ValidationError("run: epsilon must be >= 0");
    if (!(config.tol > 0.0)) throw ValidationError("run: tol must be > 0");
    if (config.max_sweeps < 1) throw ValidationError("run: max_sweeps must be >= 1");
    for (int i = 0; i < model.num_vars(); ++i)
        if (!(hat_ci_of(model, cn, i) > 0.0))
            throw ValidationError("run: hat_c_i <= 0 at variable " + std::to_string(i));

    const bool convex = classify(model, cn) == CountingClass::convex;
    ConvergenceMetric metric = config.metric;
    if (metric == ConvergenceMetric::auto_default)
        metric = (config.epsilon == 0.0 && convex) ? ConvergenceMetric::dual_delta
                                                   : ConvergenceMetric::message_delta;
    if (metric == ConvergenceMetric::dual_delta && !convex)
        throw ValidationError("run: dual_delta metric needs a convex counting setting");

    RunOutput out;
    out.state = warm_start ? *warm_start : init_messages(model);
    RunReport& rep = out.report;

    double prev_dual = kNaN;
    const double eps = config.epsilon;

    for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (int i = 0; i < model.num_vars(); ++i)
            update_block(model, cn, eps, out.state, i, &max_delta);
        rep.sweeps_used = sweep;

        double dual = kNaN;
        bool have_dual = false;
        bool converged = false;
        if (metric == ConvergenceMetric::dual_delta) {
            dual = dual_objective(model, cn, eps, out.state);
            have_dual = true;
            if (!std::isnan(prev_dual) && std::abs(dual - prev_dual) < config.tol)
                converged = true;
            prev_dual = dual;
        } else {
            converged = max_delta < config.tol;
        }

        const bool last = converged || sweep == config.max_sweeps;
        if (config.trace_every > 0 && (sweep % config.trace_every == 0 || last)) {
            if (!have_dual && convex) dual = dual_objective(model, cn, eps, out.state);
            const BeliefSet bel = beliefs_from_messages(model, cn, eps, out.state);
            const double primal =
                bel.b_alpha_available ? primal_objective(model, cn, eps, bel) : kNaN;
            rep.trace.push_back({sweep, dual, primal, max_delta});
        }
        if (converged) {
            rep.converged = true;
            break;
        }
    }
    rep.termination = rep.converged ? "converged" : "max_sweeps";

    out.beliefs = beliefs_from_messages(model, cn, eps, out.state);
    rep.final_consistency_residual = out.beliefs.consistency_residual;
    rep.final_simplex_residual = out.beliefs.simplex_residual;
    return out;
}

std::string trace_csv(const RunReport& report) {
    std::string out = "sweep,dual,primal,max_delta\n";
    for (const TraceRow& r : report.trace)
        out += std::to_string(r.sweep) + "," + fmt12(r.dual) + "," + fmt12(r.primal) + "," +
               fmt12(r.max_delta) + "\n";
    return out;
}

std::string beliefs_csv(const Model& model, const BeliefSet& beliefs,
                        const std::string& source) {
    std::string out = "kind,index,state_tuple,prob,source\n";
    for (int i = 0; i < model.num_vars(); ++i) {
        const Table& lb = beliefs.log_b_i[i];
        for (Eigen::Index k = 0; k < lb.size(); ++k) {
            const double p = lb[k] == kNegInf ? 0.0 : std::exp(lb[k]);
            out += "var," + std::to_string(i) + "," + std::to_string(k) + "," + fmt12(p) + "," +
                   source + "\n";
        }
    }
    if (beliefs.b_alpha_available) {
        for (int a = 0; a < static_cast<int>(beliefs.log_b_alpha.size()); ++a) {
            const Table& lb = beliefs.log_b_alpha[a];
            const TableLayout& lay = model.layouts[a];
            for (std::int64_t f = 0; f < lay.total; ++f) {
                std::string tup;
                for (std::size_t p = 0; p < lay.sizes.size(); ++p) {
                    if (p) tup += ';';
                    tup += std::to_string(lay.coord(f, static_cast<int>(p)));
                }
                const double pr = lb[f] == kNegInf ? 0.0 : std::exp(lb[f]);
                out += "factor," + std::to_string(a) + "," + tup + "," + fmt12(pr) + "," +
                       source + "\n";
            }
        }
    }
    return out;
}

}  // namespace normprod
