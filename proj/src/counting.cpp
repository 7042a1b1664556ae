#include "normprod/counting.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <set>

#include <nlohmann/json.hpp>

namespace normprod {

void check_shapes(const Model& model, const CountingNumbers& cn) {
    if (cn.c_alpha.size() != model.num_factors())
        throw ValidationError("counting numbers: c_alpha size mismatch");
    if (cn.c_i.size() != model.num_vars())
        throw ValidationError("counting numbers: c_i size mismatch");
    if (static_cast<int>(cn.c_i_alpha.size()) != model.num_vars())
        throw ValidationError("counting numbers: c_i_alpha size mismatch");
    for (int i = 0; i < model.num_vars(); ++i)
        if (cn.c_i_alpha[i].size() != static_cast<Eigen::Index>(model.var_to_factors[i].size()))
            throw ValidationError("counting numbers: c_i_alpha[" + std::to_string(i) +
                                  "] does not match N(i)");
}

Eigen::ArrayXd hat_c_i_all(const Model& model, const CountingNumbers& cn) {
    Eigen::ArrayXd hat = cn.c_i;
    for (int i = 0; i < model.num_vars(); ++i)
        for (const Incidence& inc : model.var_to_factors[i]) hat[i] += cn.c_alpha[inc.factor];
    return hat;
}

CountingClass classify(const Model& model, const CountingNumbers& cn) {
    check_shapes(model, cn);
    if ((cn.c_alpha <= 0.0).any()) return CountingClass::non_convex;
    if ((cn.c_i < 0.0).any()) return CountingClass::non_convex;
    for (const auto& row : cn.c_i_alpha)
        if ((row < 0.0).any()) return CountingClass::non_convex;
    return CountingClass::convex;
}

BarCoefficients bar_coefficients(const Model& model, const CountingNumbers& cn) {
    check_shapes(model, cn);
    BarCoefficients b;
    b.bar_c_alpha = cn.c_alpha;
    b.bar_c_i = cn.c_i;
    for (int i = 0; i < model.num_vars(); ++i) {
        const auto& inc = model.var_to_factors[i];
        for (std::size_t p = 0; p < inc.size(); ++p) {
            b.bar_c_alpha[inc[p].factor] += cn.c_i_alpha[i][p];
            b.bar_c_i[i] -= cn.c_i_alpha[i][p];
        }
    }
    return b;
}

CountingReport validate(const Model& model, const CountingNumbers& cn) {
    check_shapes(model, cn);
    CountingReport rep;
    rep.hat_c_i = hat_c_i_all(model, cn);
    rep.hat_c_i_positive = (rep.hat_c_i > 0.0).all();
    rep.bars = bar_coefficients(model, cn);
    rep.klass = CountingClass::convex;
    for (int a = 0; a < model.num_factors(); ++a) {
        if (cn.c_alpha[a] <= 0.0) {
            rep.klass = CountingClass::non_convex;
            rep.failure = "c_alpha[" + std::to_string(a) + "] <= 0";
            return rep;
        }
    }
    for (int i = 0; i < model.num_vars(); ++i) {
        if (cn.c_i[i] < 0.0) {
            rep.klass = CountingClass::non_convex;
            rep.failure = "c_i[" + std::to_string(i) + "] < 0";
            return rep;
        }
    }
    for (int i = 0; i < model.num_vars(); ++i) {
        for (Eigen::Index p = 0; p < cn.c_i_alpha[i].size(); ++p) {
            if (cn.c_i_alpha[i][p] < 0.0) {
                rep.klass = CountingClass::non_convex;
                rep.failure = "c_i_alpha[" + std::to_string(i) + "][" + std::to_string(p) + "] < 0";
                return rep;
            }
        }
    }
    return rep;
}

namespace {

CountingNumbers zeros_like(const Model& model) {
    CountingNumbers cn;
    cn.c_alpha = Eigen::ArrayXd::Zero(model.num_factors());
    cn.c_i = Eigen::ArrayXd::Zero(model.num_vars());
    cn.c_i_alpha.resize(model.num_vars());
    for (int i = 0; i < model.num_vars(); ++i)
        cn.c_i_alpha[i] = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(model.var_to_factors[i].size()));
    return cn;
}

void require_pairwise(const Model& model, const char* who) {
    for (int a = 0; a < model.num_factors(); ++a)
        if (model.factors[a].scope.size() != 2)
            throw ValidationError(std::string(who) + ": factor " + std::to_string(a) +
                                  " is not pairwise");
}

}  // namespace

CountingNumbers bethe(const Model& model) {
    CountingNumbers cn = zeros_like(model);
    cn.c_alpha.setConstant(1.0);
    for (int i = 0; i < model.num_vars(); ++i) cn.c_i[i] = 1.0 - model.degree(i);
    return cn;
}

CountingNumbers trivial_convex(const Model& model) {
    CountingNumbers cn = zeros_like(model);
    cn.c_alpha.setConstant(1.0);
    for (int i = 0; i < model.num_vars(); ++i)
        if (model.degree(i) == 0) cn.c_i[i] = 1.0;
    return cn;
}

CountingNumbers nmplp(const Model& model) {
    require_pairwise(model, "nmplp");
    CountingNumbers cn = zeros_like(model);
    cn.c_alpha.setConstant(1.0);
    for (int i = 0; i < model.num_vars(); ++i) cn.c_i[i] = (1.0 - model.degree(i)) / 2.0;
    return cn;
}

Eigen::ArrayXd spanning_tree_edge_probabilities(const Model& model) {
    require_pairwise(model, "spanning_tree_edge_probabilities");
    const int n = model.num_vars();
    const int m = model.num_factors();

    // connectivity
    if (n > 1) {
        std::vector<char> seen(n, 0);
        std::deque<int> queue{0};
        seen[0] = 1;
        int reached = 1;
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (const Incidence& inc : model.var_to_factors[u]) {
                for (int v : model.factors[inc.factor].scope) {
                    if (!seen[v]) {
                        seen[v] = 1;
                        ++reached;
                        queue.push_back(v);
                    }
                }
            }
        }
        if (reached != n)
            throw ValidationError("spanning_tree_edge_probabilities: graph is disconnected");
    }

    Eigen::ArrayXd rho(m);
    if (m == 0) return rho;

    // unit conductance per factor edge; parallel factors stack
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < m; ++a) {
        const int u = model.factors[a].scope[0];
        const int v = model.factors[a].scope[1];
        lap(u, u) += 1.0;
        lap(v, v) += 1.0;
        lap(u, v) -= 1.0;
        lap(v, u) -= 1.0;
    }
    // ground node 0; the reduced Laplacian of a connected graph is PD
    Eigen::MatrixXd reduced = lap.block(1, 1, n - 1, n - 1);
    Eigen::LLT<Eigen::MatrixXd> llt(reduced);
    if (llt.info() != Eigen::Success)
        throw NumericError("spanning_tree_edge_probabilities: Laplacian solve failed");

    for (int a = 0; a < m; ++a) {
        const int u = model.factors[a].scope[0];
        const int v = model.factors[a].scope[1];
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n - 1);
        if (u > 0) b[u - 1] = 1.0;
        if (v > 0) b[v - 1] = -1.0;
        const Eigen::VectorXd x = llt.solve(b);
        double r = 0.0;
        if (u > 0) r += x[u - 1];
        if (v > 0) r -= x[v - 1];
        if (!(r > 0.0) || r > 1.0 + 1e-9)
            throw NumericError("spanning_tree_edge_probabilities: resistance out of range");
        rho[a] = std::min(r, 1.0);
    }
    if (std::abs(rho.sum() - (n - 1)) > 1e-6)
        throw NumericError("spanning_tree_edge_probabilities: probabilities do not sum to n-1");
    return rho;
}

CountingNumbers trw_from_edge_probabilities(const Model& model, const Eigen::ArrayXd& rho) {
    require_pairwise(model, "trw_from_edge_probabilities");
    if (rho.size() != model.num_factors())
        throw ValidationError("trw_from_edge_probabilities: rho size mismatch");
    for (Eigen::Index a = 0; a < rho.size(); ++a)
        if (!(rho[a] > 0.0) || rho[a] > 1.0)
            throw ValidationError("trw_from_edge_probabilities: rho[" + std::to_string(a) +
                                  "] outside (0,1]");
    CountingNumbers cn = zeros_like(model);
    cn.c_alpha = rho;
    for (int i = 0; i < model.num_vars(); ++i) {
        double s = 0.0;
        for (const Incidence& inc : model.var_to_factors[i]) s += rho[inc.factor];
        cn.c_i[i] = 1.0 - s;
    }
    return cn;
}

CountingNumbers convexify(const Model& model, const CountingNumbers& input) {
    check_shapes(model, input);
    if ((input.c_alpha != 0.0).any())
        throw ValidationError("convexify: input must have c_alpha = 0 everywhere");
    if ((input.c_i < 0.0).any())
        throw ValidationError("convexify: input c_i must be >= 0");
    for (const auto& row : input.c_i_alpha)
        if ((row < 0.0).any()) throw ValidationError("convexify: input c_i_alpha must be >= 0");
    for (int i = 0; i < model.num_vars(); ++i) {
        const int d = model.degree(i);
        if (d == 0) continue;
        bool ok = false;
        for (Eigen::Index p = 0; p < input.c_i_alpha[i].size(); ++p)
            if (input.c_i[i] / d + input.c_i_alpha[i][p] > 0.0) ok = true;
        if (!ok)
            throw ValidationError("convexify: variable " + std::to_string(i) +
                                  " contributes no entropy mass");
    }

    CountingNumbers out = zeros_like(model);
    for (int i = 0; i < model.num_vars(); ++i) {
        const int d = model.degree(i);
        if (d == 0) {
            out.c_i[i] = input.c_i[i];
            continue;
        }
        const double share = input.c_i[i] / d;
        const auto& inc = model.var_to_factors[i];
        for (std::size_t p = 0; p < inc.size(); ++p) {
            const double cia = input.c_i_alpha[i][p];
            if (cia <= share) {
                out.c_alpha[inc[p].factor] += cia;
                out.c_i[i] += share - cia;
            } else {
                out.c_alpha[inc[p].factor] += share;
                out.c_i_alpha[i][p] += cia - share;
            }
        }
    }
    for (int a = 0; a < model.num_factors(); ++a)
        if (!(out.c_alpha[a] > 0.0))
            throw NumericError("convexify: factor " + std::to_string(a) +
                               " received zero weight; input admits no convex rewrite");
    return out;
}

// ---- L2 uniformity heuristic -------------------------------------------
//
// Strictly convex QP (the ridge makes the Hessian PD) over an affine set
// intersected with coordinate lower bounds. Solved by a primal active-set
// method: each outer iteration solves the equality-constrained KKT system
// with the working set of bounds pinned, then steps as far as feasibility
// allows. A fixed-step projected-gradient scheme cannot resolve the 1e-9
// ridge tie-break in any practical number of iterations, which is why the
// KKT route is used.

namespace {

struct QpIndex {
    int m, n, dim;
    std::vector<int> ia_offset;  // per variable, into the c_ia block

    explicit QpIndex(const Model& model) {
        m = model.num_factors();
        n = model.num_vars();
        ia_offset.resize(n);
        int off = 0;
        for (int i = 0; i < n; ++i) {
            ia_offset[i] = off;
            off += model.degree(i);
        }
        dim = m + n + off;
    }
    int alpha(int a) const { return a; }
    int var(int i) const { return m + i; }
    int ia(int i, int p) const { return m + n + ia_offset[i] + p; }
};

CountingNumbers unpack(const Model& model, const QpIndex& ix, const Eigen::VectorXd& z) {
    CountingNumbers cn = zeros_like(model);
    for (int a = 0; a < ix.m; ++a) cn.c_alpha[a] = z[ix.alpha(a)];
    for (int i = 0; i < ix.n; ++i) cn.c_i[i] = z[ix.var(i)];
    for (int i = 0; i < ix.n; ++i)
        for (int p = 0; p < model.degree(i); ++p) cn.c_i_alpha[i][p] = z[ix.ia(i, p)];
    return cn;
}

}  // namespace

CountingNumbers l2_convex(const Model& model, double ridge, double tol, double alpha_floor) {
    if (ridge <= 0 || tol <= 0) throw ValidationError("l2_convex: ridge and tol must be > 0");
    if (!(alpha_floor > 0)) throw ValidationError("l2_convex: alpha_floor must be > 0");
    const QpIndex ix(model);
    const int D = ix.dim;
    const double kAlphaFloor = alpha_floor;

    // bar_c_alpha map and admissibility rows
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(ix.m, D);
    for (int a = 0; a < ix.m; ++a) B(a, ix.alpha(a)) = 1.0;
    for (int i = 0; i < ix.n; ++i)
        for (int p = 0; p < model.degree(i); ++p)
            B(model.var_to_factors[i][p].factor, ix.ia(i, p)) = 1.0;

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ix.n, D);
    for (int i = 0; i < ix.n; ++i) {
        A(i, ix.var(i)) = 1.0;
        for (const Incidence& inc : model.var_to_factors[i]) {
            A(i, ix.alpha(inc.factor)) += 1.0;
            const Factor& f = model.factors[inc.factor];
            for (int p = 0; p < static_cast<int>(f.scope.size()); ++p) {
                const int j = f.scope[p];
                if (j == i) continue;
                // position of this factor within N(j)
                const auto& nj = model.var_to_factors[j];
                for (std::size_t q = 0; q < nj.size(); ++q)
                    if (nj[q].factor == inc.factor) A(i, ix.ia(j, static_cast<int>(q))) += 1.0;
            }
        }
    }
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(ix.n);

    const Eigen::MatrixXd H =
        2.0 * (B.transpose() * B) + 2.0 * ridge * Eigen::MatrixXd::Identity(D, D);
    const Eigen::VectorXd g0 = -2.0 * B.transpose() * Eigen::VectorXd::Ones(ix.m);

    Eigen::VectorXd lb = Eigen::VectorXd::Zero(D);
    for (int a = 0; a < ix.m; ++a) lb[ix.alpha(a)] = kAlphaFloor;

    // closed-form feasible start: c_alpha at the floor, c_ia = 0,
    // c_i = 1 - floor * d_i
    Eigen::VectorXd z(D);
    for (int a = 0; a < ix.m; ++a) z[ix.alpha(a)] = kAlphaFloor;
    for (int i = 0; i < ix.n; ++i) {
        const double ci = 1.0 - kAlphaFloor * model.degree(i);
        if (ci < 0.0) throw NumericError("l2_convex: no feasible point above the c_alpha floor");
        z[ix.var(i)] = ci;
    }
    for (int i = 0; i < ix.n; ++i)
        for (int p = 0; p < model.degree(i); ++p) z[ix.ia(i, p)] = 0.0;

    // working set: start with just the c_alpha floor bounds (they are at the
    // floor in z0 and typically stay active on loopy graphs); c_i and c_ia
    // sit at their bounds but free, so the first solve moves them jointly
    std::vector<char> active(D, 0);
    for (int a = 0; a < ix.m; ++a) active[ix.alpha(a)] = 1;

    Eigen::VectorXd nu = Eigen::VectorXd::Zero(ix.n);
    bool optimal = false;

    for (int iter = 0; iter < 200 + 2 * D; ++iter) {
        std::vector<int> free;
        for (int k = 0; k < D; ++k)
            if (!active[k]) free.push_back(k);
        const int F = static_cast<int>(free.size());

        // KKT system for min 1/2 z'Hz + g0'z  s.t.  A z = b, z_working = lb
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(F + ix.n, F + ix.n);
        Eigen::VectorXd rhs(F + ix.n);
        Eigen::VectorXd zfix = Eigen::VectorXd::Zero(D);
        for (int k = 0; k < D; ++k)
            if (active[k]) zfix[k] = lb[k];
        const Eigen::VectorXd hfix = H * zfix;
        for (int r = 0; r < F; ++r) {
            for (int c = 0; c < F; ++c) kkt(r, c) = H(free[r], free[c]);
            for (int c = 0; c < ix.n; ++c) kkt(r, F + c) = A(c, free[r]);
            rhs[r] = -g0[free[r]] - hfix[free[r]];
        }
        const Eigen::VectorXd bres = b - A * zfix;
        for (int r = 0; r < ix.n; ++r) {
            for (int c = 0; c < F; ++c) kkt(F + r, c) = A(r, free[c]);
            rhs[F + r] = bres[r];
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
        Eigen::VectorXd sol = lu.solve(rhs);
        sol += lu.solve(rhs - kkt * sol);  // one refinement pass

        Eigen::VectorXd zstar = zfix;
        for (int r = 0; r < F; ++r) zstar[free[r]] = sol[r];
        for (int r = 0; r < ix.n; ++r) nu[r] = sol[F + r];

        // longest feasible step toward the subproblem optimum
        double gamma = 1.0;
        for (int k = 0; k < D; ++k) {
            if (active[k]) continue;
            const double dz = zstar[k] - z[k];
            if (dz < -1e-15 && zstar[k] < lb[k])
                gamma = std::min(gamma, (lb[k] - z[k]) / dz);
        }
        if (gamma < 1.0) {
            z += gamma * (zstar - z);
            bool added = false;
            for (int k = 0; k < D; ++k) {
                if (active[k]) continue;
                const double dz = zstar[k] - z[k];
                if (dz < -1e-15 && z[k] <= lb[k] + 1e-11) {
                    z[k] = lb[k];
                    active[k] = 1;
                    added = true;
                }
            }
            if (!added) throw NumericError("l2_convex: active-set solver stalled");
            continue;
        }
        z = zstar;

        // bound multipliers mu = grad f + A' nu on the working set must be
        // nonnegative at the optimum; release the worst violator
        const Eigen::VectorXd grad_l = H * z + g0 + A.transpose() * nu;
        int release = -1;
        double worst = -1e-9;
        for (int k = 0; k < D; ++k) {
            if (!active[k]) continue;
            if (grad_l[k] < worst) {
                worst = grad_l[k];
                release = k;
            }
        }
        if (release < 0) {
            optimal = true;
            break;
        }
        active[release] = 0;
    }
    if (!optimal) throw NumericError("l2_convex: active-set solver did not converge");

    // polish: exact projection back onto the equality set, then verify
    {
        Eigen::LDLT<Eigen::MatrixXd> aat((A * A.transpose()));
        const Eigen::VectorXd corr = A.transpose() * aat.solve(b - A * z);
        z += corr;
    }
    const double feas = (A * z - b).lpNorm<Eigen::Infinity>();
    if (feas > tol)
        throw NumericError("l2_convex: feasibility residual " + std::to_string(feas) +
                           " exceeds tol");
    for (int k = 0; k < D; ++k)
        if (z[k] < lb[k]) {
            if (z[k] < lb[k] - 1e-9)
                throw NumericError("l2_convex: bound violation after polish");
            z[k] = lb[k];
        }

    CountingNumbers cn = unpack(model, ix, z);
    if (classify(model, cn) != CountingClass::convex)
        throw NumericError("l2_convex: produced non-convex setting");
    return cn;
}

// ---- JSON file format ---------------------------------------------------

CountingNumbers read_counting_json(const Model& model, const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("counting file: ") + e.what());
    }
    if (!j.is_object() || !j.contains("c_alpha") || !j.contains("c_i"))
        throw ValidationError("counting file: need object with c_alpha, c_i arrays");
    CountingNumbers cn = zeros_like(model);
    const auto& ca = j["c_alpha"];
    const auto& ci = j["c_i"];
    if (!ca.is_array() || static_cast<int>(ca.size()) != model.num_factors())
        throw ValidationError("counting file: c_alpha must list every factor");
    if (!ci.is_array() || static_cast<int>(ci.size()) != model.num_vars())
        throw ValidationError("counting file: c_i must list every variable");
    for (int a = 0; a < model.num_factors(); ++a) cn.c_alpha[a] = ca[a].get<double>();
    for (int i = 0; i < model.num_vars(); ++i) cn.c_i[i] = ci[i].get<double>();
    if (j.contains("c_i_alpha")) {
        std::set<std::pair<int, int>> seen;
        for (const auto& entry : j["c_i_alpha"]) {
            if (!entry.is_array() || entry.size() != 3)
                throw ValidationError("counting file: c_i_alpha entries are [var, factor, value]");
            const int v = entry[0].get<int>();
            const int f = entry[1].get<int>();
            const double val = entry[2].get<double>();
            if (v < 0 || v >= model.num_vars() || f < 0 || f >= model.num_factors())
                throw ValidationError("counting file: c_i_alpha index out of range");
            if (!seen.insert({v, f}).second)
                throw ValidationError("counting file: duplicate c_i_alpha entry for (" +
                                      std::to_string(v) + "," + std::to_string(f) + ")");
            int pos = -1;
            const auto& nv = model.var_to_factors[v];
            for (std::size_t p = 0; p < nv.size(); ++p)
                if (nv[p].factor == f) pos = static_cast<int>(p);
            if (pos < 0)
                throw ValidationError("counting file: (" + std::to_string(v) + "," +
                                      std::to_string(f) + ") is not an incidence");
            cn.c_i_alpha[v][pos] = val;
        }
    }
    return cn;
}

std::string write_counting_json(const Model& model, const CountingNumbers& cn) {
    check_shapes(model, cn);
    nlohmann::json j;
    j["c_alpha"] = std::vector<double>(cn.c_alpha.data(), cn.c_alpha.data() + cn.c_alpha.size());
    j["c_i"] = std::vector<double>(cn.c_i.data(), cn.c_i.data() + cn.c_i.size());
    auto triples = nlohmann::json::array();
    for (int i = 0; i < model.num_vars(); ++i)
        for (std::size_t p = 0; p < model.var_to_factors[i].size(); ++p)
            triples.push_back({i, model.var_to_factors[i][p].factor, cn.c_i_alpha[i][p]});
    j["c_i_alpha"] = std::move(triples);
    return j.dump(2) + "\n";
}

}  // namespace normprod
