#include <doctest.h>

#include <cmath>
#include <thread>

#include "normprod/engine.hpp"
#include "normprod/oracle.hpp"
#include "normprod/rng.hpp"

using namespace normprod;

namespace {

Table tbl(std::initializer_list<double> linear) {
    Table t(static_cast<Eigen::Index>(linear.size()));
    Eigen::Index k = 0;
    for (double v : linear) t[k++] = std::log(v);
    return t;
}

/// Random tree over n variables with mixed-sign potentials.
Model random_tree(Rng& rng, int max_vars = 10, int max_card = 4) {
    const int n = 2 + static_cast<int>(rng.below(max_vars - 1));
    std::vector<int> cards(n);
    for (auto& c : cards) c = 2 + static_cast<int>(rng.below(max_card - 1));
    std::vector<Table> phi(n);
    for (int i = 0; i < n; ++i) {
        phi[i] = Table(cards[i]);
        for (int k = 0; k < cards[i]; ++k) phi[i][k] = rng.uniform(-1.0, 1.0);
    }
    std::vector<Factor> factors;
    for (int v = 1; v < n; ++v) {
        const int u = static_cast<int>(rng.below(v));
        Table t(static_cast<Eigen::Index>(cards[u]) * cards[v]);
        for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = rng.uniform(-1.5, 1.5);
        factors.push_back({{u, v}, std::move(t)});
    }
    std::sort(factors.begin(), factors.end(),
              [](const Factor& a, const Factor& b) { return a.scope < b.scope; });
    return build_model(cards, phi, factors, true);
}

Model single_pairwise(const Table& psi) {
    return build_model({2, 2}, {Table::Zero(2), Table::Zero(2)}, {{{0, 1}, psi}}, true);
}

}  // namespace

TEST_CASE("init_messages") {
    Model chain = build_model({2, 2, 2}, {Table::Zero(2), Table::Zero(2), Table::Zero(2)},
                              {{{0, 1}, tbl({1, 1, 1, 1})}, {{1, 2}, tbl({1, 1, 1, 1})}}, true);
    MessageState st = init_messages(chain);
    REQUIRE(st.log_n.size() == 2);
    for (int a = 0; a < 2; ++a)
        for (int p = 0; p < 2; ++p) {
            CHECK(st.log_n[a][p].size() == 4);
            CHECK((st.log_n[a][p] == 0.0).all());
        }
    MessageState st2 = init_messages(chain);
    for (int a = 0; a < 2; ++a)
        for (int p = 0; p < 2; ++p) CHECK((st.log_n[a][p] == st2.log_n[a][p]).all());
}

TEST_CASE("update_block message values from the closed form") {
    Model m = single_pairwise(tbl({1, 2, 3, 4}));
    CountingNumbers cb = bethe(m);

    MessageState st = init_messages(m);
    update_block(m, cb, 1.0, st, 0);
    CHECK(std::exp(st.log_m[0][0][0]) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::exp(st.log_m[0][0][1]) == doctest::Approx(7.0).epsilon(1e-12));

    MessageState st0 = init_messages(m);
    update_block(m, cb, 0.0, st0, 0);
    CHECK(std::exp(st0.log_m[0][0][0]) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::exp(st0.log_m[0][0][1]) == doctest::Approx(4.0).epsilon(1e-12));

    // power-sum with hat_c_ia = 2: m(0) = (1 + sqrt 2)^2
    CountingNumbers cp = bethe(m);
    cp.c_i_alpha[0][0] = 1.0;
    MessageState stp = init_messages(m);
    update_block(m, cp, 1.0, stp, 0);
    const double want = (1.0 + std::sqrt(2.0)) * (1.0 + std::sqrt(2.0));
    CHECK(std::exp(stp.log_m[0][0][0]) == doctest::Approx(want).epsilon(1e-12));

    // preconditions
    CountingNumbers bad = bethe(m);
    bad.c_i[0] = -2.0;  // hat_c_0 = -1
    MessageState stb = init_messages(m);
    CHECK_THROWS_AS(update_block(m, bad, 1.0, stb, 0), ValidationError);
    CountingNumbers bad2 = bethe(m);
    bad2.c_alpha[0] = -1.0;  // hat_c_ia <= 0 with eps > 0
    CHECK_THROWS_AS(update_block(m, bad2, 1.0, stb, 0), ValidationError);
}

TEST_CASE("n messages stay normalized to max-log zero") {
    Rng rng(8);
    Model m = random_tree(rng);
    CountingNumbers cn = trivial_convex(m);
    MessageState st = init_messages(m);
    for (int sweep = 0; sweep < 3; ++sweep)
        for (int i = 0; i < m.num_vars(); ++i) update_block(m, cn, 1.0, st, i);
    for (int a = 0; a < m.num_factors(); ++a)
        for (std::size_t p = 0; p < st.log_n[a].size(); ++p) {
            CHECK(st.log_n[a][p].maxCoeff() == 0.0);
            CHECK_FALSE(st.log_n[a][p].hasNaN());
        }
}

TEST_CASE("run on trees reproduces exact marginals (bethe, eps=1)") {
    Rng rng(2024);
    for (int trial = 0; trial < 12; ++trial) {
        Model m = random_tree(rng);
        RunConfig cfg;
        cfg.epsilon = 1.0;
        cfg.tol = 1e-10;
        RunOutput out = run(m, bethe(m), cfg);
        CHECK(out.report.converged);
        ExactResult ex = enumerate_exact(m);
        for (int i = 0; i < m.num_vars(); ++i)
            for (int k = 0; k < m.cards[i]; ++k)
                CHECK(std::abs(std::exp(out.beliefs.log_b_i[i][k]) - ex.marginals_i[i][k]) <=
                      1e-6);
        for (int a = 0; a < m.num_factors(); ++a)
            for (Eigen::Index k = 0; k < ex.marginals_alpha[a].size(); ++k)
                CHECK(std::abs(std::exp(out.beliefs.log_b_alpha[a][k]) -
                               ex.marginals_alpha[a][k]) <= 1e-6);
    }
}

TEST_CASE("single variable normalization") {
    Model m = build_model({2}, {tbl({1, 3})}, {}, true);
    RunConfig cfg;
    RunOutput out = run(m, bethe(m), cfg);
    CHECK(std::exp(out.beliefs.log_b_i[0][0]) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(std::exp(out.beliefs.log_b_i[0][1]) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("non-convergence is a legal outcome on hard mixed grids") {
    Model g = grid_model(10, 10, 2, FieldSpec::uniform(-0.05, 0.05), CouplingSpec::mixed(2.0),
                         123);
    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.max_sweeps = 300;
    RunOutput out = run(g, bethe(g), cfg);
    CHECK(out.report.sweeps_used <= 300);
    for (const Table& t : out.beliefs.log_b_i) CHECK_FALSE(t.hasNaN());
    CHECK(out.report.termination == (out.report.converged ? "converged" : "max_sweeps"));
}

TEST_CASE("beliefs at zero temperature follow the tie rule") {
    // no tie: clear argmax
    Model m = build_model({2}, {tbl({0.2, 0.8})}, {}, true);
    RunOutput out = run(m, bethe(m), {.epsilon = 0.0});
    CHECK(std::exp(out.beliefs.log_b_i[0][0]) == 0.0);
    CHECK(std::exp(out.beliefs.log_b_i[0][1]) == 1.0);

    // exact tie: 1/r each
    Model t = build_model({2}, {tbl({0.5, 0.5})}, {}, true);
    RunOutput out2 = run(t, bethe(t), {.epsilon = 0.0});
    CHECK(std::exp(out2.beliefs.log_b_i[0][0]) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::exp(out2.beliefs.log_b_i[0][1]) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("dual objective closed-form value and scaling invariance") {
    // single unary factor psi=[1,1] on one variable with phi=[1,1]:
    // q = -ln 2 = -ln Z
    Model m = build_model({2}, {tbl({1, 1})}, {{{0}, tbl({1, 1})}}, true);
    CountingNumbers cn = trivial_convex(m);
    MessageState st = init_messages(m);
    CHECK(dual_objective(m, cn, 1.0, st) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    // invariance under per-table constant shifts, including c_ia > 0 settings
    Rng rng(55);
    Model tree = random_tree(rng);
    for (CountingNumbers c : {trivial_convex(tree), l2_convex(tree)}) {
        MessageState s = init_messages(tree);
        for (int sweep = 0; sweep < 2; ++sweep)
            for (int i = 0; i < tree.num_vars(); ++i) update_block(tree, c, 1.0, s, i);
        const double q0 = dual_objective(tree, c, 1.0, s);
        MessageState shifted = s;
        shifted.log_n[0][0] += 3.7;
        CHECK(dual_objective(tree, c, 1.0, shifted) == doctest::Approx(q0).epsilon(1e-12));
        shifted.log_n.back().back() -= 1.3;
        CHECK(dual_objective(tree, c, 1.0, shifted) == doctest::Approx(q0).epsilon(1e-12));
        // eps = 0 variant
        const double z0 = dual_objective(tree, c, 0.0, s);
        CHECK(dual_objective(tree, c, 0.0, shifted) == doctest::Approx(z0).epsilon(1e-12));
    }

    // undefined for non-convex settings
    Model star = build_model(
        {2, 2, 2}, {Table::Zero(2), Table::Zero(2), Table::Zero(2)},
        {{{0, 1}, tbl({1, 1, 1, 1})}, {{0, 2}, tbl({1, 1, 1, 1})}}, true);
    CHECK_THROWS_AS(dual_objective(star, bethe(star), 1.0, init_messages(star)),
                    ValidationError);
}

TEST_CASE("duality gap closes on a 2x2 grid (trivial_convex, eps=1)") {
    Model g = grid_model(2, 2, 2, FieldSpec::uniform(-0.05, 0.05), CouplingSpec::attractive(1.0),
                         77);
    CountingNumbers cn = trivial_convex(g);
    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.tol = 1e-10;
    RunOutput out = run(g, cn, cfg);
    REQUIRE(out.report.converged);
    const double q = dual_objective(g, cn, 1.0, out.state);
    const double f = primal_objective(g, cn, 1.0, out.beliefs);
    CHECK(std::abs(f - q) <= 1e-6);
    CHECK(out.beliefs.consistency_residual <= 1e-6);
}

TEST_CASE("primal objective values") {
    // uniform beliefs, zero theta, one binary pairwise factor, trivial
    // counting, eps=1: F = -H(b_alpha) = -ln 4
    Model m = single_pairwise(tbl({1, 1, 1, 1}));
    CountingNumbers cn = trivial_convex(m);
    BeliefSet b;
    b.log_b_i = {Table::Constant(2, -std::log(2.0)), Table::Constant(2, -std::log(2.0))};
    b.log_b_alpha = {Table::Constant(4, -std::log(4.0))};
    b.b_alpha_available = true;
    CHECK(primal_objective(m, cn, 1.0, b) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
    // eps = 0 drops the entropy exactly
    CHECK(primal_objective(m, cn, 0.0, b) == doctest::Approx(0.0).epsilon(1e-12));

    // converged tree run: primal equals -ln Z
    Rng rng(66);
    Model tree = random_tree(rng);
    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.tol = 1e-10;
    RunOutput out = run(tree, bethe(tree), cfg);
    ExactResult ex = enumerate_exact(tree);
    CHECK(primal_objective(tree, bethe(tree), 1.0, out.beliefs) ==
          doctest::Approx(-ex.log_z).epsilon(1e-9));
}

TEST_CASE("consistency residual") {
    Rng rng(91);
    Model tree = random_tree(rng);
    ExactResult ex = enumerate_exact(tree);
    BeliefSet oracle = beliefs_from_exact(tree, ex);
    CHECK(oracle.consistency_residual <= 1e-12);

    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.tol = 1e-10;
    RunOutput out = run(tree, trivial_convex(tree), cfg);
    CHECK(out.beliefs.consistency_residual <= 1e-6);
}

TEST_CASE("zero potentials produce exact zero beliefs and no NaN") {
    // psi forbids (0,0); phi_1 forbids state 0
    Model m = build_model({2, 2}, {tbl({0, 1}), tbl({1, 1})},
                          {{{0, 1}, tbl({0, 1, 1, 2})}}, true);
    for (double eps : {1.0, 0.0}) {
        for (CountingNumbers cn : {bethe(m), trivial_convex(m)}) {
            RunConfig cfg;
            cfg.epsilon = eps;
            RunOutput out = run(m, cn, cfg);
            CHECK(std::exp(out.beliefs.log_b_i[0][0]) == 0.0);
            CHECK(std::exp(out.beliefs.log_b_alpha[0][0]) == 0.0);
            for (const Table& t : out.beliefs.log_b_i) CHECK_FALSE(t.hasNaN());
            for (const Table& t : out.beliefs.log_b_alpha) CHECK_FALSE(t.hasNaN());
            for (const auto& per_factor : out.state.log_n)
                for (const Table& t : per_factor) {
                    CHECK_FALSE(t.hasNaN());
                    CHECK((t <= 0.0).all());
                }
        }
    }
    // dual stays finite for the convex setting
    RunOutput out = run(m, trivial_convex(m), {.epsilon = 1.0});
    CHECK(std::isfinite(dual_objective(m, trivial_convex(m), 1.0, out.state)));
}

TEST_CASE("zero-temperature limit of the power sum") {
    Rng rng(14);
    Model m = random_tree(rng);
    CountingNumbers cn = trivial_convex(m);
    // a few sweeps at eps=1 to produce generic messages
    MessageState st = init_messages(m);
    for (int sweep = 0; sweep < 2; ++sweep)
        for (int i = 0; i < m.num_vars(); ++i) update_block(m, cn, 1.0, st, i);
    // recompute m at eps ~ 0 and at eps = 0 from the same n
    MessageState warm = st, cold = st;
    for (int i = 0; i < m.num_vars(); ++i) {
        update_block(m, cn, 1e-8, warm, i);
        update_block(m, cn, 0.0, cold, i);
        for (const Incidence& inc : m.var_to_factors[i]) {
            const Table& a = warm.log_m[inc.factor][inc.pos];
            const Table& b = cold.log_m[inc.factor][inc.pos];
            for (Eigen::Index k = 0; k < a.size(); ++k)
                CHECK(std::abs(a[k] - b[k]) <= 1e-5);
        }
        break;  // first block suffices; messages must match before they mix
    }
}

TEST_CASE("fixed point: converged bethe run is stationary") {
    Rng rng(1001);
    for (int trial = 0; trial < 5; ++trial) {
        Model m = random_tree(rng);
        RunConfig cfg;
        cfg.epsilon = 1.0;
        cfg.tol = 1e-9;
        RunOutput out = run(m, bethe(m), cfg);
        REQUIRE(out.report.converged);
        double delta = 0.0;
        for (int i = 0; i < m.num_vars(); ++i)
            update_block(m, bethe(m), 1.0, out.state, i, &delta);
        CHECK(delta < cfg.tol);
    }
}

TEST_CASE("factor beliefs unavailable when some c_alpha is not positive") {
    // rooted-style settings (c_alpha = 0, c_ia > 0) still run at eps > 0,
    // but the b_alpha formula has no exponent; only b_i comes back
    Model m = single_pairwise(tbl({2, 1, 1, 2}));
    CountingNumbers cn;
    cn.c_alpha = Eigen::ArrayXd::Zero(1);
    cn.c_i = Eigen::ArrayXd::Constant(2, 0.5);
    cn.c_i_alpha = {Eigen::ArrayXd::Constant(1, 0.5), Eigen::ArrayXd::Constant(1, 0.5)};
    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.max_sweeps = 50;
    RunOutput out = run(m, cn, cfg);
    CHECK_FALSE(out.beliefs.b_alpha_available);
    CHECK(out.beliefs.log_b_alpha.empty());
    REQUIRE(out.beliefs.log_b_i.size() == 2);
    CHECK(std::abs(std::exp(log_sum_exp(out.beliefs.log_b_i[0])) - 1.0) <= 1e-12);
    CHECK(std::isnan(out.beliefs.consistency_residual));
}

TEST_CASE("concurrent runs reproduce the serial result") {
    Model g = grid_model(4, 4, 2, FieldSpec::uniform(-0.05, 0.05), CouplingSpec::mixed(1.0),
                         21);
    CountingNumbers cn = trivial_convex(g);
    RunConfig cfg;
    cfg.epsilon = 1.0;
    RunOutput serial = run(g, cn, cfg);

    std::vector<RunOutput> results(4);
    std::vector<std::thread> pool;
    for (int t = 0; t < 4; ++t)
        pool.emplace_back([&, t] { results[t] = run(g, cn, cfg); });
    for (auto& th : pool) th.join();
    for (const RunOutput& r : results) {
        CHECK(r.report.sweeps_used == serial.report.sweeps_used);
        for (int i = 0; i < g.num_vars(); ++i)
            CHECK((r.beliefs.log_b_i[i] == serial.beliefs.log_b_i[i]).all());
    }
}

TEST_CASE("run config validation") {
    Model m = single_pairwise(tbl({1, 1, 1, 1}));
    RunConfig bad;
    bad.tol = 0.0;
    CHECK_THROWS_AS(run(m, bethe(m), bad), ValidationError);
    RunConfig bad2;
    bad2.max_sweeps = 0;
    CHECK_THROWS_AS(run(m, bethe(m), bad2), ValidationError);
    RunConfig bad3;
    bad3.epsilon = -0.5;
    CHECK_THROWS_AS(run(m, bethe(m), bad3), ValidationError);
    // dual metric requires a convex class
    Model star = build_model({2, 2, 2}, {Table::Zero(2), Table::Zero(2), Table::Zero(2)},
                             {{{0, 1}, tbl({1, 1, 1, 1})}, {{0, 2}, tbl({1, 1, 1, 1})}}, true);
    RunConfig bad4;
    bad4.metric = ConvergenceMetric::dual_delta;
    CHECK_THROWS_AS(run(star, bethe(star), bad4), ValidationError);
}

TEST_CASE("trace recording") {
    Model g = grid_model(2, 2, 2, FieldSpec::uniform(-0.05, 0.05), CouplingSpec::attractive(0.5),
                         3);
    CountingNumbers cn = trivial_convex(g);
    RunConfig cfg;
    cfg.epsilon = 1.0;
    cfg.trace_every = 1;
    RunOutput out = run(g, cn, cfg);
    REQUIRE(!out.report.trace.empty());
    CHECK(out.report.trace.size() == static_cast<std::size_t>(out.report.sweeps_used));
    for (std::size_t k = 1; k < out.report.trace.size(); ++k)
        CHECK(out.report.trace[k].sweep > out.report.trace[k - 1].sweep);
    const std::string csv = trace_csv(out.report);
    CHECK(csv.rfind("sweep,dual,primal,max_delta\n", 0) == 0);
    const std::string bel = beliefs_csv(g, out.beliefs, "engine");
    CHECK(bel.rfind("kind,index,state_tuple,prob,source\n", 0) == 0);
    CHECK(bel.find("factor,0,0;0,") != std::string::npos);
}
