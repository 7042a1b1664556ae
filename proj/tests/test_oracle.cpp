#include <doctest.h>

#include <cmath>

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

Model random_small_model(Rng& rng) {
    const int n = 2 + static_cast<int>(rng.below(5));
    std::vector<int> cards(n);
    for (auto& c : cards) c = 2 + static_cast<int>(rng.below(2));
    std::vector<Table> phi(n);
    for (int i = 0; i < n; ++i) {
        phi[i] = Table(cards[i]);
        for (int k = 0; k < cards[i]; ++k) phi[i][k] = rng.uniform(-1.0, 1.0);
    }
    std::vector<Factor> factors;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform01() > 0.45) continue;
            Table t(static_cast<Eigen::Index>(cards[i]) * cards[j]);
            for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = rng.uniform(-1.5, 1.5);
            factors.push_back({{i, j}, std::move(t)});
        }
    return build_model(cards, phi, factors, true);
}

}  // namespace

TEST_CASE("enumerate on hand-checkable models") {
    Model uni = build_model({2, 2}, {Table::Zero(2), Table::Zero(2)},
                            {{{0, 1}, tbl({1, 1, 1, 1})}}, true);
    ExactResult r = enumerate_exact(uni);
    CHECK(r.log_z == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k)
            CHECK(r.marginals_i[i][k] == doctest::Approx(0.5).epsilon(1e-14));

    Model chain = build_model({2, 2}, {Table::Zero(2), Table::Zero(2)},
                              {{{0, 1}, tbl({2, 1, 1, 2})}}, true);
    ExactResult c = enumerate_exact(chain);
    CHECK(std::exp(c.log_z) == doctest::Approx(6.0).epsilon(1e-13));
    CHECK(c.marginals_alpha[0][0] == doctest::Approx(1.0 / 3).epsilon(1e-13));
    CHECK(c.marginals_i[0][0] == doctest::Approx(0.5).epsilon(1e-13));

    Model zero = build_model({2}, {tbl({0, 1})}, {}, true);
    ExactResult z = enumerate_exact(zero);
    CHECK(z.marginals_i[0][0] == 0.0);
    CHECK(z.map_assignment.states[0] == 1);
}

TEST_CASE("enumerate rejects oversized state spaces") {
    std::vector<int> cards(30, 2);
    std::vector<Table> phi(30, Table::Zero(2));
    Model big = build_model(cards, phi, {}, true);
    CHECK_THROWS_AS(enumerate_exact(big), ValidationError);
}

TEST_CASE("ve matches enumeration on random models") {
    Rng rng(271828);
    for (int trial = 0; trial < 100; ++trial) {
        Model m = random_small_model(rng);
        ExactResult en = enumerate_exact(m);
        ExactResult ve = ve_exact(m);
        CHECK(std::abs(en.log_z - ve.log_z) <= 1e-10 * std::max(1.0, std::abs(en.log_z)));
        for (int i = 0; i < m.num_vars(); ++i)
            for (int k = 0; k < m.cards[i]; ++k)
                CHECK(std::abs(en.marginals_i[i][k] - ve.marginals_i[i][k]) <= 1e-10);
        for (int a = 0; a < m.num_factors(); ++a)
            for (Eigen::Index k = 0; k < en.marginals_alpha[a].size(); ++k)
                CHECK(std::abs(en.marginals_alpha[a][k] - ve.marginals_alpha[a][k]) <= 1e-10);
        CHECK(en.map_energy == doctest::Approx(ve.map_energy).epsilon(1e-10));
    }
}

TEST_CASE("ve on a 10x10 grid, order invariance") {
    Model g = grid_model(10, 10, 2, FieldSpec::uniform(-0.05, 0.05),
                         CouplingSpec::attractive(1.0), 5);
    ExactResult base = ve_exact(g);
    CHECK(std::isfinite(base.log_z));

    // five alternative width-bounded sweeps of the grid
    std::vector<std::vector<int>> orders(5);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) {
            orders[0].push_back(r * 10 + c);              // rows forward
            orders[1].push_back((9 - r) * 10 + c);        // rows backward
            orders[2].push_back(c * 10 + r);              // columns as rows
            orders[3].push_back(r * 10 + (9 - c));        // reversed within row
            orders[4].push_back((9 - c) * 10 + (9 - r));  // both reversed, transposed
        }
    for (const auto& order : orders) {
        ExactResult alt = ve_exact(g, &order);
        CHECK(std::abs(alt.log_z - base.log_z) <= 1e-9);
    }

    // oracle marginals are mutually consistent
    BeliefSet b = beliefs_from_exact(g, base);
    CHECK(b.consistency_residual <= 1e-12);
}

TEST_CASE("ve rejects oversized induced width") {
    // complete graph on 26 binary variables: first elimination builds a
    // table over 25 variables
    Model k = complete_graph_model(26, 2, FieldSpec::uniform(-0.05, 0.05),
                                   CouplingSpec::attractive(1.0), 1);
    CHECK_THROWS_AS(ve_exact(k), NumericError);
}

TEST_CASE("map energy beats random assignments") {
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        Model m = random_small_model(rng);
        ExactResult ex = enumerate_exact(m);
        CHECK(energy_of_assignment(m, ex.map_assignment) ==
              doctest::Approx(ex.map_energy).epsilon(1e-12));
        for (int rep = 0; rep < 1000; ++rep) {
            Assignment x;
            for (int i = 0; i < m.num_vars(); ++i)
                x.states.push_back(static_cast<int>(rng.below(m.cards[i])));
            CHECK(energy_of_assignment(m, x) >= ex.map_energy - 1e-12);
        }
    }
}

TEST_CASE("map tie-break is lexicographic smallest") {
    // fully symmetric model: every assignment ties; enumerate must return
    // all zeros
    Model m = build_model({2, 2, 2}, {Table::Zero(2), Table::Zero(2), Table::Zero(2)},
                          {{{0, 1}, Table::Zero(4)}, {{1, 2}, Table::Zero(4)}}, true);
    ExactResult ex = enumerate_exact(m);
    CHECK(ex.map_assignment.states == std::vector<int>{0, 0, 0});
    ExactResult ve = ve_exact(m);
    CHECK(ve.map_energy == doctest::Approx(ex.map_energy).epsilon(1e-14));
}
