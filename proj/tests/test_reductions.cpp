#include <doctest.h>

#include <cmath>

#include "normprod/engine.hpp"
#include "normprod/rng.hpp"
#include "reference_algorithms.hpp"

using namespace normprod;

namespace {

Model random_pairwise(Rng& rng, bool unit_phi = false, int max_vars = 7) {
    const int n = 2 + static_cast<int>(rng.below(max_vars - 1));
    std::vector<int> cards(n);
    for (auto& c : cards) c = 2 + static_cast<int>(rng.below(2));
    std::vector<Table> phi(n);
    for (int i = 0; i < n; ++i) {
        phi[i] = Table::Zero(cards[i]);
        if (!unit_phi)
            for (int k = 0; k < cards[i]; ++k) phi[i][k] = rng.uniform(-1.0, 1.0);
    }
    std::vector<Factor> factors;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform01() > 0.55) continue;
            Table t(static_cast<Eigen::Index>(cards[i]) * cards[j]);
            for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = rng.uniform(-1.2, 1.2);
            factors.push_back({{i, j}, std::move(t)});
        }
    if (factors.empty()) {
        Table t(static_cast<Eigen::Index>(cards[0]) * cards[1]);
        for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = rng.uniform(-1.2, 1.2);
        factors.push_back({{0, 1}, std::move(t)});
    }
    return build_model(cards, phi, factors, true);
}

double max_message_gap(const Model& model, const MessageState& st,
                       const std::vector<std::vector<Table>>& ref, double scale_per_factor,
                       const Eigen::ArrayXd* per_factor_scale = nullptr) {
    double worst = 0.0;
    for (int a = 0; a < model.num_factors(); ++a) {
        const double s = per_factor_scale ? (*per_factor_scale)[a] : scale_per_factor;
        for (std::size_t p = 0; p < st.log_m[a].size(); ++p) {
            const Table eng = refalg::normalized(Table(st.log_m[a][p] / s));
            const Table want = refalg::normalized(Table(ref[a][p]));
            for (Eigen::Index k = 0; k < eng.size(); ++k) {
                if (eng[k] == kNegInf && want[k] == kNegInf) continue;
                worst = std::max(worst, std::abs(eng[k] - want[k]));
            }
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("norm-product reduces to sum-product (bethe, eps=1)") {
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        Model m = random_pairwise(rng);
        CountingNumbers cn = bethe(m);
        MessageState st = init_messages(m);
        refalg::ClassicBP ref(m, false);
        for (int sweep = 0; sweep < 25; ++sweep) {
            for (int i = 0; i < m.num_vars(); ++i) {
                update_block(m, cn, 1.0, st, i);
                ref.block(i);
            }
            CHECK(max_message_gap(m, st, ref.m, 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("norm-product reduces to max-product (bethe, eps=0)") {
    Rng rng(202);
    for (int trial = 0; trial < 10; ++trial) {
        Model m = random_pairwise(rng);
        CountingNumbers cn = bethe(m);
        MessageState st = init_messages(m);
        refalg::ClassicBP ref(m, true);
        for (int sweep = 0; sweep < 25; ++sweep) {
            for (int i = 0; i < m.num_vars(); ++i) {
                update_block(m, cn, 0.0, st, i);
                ref.block(i);
            }
            CHECK(max_message_gap(m, st, ref.m, 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("sum-product reduction holds with higher-arity factors too") {
    // one ternary factor plus pairwise ones
    Rng rng(77);
    std::vector<int> cards{2, 3, 2, 2};
    std::vector<Table> phi;
    for (int c : cards) {
        Table t(c);
        for (int k = 0; k < c; ++k) t[k] = rng.uniform(-1, 1);
        phi.push_back(t);
    }
    Table trip(12);
    for (Eigen::Index k = 0; k < 12; ++k) trip[k] = rng.uniform(-1, 1);
    Table pair(4);
    for (Eigen::Index k = 0; k < 4; ++k) pair[k] = rng.uniform(-1, 1);
    Model m = build_model(cards, phi, {{{0, 1, 2}, trip}, {{2, 3}, pair}}, false);

    CountingNumbers cn = bethe(m);
    MessageState st = init_messages(m);
    refalg::ClassicBP ref(m, false);
    for (int sweep = 0; sweep < 20; ++sweep) {
        for (int i = 0; i < m.num_vars(); ++i) {
            update_block(m, cn, 1.0, st, i);
            ref.block(i);
        }
        CHECK(max_message_gap(m, st, ref.m, 1.0) <= 1e-10);
    }
}

TEST_CASE("norm-product reduces to sum-TRBP under the M substitution") {
    Rng rng(303);
    int done = 0;
    while (done < 10) {
        Model m = random_pairwise(rng);
        Eigen::ArrayXd rho;
        try {
            rho = spanning_tree_edge_probabilities(m);
        } catch (const ValidationError&) {
            continue;  // disconnected draw
        }
        CountingNumbers cn = trw_from_edge_probabilities(m, rho);
        MessageState st = init_messages(m);
        refalg::SumTrbp ref(m, rho);
        // one burn-in sweep, then seed the reference through the
        // substitution: unlike the n-message form, the M recursion reads
        // phi_j every update, so the all-ones starts do not correspond
        for (int i = 0; i < m.num_vars(); ++i) update_block(m, cn, 1.0, st, i);
        for (int a = 0; a < m.num_factors(); ++a)
            for (std::size_t p = 0; p < st.log_m[a].size(); ++p)
                ref.M[a][p] = refalg::normalized(Table(st.log_m[a][p] / rho[a]));
        for (int sweep = 0; sweep < 25; ++sweep) {
            for (int i = 0; i < m.num_vars(); ++i) {
                update_block(m, cn, 1.0, st, i);
                ref.block(i);
            }
            CHECK(max_message_gap(m, st, ref.M, 0.0, &rho) <= 1e-10);
        }
        ++done;
    }
}

TEST_CASE("norm-product reduces to NMPLP (unit phi, eps=0)") {
    Rng rng(404);
    for (int trial = 0; trial < 10; ++trial) {
        Model m = random_pairwise(rng, /*unit_phi=*/true);
        CountingNumbers cn = nmplp(m);
        MessageState st = init_messages(m);
        refalg::Nmplp ref(m);
        for (int sweep = 0; sweep < 25; ++sweep) {
            for (int i = 0; i < m.num_vars(); ++i) {
                update_block(m, cn, 0.0, st, i);
                ref.block(i);
            }
            CHECK(max_message_gap(m, st, ref.gamma, 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("rooted TRW enumeration agrees with matrix-tree probabilities") {
    Rng rng(505);
    int done = 0;
    while (done < 6) {
        Model m = random_pairwise(rng, false, 6);
        if (m.num_factors() > 8) continue;
        Eigen::ArrayXd rho;
        try {
            rho = spanning_tree_edge_probabilities(m);
        } catch (const ValidationError&) {
            continue;
        }
        CountingNumbers v2 = refalg::trw_rooted_by_enumeration(m);
        BarCoefficients bars = bar_coefficients(m, v2);
        // bar_c_alpha of the rooted form is the edge-appearance probability
        for (int a = 0; a < m.num_factors(); ++a)
            CHECK(bars.bar_c_alpha[a] == doctest::Approx(rho[a]).epsilon(1e-10));
        // and bar_c_i matches the edge-appearance TRW setting
        CountingNumbers v1 = trw_from_edge_probabilities(m, rho);
        BarCoefficients b1 = bar_coefficients(m, v1);
        for (int i = 0; i < m.num_vars(); ++i)
            CHECK(bars.bar_c_i[i] == doctest::Approx(b1.bar_c_i[i]).epsilon(1e-10));
        // convexify yields a convex setting with the same bars
        CountingNumbers cx = convexify(m, v2);
        CHECK(classify(m, cx) == CountingClass::convex);
        BarCoefficients bx = bar_coefficients(m, cx);
        for (int a = 0; a < m.num_factors(); ++a)
            CHECK(std::abs(bx.bar_c_alpha[a] - bars.bar_c_alpha[a]) <= 1e-12);
        ++done;
    }
}
