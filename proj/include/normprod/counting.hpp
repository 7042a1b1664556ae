#pragma once

#include <string>
#include <vector>

#include "normprod/model.hpp"
#include "normprod/numerics.hpp"

namespace normprod {

enum class CountingClass { convex, non_convex };

/// Counting numbers (c_alpha, c_i, c_ia) parameterizing the entropy
/// approximation sum c_a H(b_a) + sum c_i H(b_i) + sum c_ia (H(b_a) - H(b_i)).
/// The setting is convex iff c_alpha > 0, c_i >= 0 and c_ia >= 0 everywhere.
/// c_i_alpha is ragged, aligned with Model::var_to_factors. Derived values
/// (hat coefficients, class) are recomputed on demand, never stored.
struct CountingNumbers {
    Eigen::ArrayXd c_alpha;               // per factor
    Eigen::ArrayXd c_i;                   // per variable
    std::vector<Eigen::ArrayXd> c_i_alpha;  // [i][pos in N(i)]

    double hat_c_ia(int factor, int i, int pos_in_ni) const {
        return c_alpha[factor] + c_i_alpha[i][pos_in_ni];
    }
};

struct BarCoefficients {
    Eigen::ArrayXd bar_c_alpha;  // c_a + sum_{i in N(a)} c_ia
    Eigen::ArrayXd bar_c_i;      // c_i - sum_{a in N(i)} c_ia
};

struct CountingReport {
    CountingClass klass = CountingClass::convex;
    std::string failure;            // first violated convexity condition, if any
    Eigen::ArrayXd hat_c_i;         // c_i + sum_{a in N(i)} c_a
    bool hat_c_i_positive = true;   // needed by belief recovery
    BarCoefficients bars;
};

/// Throws unless index sets match the model exactly.
void check_shapes(const Model& model, const CountingNumbers& cn);

Eigen::ArrayXd hat_c_i_all(const Model& model, const CountingNumbers& cn);
CountingClass classify(const Model& model, const CountingNumbers& cn);
BarCoefficients bar_coefficients(const Model& model, const CountingNumbers& cn);
CountingReport validate(const Model& model, const CountingNumbers& cn);

/// Bethe setting c_a = 1, c_i = 1 - d_i, c_ia = 0; non-convex whenever some
/// variable has degree > 1.
CountingNumbers bethe(const Model& model);

/// c_a = 1, c_i = 0, c_ia = 0. Isolated variables get c_i = 1 so that
/// hat_c_i stays positive.
CountingNumbers trivial_convex(const Model& model);

/// c_a = 1, c_i = (1 - d_i)/2, c_ia = 0; pairwise factors only.
CountingNumbers nmplp(const Model& model);

/// Edge appearance probabilities of the uniform spanning-tree distribution,
/// via effective resistances on the graph Laplacian. Pairwise connected
/// graphs only; sums to n-1.
Eigen::ArrayXd spanning_tree_edge_probabilities(const Model& model);

/// TRW setting c_a = rho_a, c_i = 1 - sum_{a in N(i)} rho_a, c_ia = 0;
/// hat_c_i == 1 identically.
CountingNumbers trw_from_edge_probabilities(const Model& model, const Eigen::ArrayXd& rho);

/// Rewrites a setting with c_alpha = 0 and c_i, c_ia >= 0 into an
/// equivalent convex one (c_alpha > 0), preserving the bar coefficients.
/// Errors if some factor ends up with zero weight.
CountingNumbers convexify(const Model& model, const CountingNumbers& input);

/// Least-squares-uniform convex setting: minimizes
/// sum_a (bar_c_a - 1)^2 + ridge * |c|^2 subject to the admissibility
/// equalities c_i + sum_{a in N(i)} (c_a + sum_{j in N(a)\i} c_ja) = 1,
/// c_i, c_ia >= 0 and c_a >= alpha_floor. On loopy graphs the optimum sits
/// with every c_a at the floor, and the norm-product ascent rate scales with
/// it; 0.05 keeps the produced settings practical while staying well inside
/// the admissible region.
CountingNumbers l2_convex(const Model& model, double ridge = 1e-9, double tol = 1e-8,
                          double alpha_floor = 0.05);

/// JSON file format: {"c_alpha": [...], "c_i": [...],
/// "c_i_alpha": [[var, factor, value], ...]}. Unlisted incidences get 0;
/// listed ones must be real incidences, each at most once.
CountingNumbers read_counting_json(const Model& model, const std::string& text);
std::string write_counting_json(const Model& model, const CountingNumbers& cn);

}  // namespace normprod
