#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normprod/numerics.hpp"

namespace normprod {

/// A potential over a sorted, duplicate-free variable scope. log_psi holds
/// ln psi in row-major order over the scope (last variable fastest);
/// entries may be -inf (zero potential) but never +inf or NaN, and at
/// least one entry must be finite.
struct Factor {
    std::vector<int> scope;
    Table log_psi;
};

struct Assignment {
    std::vector<int> states;
};

/// One end of a variable-factor edge: factor index plus the variable's
/// position inside that factor's scope.
struct Incidence {
    int factor;
    int pos;
};

/// Discrete factor graph with log-domain potentials. Immutable after
/// construction; safe to share across concurrent solver runs.
struct Model {
    std::vector<int> cards;            // per-variable state counts
    std::vector<Table> log_phi;        // per-variable ln phi_i
    std::vector<Factor> factors;
    std::vector<std::vector<Incidence>> var_to_factors;  // N(i)
    std::vector<TableLayout> layouts;  // per-factor addressing

    int num_vars() const { return static_cast<int>(cards.size()); }
    int num_factors() const { return static_cast<int>(factors.size()); }
    int degree(int i) const { return static_cast<int>(var_to_factors[i].size()); }
};

/// Validates shapes and scopes, builds adjacency. With strict on, any two
/// factors may share at most one variable.
Model build_model(std::vector<int> cards, std::vector<Table> log_phi,
                  std::vector<Factor> factors, bool strict = true);

struct FieldSpec {
    enum class Kind { gaussian, uniform } kind = Kind::uniform;
    double a = -0.05, b = 0.05;  // uniform bounds
    double sigma = 1.0;          // gaussian std

    static FieldSpec gaussian(double sigma);
    static FieldSpec uniform(double a, double b);
    static FieldSpec parse(const std::string& text);
    std::string str() const;
};

struct CouplingSpec {
    enum class Kind { gaussian, attractive, mixed } kind = Kind::attractive;
    double omega = 1.0;  // attractive: [0,w]; mixed: [-w,w]
    double sigma = 1.0;  // gaussian std

    static CouplingSpec gaussian(double sigma);
    static CouplingSpec attractive(double omega);
    static CouplingSpec mixed(double omega);
    static CouplingSpec parse(const std::string& text);
    std::string str() const;
};

/// 4-connected grid, deterministic in (spec, seed). Binary variables get
/// ln phi_i(x) = theta_i * (-1)^x and pairwise tables with theta on the
/// diagonal and -theta off it; with more than two states every table entry
/// is drawn independently.
Model grid_model(int rows, int cols, int states_per_var, const FieldSpec& field,
                 const CouplingSpec& coupling, std::uint64_t seed);

/// All-pairs version of grid_model.
Model complete_graph_model(int num_vars, int states_per_var, const FieldSpec& field,
                           const CouplingSpec& coupling, std::uint64_t seed);

/// UAI MARKOV text format. Unary tables fold into log_phi; tables with
/// identical scopes multiply together; scopes are re-sorted with the table
/// permuted to match.
Model read_uai(const std::string& text, bool strict = true);
std::string write_uai(const Model& model);

/// Sum of theta terms, theta = -ln potential; a zeroed potential on the
/// assignment yields +inf.
double energy_of_assignment(const Model& model, const Assignment& x);

}  // namespace normprod
