#include "normprod/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "normprod/rng.hpp"

namespace normprod {

namespace {

std::vector<int> scope_cards(const std::vector<int>& cards, const std::vector<int>& scope) {
    std::vector<int> out(scope.size());
    for (std::size_t p = 0; p < scope.size(); ++p) out[p] = cards[scope[p]];
    return out;
}

void check_table(const Table& t, const std::string& what) {
    bool any_finite = false;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
        if (std::isnan(t[k]) || t[k] == kPosInf)
            throw ValidationError(what + " contains NaN or +inf");
        if (t[k] != kNegInf) any_finite = true;
    }
    if (!any_finite) throw ValidationError(what + " forbids every configuration");
}

int shared_count(const std::vector<int>& a, const std::vector<int>& b) {
    // both sorted
    int n = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) { ++n; ++i; ++j; }
        else if (a[i] < b[j]) ++i;
        else ++j;
    }
    return n;
}

}  // namespace

Model build_model(std::vector<int> cards, std::vector<Table> log_phi,
                  std::vector<Factor> factors, bool strict) {
    Model m;
    const int n = static_cast<int>(cards.size());
    for (int i = 0; i < n; ++i)
        if (cards[i] < 1) throw ValidationError("variable " + std::to_string(i) + " has cardinality < 1");
    if (static_cast<int>(log_phi.size()) != n)
        throw ValidationError("log_phi has " + std::to_string(log_phi.size()) +
                              " entries for " + std::to_string(n) + " variables");
    for (int i = 0; i < n; ++i) {
        if (log_phi[i].size() != cards[i])
            throw ValidationError("log_phi[" + std::to_string(i) + "] length mismatch");
        for (Eigen::Index k = 0; k < log_phi[i].size(); ++k)
            if (std::isnan(log_phi[i][k]) || log_phi[i][k] == kPosInf)
                throw ValidationError("log_phi[" + std::to_string(i) + "] contains NaN or +inf");
    }

    m.cards = std::move(cards);
    m.log_phi = std::move(log_phi);
    m.factors = std::move(factors);
    m.var_to_factors.assign(n, {});

    for (int a = 0; a < static_cast<int>(m.factors.size()); ++a) {
        Factor& f = m.factors[a];
        if (f.scope.empty()) throw ValidationError("factor " + std::to_string(a) + " has empty scope");
        if (!std::is_sorted(f.scope.begin(), f.scope.end()) ||
            std::adjacent_find(f.scope.begin(), f.scope.end()) != f.scope.end())
            throw ValidationError("factor " + std::to_string(a) + " scope must be sorted and duplicate-free");
        if (f.scope.front() < 0 || f.scope.back() >= n)
            throw ValidationError("factor " + std::to_string(a) + " scope out of range");
        TableLayout lay = TableLayout::make(scope_cards(m.cards, f.scope));
        if (f.log_psi.size() != lay.total)
            throw ValidationError("factor " + std::to_string(a) + " table has " +
                                  std::to_string(f.log_psi.size()) + " entries, expected " +
                                  std::to_string(lay.total));
        check_table(f.log_psi, "factor " + std::to_string(a) + " table");
        m.layouts.push_back(std::move(lay));
        for (int p = 0; p < static_cast<int>(f.scope.size()); ++p)
            m.var_to_factors[f.scope[p]].push_back({a, p});
    }

    if (strict) {
        for (int i = 0; i < n; ++i) {
            const auto& inc = m.var_to_factors[i];
            for (std::size_t u = 0; u < inc.size(); ++u) {
                for (std::size_t v = u + 1; v < inc.size(); ++v) {
                    const auto& sa = m.factors[inc[u].factor].scope;
                    const auto& sb = m.factors[inc[v].factor].scope;
                    // report each offending pair once, at its smallest shared variable
                    if (std::min(sa[inc[u].pos], sb[inc[v].pos]) != i) continue;
                    const int k = shared_count(sa, sb);
                    if (k > 1)
                        throw ValidationError("factors " + std::to_string(inc[u].factor) + "," +
                                              std::to_string(inc[v].factor) + " share " +
                                              std::to_string(k) + " variables");
                }
            }
        }
    }
    return m;
}

// ---- generator specs -------------------------------------------------

FieldSpec FieldSpec::gaussian(double sigma) {
    if (sigma <= 0) throw ValidationError("field gaussian sigma must be > 0");
    FieldSpec s;
    s.kind = Kind::gaussian;
    s.sigma = sigma;
    return s;
}

FieldSpec FieldSpec::uniform(double a, double b) {
    if (b < a) throw ValidationError("field uniform bounds out of order");
    FieldSpec s;
    s.kind = Kind::uniform;
    s.a = a;
    s.b = b;
    return s;
}

CouplingSpec CouplingSpec::gaussian(double sigma) {
    if (sigma <= 0) throw ValidationError("coupling gaussian sigma must be > 0");
    CouplingSpec s;
    s.kind = Kind::gaussian;
    s.sigma = sigma;
    return s;
}

CouplingSpec CouplingSpec::attractive(double omega) {
    if (omega < 0) throw ValidationError("coupling strength omega must be >= 0");
    CouplingSpec s;
    s.kind = Kind::attractive;
    s.omega = omega;
    return s;
}

CouplingSpec CouplingSpec::mixed(double omega) {
    if (omega < 0) throw ValidationError("coupling strength omega must be >= 0");
    CouplingSpec s;
    s.kind = Kind::mixed;
    s.omega = omega;
    return s;
}

namespace {

std::pair<std::string, std::vector<double>> split_spec(const std::string& text) {
    const auto colon = text.find(':');
    std::string name = text.substr(0, colon);
    std::vector<double> args;
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string tok;
        while (std::getline(ss, tok, ','))
            args.push_back(std::stod(tok));
    }
    return {name, args};
}

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

FieldSpec FieldSpec::parse(const std::string& text) {
    auto [name, args] = split_spec(text);
    if (name == "gaussian" && args.size() == 1) return gaussian(args[0]);
    if (name == "uniform" && args.size() == 2) return uniform(args[0], args[1]);
    throw ValidationError("bad field spec '" + text + "' (want gaussian:S or uniform:A,B)");
}

CouplingSpec CouplingSpec::parse(const std::string& text) {
    auto [name, args] = split_spec(text);
    if (name == "gaussian" && args.size() == 1) return gaussian(args[0]);
    if (name == "attractive" && args.size() == 1) return attractive(args[0]);
    if (name == "mixed" && args.size() == 1) return mixed(args[0]);
    throw ValidationError("bad coupling spec '" + text +
                          "' (want gaussian:S, attractive:W or mixed:W)");
}

std::string FieldSpec::str() const {
    if (kind == Kind::gaussian) return "gaussian:" + fmt_num(sigma);
    return "uniform:" + fmt_num(a) + "," + fmt_num(b);
}

std::string CouplingSpec::str() const {
    switch (kind) {
        case Kind::gaussian: return "gaussian:" + fmt_num(sigma);
        case Kind::attractive: return "attractive:" + fmt_num(omega);
        default: return "mixed:" + fmt_num(omega);
    }
}

// ---- random generators ------------------------------------------------

namespace {

double draw_field(Rng& rng, const FieldSpec& s) {
    if (s.kind == FieldSpec::Kind::gaussian) return s.sigma * rng.normal();
    return rng.uniform(s.a, s.b);
}

double draw_coupling(Rng& rng, const CouplingSpec& s) {
    switch (s.kind) {
        case CouplingSpec::Kind::gaussian: return s.sigma * rng.normal();
        case CouplingSpec::Kind::attractive: return rng.uniform(0.0, s.omega);
        default: return rng.uniform(-s.omega, s.omega);
    }
}

/// Draw order is fixed: all fields in variable order, then all couplings
/// in edge order. Stored as ln phi = +theta (the generators follow the
/// p ~ exp(sum theta) convention; solvers only ever see ln phi / ln psi).
Model build_random(int num_vars, int states, const std::vector<std::pair<int, int>>& edges,
                   const FieldSpec& field, const CouplingSpec& coupling, std::uint64_t seed) {
    if (states < 2) throw ValidationError("states_per_var must be >= 2");
    Rng rng(seed);
    std::vector<Table> log_phi(num_vars);
    for (int i = 0; i < num_vars; ++i) {
        Table t(states);
        if (states == 2) {
            const double theta = draw_field(rng, field);
            t[0] = theta;
            t[1] = -theta;
        } else {
            for (int k = 0; k < states; ++k) t[k] = draw_field(rng, field);
        }
        log_phi[i] = std::move(t);
    }
    std::vector<Factor> factors;
    factors.reserve(edges.size());
    for (const auto& [u, v] : edges) {
        Table t(static_cast<Eigen::Index>(states) * states);
        if (states == 2) {
            const double theta = draw_coupling(rng, coupling);
            t[0] = theta;   // (0,0)
            t[1] = -theta;  // (0,1)
            t[2] = -theta;  // (1,0)
            t[3] = theta;   // (1,1)
        } else {
            for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = draw_coupling(rng, coupling);
        }
        factors.push_back({{u, v}, std::move(t)});
    }
    std::vector<int> cards(num_vars, states);
    return build_model(std::move(cards), std::move(log_phi), std::move(factors), true);
}

}  // namespace

Model grid_model(int rows, int cols, int states_per_var, const FieldSpec& field,
                 const CouplingSpec& coupling, std::uint64_t seed) {
    if (rows < 1 || cols < 1) throw ValidationError("grid must have rows, cols >= 1");
    std::vector<std::pair<int, int>> edges;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int i = r * cols + c;
            if (c + 1 < cols) edges.emplace_back(i, i + 1);
            if (r + 1 < rows) edges.emplace_back(i, i + cols);
        }
    }
    return build_random(rows * cols, states_per_var, edges, field, coupling, seed);
}

Model complete_graph_model(int num_vars, int states_per_var, const FieldSpec& field,
                           const CouplingSpec& coupling, std::uint64_t seed) {
    if (num_vars < 1) throw ValidationError("complete graph needs num_vars >= 1");
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < num_vars; ++i)
        for (int j = i + 1; j < num_vars; ++j) edges.emplace_back(i, j);
    return build_random(num_vars, states_per_var, edges, field, coupling, seed);
}

// ---- UAI MARKOV text format -------------------------------------------

namespace {

class Tokens {
public:
    explicit Tokens(const std::string& text) : ss_(text) {}

    std::string word() {
        std::string w;
        if (!(ss_ >> w)) throw ValidationError("uai: unexpected end of input");
        return w;
    }

    long long integer() {
        const std::string w = word();
        try {
            std::size_t used = 0;
            const long long v = std::stoll(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("uai: expected integer, got '" + w + "'");
        }
    }

    double real() {
        const std::string w = word();
        try {
            std::size_t used = 0;
            const double v = std::stod(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("uai: expected number, got '" + w + "'");
        }
    }

private:
    std::stringstream ss_;
};

}  // namespace

Model read_uai(const std::string& text, bool strict) {
    Tokens tok(text);
    const std::string kind = tok.word();
    if (kind != "MARKOV")
        throw ValidationError("uai: expected MARKOV header, got '" + kind + "'");
    const long long n = tok.integer();
    if (n < 0) throw ValidationError("uai: negative variable count");
    std::vector<int> cards(n);
    for (auto& c : cards) {
        c = static_cast<int>(tok.integer());
        if (c < 1) throw ValidationError("uai: cardinality < 1");
    }
    const long long m = tok.integer();
    if (m < 0) throw ValidationError("uai: negative factor count");

    std::vector<std::vector<int>> scopes(m);
    for (long long a = 0; a < m; ++a) {
        const long long arity = tok.integer();
        if (arity < 1) throw ValidationError("uai: factor arity < 1");
        scopes[a].resize(arity);
        for (auto& v : scopes[a]) {
            v = static_cast<int>(tok.integer());
            if (v < 0 || v >= n) throw ValidationError("uai: scope variable out of range");
        }
    }

    std::vector<Table> log_phi(n);
    for (long long i = 0; i < n; ++i) log_phi[i] = Table::Zero(cards[i]);

    // merged by sorted scope; identical scopes multiply together
    std::map<std::vector<int>, Table> merged;

    for (long long a = 0; a < m; ++a) {
        const auto& file_scope = scopes[a];
        std::vector<int> sorted_scope = file_scope;
        std::sort(sorted_scope.begin(), sorted_scope.end());
        if (std::adjacent_find(sorted_scope.begin(), sorted_scope.end()) != sorted_scope.end())
            throw ValidationError("uai: duplicate variable in scope of table " + std::to_string(a));

        TableLayout file_lay = TableLayout::make(scope_cards(cards, file_scope));
        const long long count = tok.integer();
        if (count != file_lay.total)
            throw ValidationError("uai: table " + std::to_string(a) + " has " + std::to_string(count) +
                                  " values, expected " + std::to_string(file_lay.total));
        Table file_vals(file_lay.total);
        for (std::int64_t k = 0; k < file_lay.total; ++k) {
            const double v = tok.real();
            if (v < 0) throw ValidationError("uai: negative potential value");
            file_vals[k] = std::log(v);  // log(0) = -inf
        }

        if (file_scope.size() == 1) {
            log_phi[file_scope[0]] += file_vals;
            continue;
        }

        // permute from file scope order into sorted scope order
        TableLayout sorted_lay = TableLayout::make(scope_cards(cards, sorted_scope));
        std::vector<int> pos_in_file(file_scope.size());
        for (std::size_t p = 0; p < sorted_scope.size(); ++p) {
            const auto it = std::find(file_scope.begin(), file_scope.end(), sorted_scope[p]);
            pos_in_file[p] = static_cast<int>(it - file_scope.begin());
        }
        Table vals(sorted_lay.total);
        for (std::int64_t k = 0; k < sorted_lay.total; ++k) {
            std::int64_t src = 0;
            for (std::size_t p = 0; p < sorted_scope.size(); ++p)
                src += static_cast<std::int64_t>(sorted_lay.coord(k, static_cast<int>(p))) *
                       file_lay.strides[pos_in_file[p]];
            vals[k] = file_vals[src];
        }

        auto it = merged.find(sorted_scope);
        if (it == merged.end())
            merged.emplace(std::move(sorted_scope), std::move(vals));
        else
            it->second += vals;
    }

    std::vector<Factor> factors;
    factors.reserve(merged.size());
    for (auto& [scope, vals] : merged) factors.push_back({scope, std::move(vals)});
    return build_model(std::move(cards), std::move(log_phi), std::move(factors), strict);
}

std::string write_uai(const Model& model) {
    // Table values get %.17g so that read(write(m)) reproduces them exactly;
    // a shorter format would not survive the 1e-12 round-trip contract.
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::string out = "MARKOV\n";
    out += std::to_string(model.num_vars()) + "\n";
    for (int i = 0; i < model.num_vars(); ++i) {
        if (i) out += ' ';
        out += std::to_string(model.cards[i]);
    }
    out += "\n";
    out += std::to_string(model.num_vars() + model.num_factors()) + "\n";
    for (int i = 0; i < model.num_vars(); ++i) out += "1 " + std::to_string(i) + "\n";
    for (const Factor& f : model.factors) {
        out += std::to_string(f.scope.size());
        for (int v : f.scope) out += ' ' + std::to_string(v);
        out += "\n";
    }
    for (int i = 0; i < model.num_vars(); ++i) {
        out += "\n" + std::to_string(model.cards[i]) + "\n";
        for (int k = 0; k < model.cards[i]; ++k) {
            if (k) out += ' ';
            out += num(std::exp(model.log_phi[i][k]));
        }
        out += "\n";
    }
    for (const Factor& f : model.factors) {
        out += "\n" + std::to_string(f.log_psi.size()) + "\n";
        for (Eigen::Index k = 0; k < f.log_psi.size(); ++k) {
            if (k) out += ' ';
            out += num(std::exp(f.log_psi[k]));
        }
        out += "\n";
    }
    return out;
}

double energy_of_assignment(const Model& model, const Assignment& x) {
    if (static_cast<int>(x.states.size()) != model.num_vars())
        throw ValidationError("assignment length mismatch");
    for (int i = 0; i < model.num_vars(); ++i)
        if (x.states[i] < 0 || x.states[i] >= model.cards[i])
            throw ValidationError("assignment state out of range at variable " + std::to_string(i));
    double energy = 0.0;
    for (int i = 0; i < model.num_vars(); ++i) {
        const double lp = model.log_phi[i][x.states[i]];
        if (lp == kNegInf) return kPosInf;
        energy -= lp;
    }
    for (int a = 0; a < model.num_factors(); ++a) {
        const Factor& f = model.factors[a];
        std::vector<int> local(f.scope.size());
        for (std::size_t p = 0; p < f.scope.size(); ++p) local[p] = x.states[f.scope[p]];
        const double lp = f.log_psi[model.layouts[a].flat_of(local)];
        if (lp == kNegInf) return kPosInf;
        energy -= lp;
    }
    return energy;
}

}  // namespace normprod
