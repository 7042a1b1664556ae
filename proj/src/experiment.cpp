#include "normprod/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include "normprod/oracle.hpp"

namespace normprod {

namespace {

std::string fmt12(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "marginals_grid") return ExperimentKind::marginals_grid;
    if (name == "marginals_complete") return ExperimentKind::marginals_complete;
    if (name == "lp_binary_grid") return ExperimentKind::lp_binary_grid;
    if (name == "lp_ternary_grid") return ExperimentKind::lp_ternary_grid;
    throw ValidationError("unknown experiment kind '" + name + "'");
}

const char* experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::marginals_grid: return "marginals_grid";
        case ExperimentKind::marginals_complete: return "marginals_complete";
        case ExperimentKind::lp_binary_grid: return "lp_binary_grid";
        default: return "lp_ternary_grid";
    }
}

SolverSpec SolverSpec::parse(const std::string& text) {
    SolverSpec s;
    s.label = text;
    std::string body = text;
    if (body.rfind("anneal:", 0) == 0) {
        s.anneal = true;
        body = body.substr(7);
        s.epsilon = 1e-3;
    }
    const auto at = body.find('@');
    std::string preset = body.substr(0, at);
    if (at != std::string::npos) {
        try {
            s.epsilon = std::stod(body.substr(at + 1));
        } catch (const std::exception&) {
            throw ValidationError("bad solver spec '" + text + "'");
        }
        if (s.epsilon < 0 || (s.anneal && s.epsilon <= 0))
            throw ValidationError("bad epsilon in solver spec '" + text + "'");
    }
    if (preset == "bethe") s.preset = CountingPreset::bethe;
    else if (preset == "trw") s.preset = CountingPreset::trw;
    else if (preset == "l2") s.preset = CountingPreset::l2;
    else if (preset == "trivial") s.preset = CountingPreset::trivial;
    else if (preset == "nmplp") s.preset = CountingPreset::nmplp;
    else throw ValidationError("unknown counting preset '" + preset + "'");
    return s;
}

std::vector<double> parse_omega_grid(const std::string& text) {
    // start:stop:step, or a comma-separated list
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::stringstream ss(text);
        std::string a, b, c;
        if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') || !std::getline(ss, c))
            throw ValidationError("bad omega grid '" + text + "' (want start:stop:step)");
        const double start = std::stod(a), stop = std::stod(b), step = std::stod(c);
        if (step <= 0 || stop < start) throw ValidationError("bad omega grid '" + text + "'");
        for (double w = start; w <= stop + 1e-12; w += step) out.push_back(w);
    } else {
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    }
    for (double w : out)
        if (w < 0) throw ValidationError("omega values must be >= 0");
    if (out.empty()) throw ValidationError("empty omega grid");
    return out;
}

void ExperimentSpec::fill_defaults() {
    const bool lp = kind == ExperimentKind::lp_binary_grid || kind == ExperimentKind::lp_ternary_grid;
    if (omegas.empty()) omegas = lp ? std::vector<double>{1.0} : parse_omega_grid("0:2:0.25");
    if (!coupling)
        coupling = lp ? CouplingSpec::Kind::gaussian : CouplingSpec::Kind::attractive;
    if (solvers.empty()) {
        if (lp)
            for (const char* s : {"bethe@0", "trw@0", "trivial@0"})
                solvers.push_back(SolverSpec::parse(s));
        else
            for (const char* s : {"bethe@1", "trw@1", "l2@1"})
                solvers.push_back(SolverSpec::parse(s));
    }
    if (trials < 1) throw ValidationError("experiment: trials must be >= 1");
}

namespace {

struct CountingCache {
    std::map<int, CountingNumbers> by_preset;

    const CountingNumbers& get(const Model& model, CountingPreset p) {
        // all kinds keep the topology fixed across trials, so presets are
        // computed once per experiment
        auto it = by_preset.find(static_cast<int>(p));
        if (it != by_preset.end()) return it->second;
        CountingNumbers cn;
        switch (p) {
            case CountingPreset::bethe: cn = bethe(model); break;
            case CountingPreset::trivial: cn = trivial_convex(model); break;
            case CountingPreset::nmplp: cn = nmplp(model); break;
            case CountingPreset::l2: cn = l2_convex(model); break;
            case CountingPreset::trw:
                cn = trw_from_edge_probabilities(model, spanning_tree_edge_probabilities(model));
                break;
        }
        return by_preset.emplace(static_cast<int>(p), std::move(cn)).first->second;
    }
};

Model make_model(const ExperimentSpec& spec, double omega, std::uint64_t seed) {
    CouplingSpec coupling;
    switch (*spec.coupling) {
        case CouplingSpec::Kind::attractive: coupling = CouplingSpec::attractive(omega); break;
        case CouplingSpec::Kind::mixed: coupling = CouplingSpec::mixed(omega); break;
        case CouplingSpec::Kind::gaussian:
            coupling = CouplingSpec::gaussian(omega > 0 ? omega : 1.0);
            break;
    }
    switch (spec.kind) {
        case ExperimentKind::marginals_grid:
            return grid_model(spec.grid_rows, spec.grid_cols, 2,
                              FieldSpec::uniform(-0.05, 0.05), coupling, seed);
        case ExperimentKind::marginals_complete:
            return complete_graph_model(spec.complete_vars, 2,
                                        FieldSpec::uniform(-0.05, 0.05), coupling, seed);
        case ExperimentKind::lp_binary_grid:
            return grid_model(spec.grid_rows, spec.grid_cols, 2, FieldSpec::gaussian(1.0),
                              coupling, seed);
        default:
            return grid_model(spec.grid_rows, spec.grid_cols, 3, FieldSpec::gaussian(1.0),
                              coupling, seed);
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec_in) {
    ExperimentSpec spec = spec_in;
    spec.fill_defaults();
    const bool lp =
        spec.kind == ExperimentKind::lp_binary_grid || spec.kind == ExperimentKind::lp_ternary_grid;

    // the topology is fixed across trials and omegas, so every counting
    // preset is computed once up front and shared read-only by the workers
    CountingCache cache;
    {
        const Model proto = make_model(spec, spec.omegas.front(), spec.base_seed);
        for (const SolverSpec& solver : spec.solvers) cache.get(proto, solver.preset);
    }

    const int n_omegas = static_cast<int>(spec.omegas.size());
    const int n_solvers = static_cast<int>(spec.solvers.size());
    const int n_cells = spec.trials * n_omegas;

    ExperimentResult result;
    result.rows.resize(static_cast<std::size_t>(n_cells) * n_solvers);

    // one work item per (trial, omega) cell; rows land in preassigned slots,
    // so the output is independent of scheduling
    auto run_cell = [&](int cell) {
        const int trial = cell / n_omegas;
        const int omega_idx = cell % n_omegas;
        const double omega = spec.omegas[omega_idx];
        const std::uint64_t seed = spec.base_seed + static_cast<std::uint64_t>(trial);
        const Model model = make_model(spec, omega, seed);
        std::vector<Table> exact;
        if (!lp) exact = ve_singleton_marginals(model);

        for (int s = 0; s < n_solvers; ++s) {
            const SolverSpec& solver = spec.solvers[s];
            const CountingNumbers& cn = cache.by_preset.at(static_cast<int>(solver.preset));
            const bool convex = classify(model, cn) == CountingClass::convex;

            ExperimentRow row;
            row.trial = trial;
            row.omega = omega;
            row.solver = solver.label;
            row.avg_l1_error = kNaN;
            row.dual_value = kNaN;
            row.energy = kNaN;
            row.excluded = false;

            const auto t0 = std::chrono::steady_clock::now();
            if (solver.anneal) {
                AnnealSchedule sched;
                sched.eps_min = solver.epsilon;
                sched.tol = spec.tol;
                sched.max_sweeps = spec.max_sweeps;
                AnnealResult ar = anneal_lp(model, cn, sched);
                row.converged = ar.report.converged;
                row.sweeps = ar.report.sweeps_used;
                // the LP dual at the annealed messages, comparable with
                // the eps = 0 solvers' dual values
                row.dual_value = dual_objective(model, cn, 0.0, ar.state);
                row.energy = energy_of_assignment(model, ar.decoded);
                bool tie = false;
                for (bool t : ar.tie_flags) tie = tie || t;
                row.certificate = tie ? certificate_name(Certificate::ties_present)
                                      : certificate_name(Certificate::integral_no_ties);
            } else if (lp && solver.epsilon == 0.0 && convex) {
                RunConfig cfg;
                cfg.tol = spec.tol;
                cfg.max_sweeps = spec.max_sweeps;
                auto [mres, rep] = convex_max_product(model, cn, cfg);
                row.converged = rep.converged;
                row.sweeps = rep.sweeps_used;
                row.dual_value = mres.dual_value;
                row.energy = mres.energy;
                row.certificate = certificate_name(mres.certificate);
            } else {
                RunConfig cfg;
                cfg.epsilon = solver.epsilon;
                cfg.tol = spec.tol;
                cfg.max_sweeps = spec.max_sweeps;
                RunOutput out = run(model, cn, cfg);
                row.converged = out.report.converged;
                row.sweeps = out.report.sweeps_used;
                if (lp) {
                    auto [x, ties] = decode(out.beliefs.log_b_i);
                    row.energy = energy_of_assignment(model, x);
                    if (convex)
                        row.dual_value = dual_objective(model, cn, solver.epsilon, out.state);
                    bool tie = false;
                    for (bool t : ties) tie = tie || t;
                    if (out.report.converged && out.beliefs.b_alpha_available &&
                        out.beliefs.consistency_residual > spec.tol)
                        row.certificate = certificate_name(Certificate::stalled_inconsistent);
                    else
                        row.certificate = certificate_name(
                            tie ? Certificate::ties_present : Certificate::integral_no_ties);
                } else {
                    double err = 0.0;
                    for (int i = 0; i < model.num_vars(); ++i) {
                        const double b1 = out.beliefs.log_b_i[i][1] == kNegInf
                                              ? 0.0
                                              : std::exp(out.beliefs.log_b_i[i][1]);
                        err += std::abs(b1 - exact[i][1]);
                    }
                    row.avg_l1_error = err / model.num_vars();
                    row.excluded = !row.converged;
                }
            }
            const auto t1 = std::chrono::steady_clock::now();
            row.wall_time = std::chrono::duration<double>(t1 - t0).count();
            result.rows[static_cast<std::size_t>(cell) * n_solvers + s] = std::move(row);
        }
    };

    int threads = spec.threads;
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads < 1) threads = 1;
        threads = std::min(threads, 8);
    }
    threads = std::min(threads, n_cells);
    if (threads <= 1) {
        for (int cell = 0; cell < n_cells; ++cell) run_cell(cell);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (int cell = next.fetch_add(1); cell < n_cells; cell = next.fetch_add(1))
                    run_cell(cell);
            });
        for (auto& th : pool) th.join();
    }

    // CSV body
    std::string csv = "trial,omega,solver,converged,sweeps,avg_l1_error,dual_value,energy,"
                      "certificate,excluded\n";
    for (const ExperimentRow& r : result.rows) {
        csv += std::to_string(r.trial) + "," + fmt12(r.omega) + "," + r.solver + "," +
               (r.converged ? "1" : "0") + "," + std::to_string(r.sweeps) + "," +
               fmt12(r.avg_l1_error) + "," + fmt12(r.dual_value) + "," + fmt12(r.energy) + "," +
               r.certificate + "," + (r.excluded ? "1" : "0") + "\n";
    }
    // summary block: per (omega within grid order, solver within spec order)
    for (double omega : spec.omegas) {
        for (const SolverSpec& solver : spec.solvers) {
            int total = 0, conv = 0, included = 0;
            double err = 0.0, dual = 0.0, energy = 0.0;
            int dual_n = 0, energy_n = 0;
            for (const ExperimentRow& r : result.rows) {
                if (r.omega != omega || r.solver != solver.label) continue;
                ++total;
                if (r.converged) ++conv;
                if (!lp && !r.excluded && !std::isnan(r.avg_l1_error)) {
                    err += r.avg_l1_error;
                    ++included;
                }
                if (lp && !std::isnan(r.dual_value)) {
                    dual += r.dual_value;
                    ++dual_n;
                }
                if (lp && !std::isnan(r.energy)) {
                    energy += r.energy;
                    ++energy_n;
                }
            }
            csv += "summary," + fmt12(omega) + "," + solver.label + ",";
            csv += fmt12(total ? static_cast<double>(conv) / total : kNaN) + ",";
            if (lp)
                csv += fmt12(dual_n ? dual / dual_n : kNaN) + "," +
                       fmt12(energy_n ? energy / energy_n : kNaN);
            else
                csv += fmt12(included ? err / included : kNaN) + "," +
                       std::to_string(included);
            csv += "\n";
        }
    }
    result.csv = std::move(csv);

    std::string tim = "trial,omega,solver,wall_time\n";
    for (const ExperimentRow& r : result.rows)
        tim += std::to_string(r.trial) + "," + fmt12(r.omega) + "," + r.solver + "," +
               fmt12(r.wall_time) + "\n";
    result.timings = std::move(tim);
    return result;
}

}  // namespace normprod
