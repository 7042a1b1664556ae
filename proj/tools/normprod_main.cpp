#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "normprod/experiment.hpp"
#include "normprod/map_lp.hpp"
#include "normprod/oracle.hpp"

namespace {

using namespace normprod;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << text;
}

std::string fmt12(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

struct CountingChoice {
    std::string name = "bethe";
    bool apply_convexify = false;

    CountingNumbers build(const Model& model) const {
        CountingNumbers cn;
        if (name == "bethe") cn = bethe(model);
        else if (name == "trivial") cn = trivial_convex(model);
        else if (name == "nmplp") cn = nmplp(model);
        else if (name == "l2") cn = l2_convex(model);
        else if (name == "trw")
            cn = trw_from_edge_probabilities(model, spanning_tree_edge_probabilities(model));
        else if (name.rfind("file:", 0) == 0)
            cn = read_counting_json(model, slurp(name.substr(5)));
        else
            throw ValidationError("unknown counting preset '" + name +
                                  "' (want bethe|trw|l2|trivial|nmplp|file:PATH)");
        if (apply_convexify) cn = convexify(model, cn);
        return cn;
    }
};

struct CommonModelOpts {
    std::string model_path;
    bool allow_overlap = false;

    Model load() const { return read_uai(slurp(model_path), !allow_overlap); }

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", model_path, "UAI MARKOV model file")->required();
        cmd->add_flag("--allow-overlap", allow_overlap,
                      "permit factor pairs sharing more than one variable");
    }
};

int cmd_gen(bool grid, int rows, int cols, int nvars, int states, const std::string& field,
            const std::string& coupling, std::uint64_t seed, const std::string& out) {
    const FieldSpec f = FieldSpec::parse(field);
    const CouplingSpec c = CouplingSpec::parse(coupling);
    const Model m = grid ? grid_model(rows, cols, states, f, c, seed)
                         : complete_graph_model(nvars, states, f, c, seed);
    const std::string text = write_uai(m);
    if (out.empty())
        std::cout << text;
    else
        spill(out, text);
    std::cerr << "generated " << m.num_vars() << " variables, " << m.num_factors()
              << " factors\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"norm-product belief propagation: marginals, MAP and LP relaxation\n"
                 "on discrete factor graphs, with exact oracles and a benchmark harness"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a random model as UAI text");
    gen->require_subcommand(1);
    int rows = 10, cols = 10, nvars = 10, states = 2;
    std::string field = "uniform:-0.05,0.05", coupling = "attractive:1.0", out_path, trace_path;
    std::uint64_t seed = 0;
    auto* gen_grid = gen->add_subcommand("grid", "4-connected grid");
    gen_grid->add_option("--rows", rows);
    gen_grid->add_option("--cols", cols);
    auto* gen_complete = gen->add_subcommand("complete", "complete graph");
    gen_complete->add_option("--num-vars", nvars);
    for (CLI::App* g : {gen_grid, gen_complete}) {
        g->add_option("--states", states, "states per variable");
        g->add_option("--field", field, "gaussian:S or uniform:A,B");
        g->add_option("--coupling", coupling, "gaussian:S, attractive:W or mixed:W");
        g->add_option("--seed", seed);
        g->add_option("-o,--out", out_path, "output file (stdout if omitted)");
    }

    // shared solver options
    CommonModelOpts infer_model, map_model, exact_model;
    CountingChoice counting;
    double epsilon = 1.0, tol = 1e-8;
    int max_sweeps = 10000;
    std::string metric = "auto";

    auto* infer = app.add_subcommand("infer", "norm-product marginals");
    infer_model.attach(infer);
    infer->add_option("--counting", counting.name, "bethe|trw|l2|trivial|nmplp|file:PATH");
    infer->add_flag("--convexify", counting.apply_convexify,
                    "rewrite the counting setting into convex form first");
    infer->add_option("--epsilon", epsilon, "temperature (0 = max limit)");
    infer->add_option("--tol", tol);
    infer->add_option("--max-sweeps", max_sweeps);
    infer->add_option("--metric", metric, "auto|message|dual");
    infer->add_option("--out", out_path, "beliefs CSV");
    infer->add_option("--trace", trace_path, "per-sweep trace CSV");
    std::string counting_out;
    infer->add_option("--counting-out", counting_out,
                      "dump the counting numbers in use as JSON");

    auto* map = app.add_subcommand("map", "MAP estimation");
    map->require_subcommand(1);
    auto* map_cmp = map->add_subcommand("cmp", "convex-max-product (epsilon = 0)");
    auto* map_anneal = map->add_subcommand("anneal", "epsilon-annealed LP relaxation");
    AnnealSchedule sched;
    map_model.attach(map_cmp);
    map_model.attach(map_anneal);
    for (CLI::App* c : {map_cmp, map_anneal}) {
        c->add_option("--counting", counting.name, "convex preset or file:PATH");
        c->add_flag("--convexify", counting.apply_convexify);
        c->add_option("--tol", tol);
        c->add_option("--max-sweeps", max_sweeps);
        c->add_option("--out", out_path, "assignment CSV (var,state,tie)");
        c->add_option("--trace", trace_path, "per-sweep trace CSV");
    }
    map_anneal->add_option("--eps-start", sched.eps_start);
    map_anneal->add_option("--ratio", sched.ratio);
    map_anneal->add_option("--eps-min", sched.eps_min);

    auto* exact = app.add_subcommand("exact", "exact inference oracle");
    exact_model.attach(exact);
    std::string method = "ve";
    exact->add_option("--method", method, "enum|ve");
    exact->add_option("--out", out_path, "marginals CSV (source=exact)");

    auto* exp = app.add_subcommand("experiment", "seeded benchmark harness");
    std::string kind = "marginals_grid", omega_text, solvers_text, coupling_kind, timings_path;
    ExperimentSpec spec;
    exp->add_option("--kind", kind,
                    "marginals_grid|marginals_complete|lp_binary_grid|lp_ternary_grid");
    exp->add_option("--trials", spec.trials);
    exp->add_option("--omega", omega_text, "start:stop:step or comma list");
    exp->add_option("--solvers", solvers_text,
                    "comma list of preset[@eps] or anneal:preset@eps_min");
    exp->add_option("--coupling", coupling_kind, "attractive|mixed|gaussian");
    exp->add_option("--rows", spec.grid_rows);
    exp->add_option("--cols", spec.grid_cols);
    exp->add_option("--num-vars", spec.complete_vars);
    exp->add_option("--seed", spec.base_seed);
    exp->add_option("--tol", spec.tol);
    exp->add_option("--max-sweeps", spec.max_sweeps);
    exp->add_option("--threads", spec.threads, "worker threads (0 = auto); output is identical");
    exp->add_option("--out", out_path, "experiment CSV")->required();
    exp->add_option("--timings", timings_path, "wall-time CSV (non-deterministic)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen_grid->parsed())
            return cmd_gen(true, rows, cols, nvars, states, field, coupling, seed, out_path);
        if (gen_complete->parsed())
            return cmd_gen(false, rows, cols, nvars, states, field, coupling, seed, out_path);

        if (infer->parsed()) {
            const Model m = infer_model.load();
            const CountingNumbers cn = counting.build(m);
            RunConfig cfg;
            cfg.epsilon = epsilon;
            cfg.tol = tol;
            cfg.max_sweeps = max_sweeps;
            if (metric == "message") cfg.metric = ConvergenceMetric::message_delta;
            else if (metric == "dual") cfg.metric = ConvergenceMetric::dual_delta;
            else if (metric != "auto") throw ValidationError("unknown metric '" + metric + "'");
            cfg.trace_every = trace_path.empty() ? 0 : 1;
            if (!counting_out.empty()) spill(counting_out, write_counting_json(m, cn));
            RunOutput out = run(m, cn, cfg);
            if (!out_path.empty()) spill(out_path, beliefs_csv(m, out.beliefs, "engine"));
            if (!trace_path.empty()) spill(trace_path, trace_csv(out.report));
            const bool convex = classify(m, cn) == CountingClass::convex;
            std::cout << "converged=" << (out.report.converged ? "true" : "false")
                      << " sweeps=" << out.report.sweeps_used << " dual="
                      << fmt12(convex ? dual_objective(m, cn, epsilon, out.state) : kNaN)
                      << " primal="
                      << fmt12(out.beliefs.b_alpha_available
                                   ? primal_objective(m, cn, epsilon, out.beliefs)
                                   : kNaN)
                      << " consistency_residual=" << fmt12(out.beliefs.consistency_residual)
                      << "\n";
            return 0;
        }

        if (map_cmp->parsed()) {
            const Model m = map_model.load();
            const CountingNumbers cn = counting.build(m);
            RunConfig cfg;
            cfg.tol = tol;
            cfg.max_sweeps = max_sweeps;
            cfg.trace_every = trace_path.empty() ? 0 : 1;
            auto [res, rep] = convex_max_product(m, cn, cfg);
            if (!out_path.empty()) spill(out_path, map_csv(res));
            if (!trace_path.empty()) spill(trace_path, trace_csv(rep));
            std::cout << "converged=" << (rep.converged ? "true" : "false")
                      << " sweeps=" << rep.sweeps_used << " dual=" << fmt12(res.dual_value)
                      << " energy=" << fmt12(res.energy)
                      << " certificate=" << certificate_name(res.certificate) << "\n";
            return 0;
        }

        if (map_anneal->parsed()) {
            const Model m = map_model.load();
            const CountingNumbers cn = counting.build(m);
            sched.tol = tol;
            sched.max_sweeps = max_sweeps;
            AnnealResult ar = anneal_lp(m, cn, sched);
            if (!out_path.empty()) {
                MapResult res;
                res.assignment = ar.decoded;
                res.tie_flags = ar.tie_flags;
                spill(out_path, map_csv(res));
            }
            if (!trace_path.empty()) spill(trace_path, trace_csv(ar.report));
            bool tie = false;
            for (bool t : ar.tie_flags) tie = tie || t;
            std::cout << "converged=" << (ar.report.converged ? "true" : "false")
                      << " sweeps=" << ar.report.sweeps_used
                      << " dual=" << fmt12(ar.final_dual) << " primal="
                      << fmt12(ar.final_primal) << " delta=" << fmt12(ar.delta)
                      << " energy=" << fmt12(energy_of_assignment(m, ar.decoded))
                      << " certificate=" << (tie ? "ties_present" : "integral_no_ties") << "\n";
            return 0;
        }

        if (exact->parsed()) {
            const Model m = exact_model.load();
            ExactResult res;
            if (method == "enum") res = enumerate_exact(m);
            else if (method == "ve") res = ve_exact(m);
            else throw ValidationError("unknown method '" + method + "' (want enum|ve)");
            if (!out_path.empty())
                spill(out_path, beliefs_csv(m, beliefs_from_exact(m, res), "exact"));
            std::cout << "log_z=" << fmt12(res.log_z) << " map_energy=" << fmt12(res.map_energy)
                      << " map=";
            for (std::size_t i = 0; i < res.map_assignment.states.size(); ++i) {
                if (i) std::cout << ';';
                std::cout << res.map_assignment.states[i];
            }
            std::cout << "\n";
            return 0;
        }

        if (exp->parsed()) {
            spec.kind = parse_experiment_kind(kind);
            if (!omega_text.empty()) spec.omegas = parse_omega_grid(omega_text);
            if (!solvers_text.empty()) {
                std::stringstream ss(solvers_text);
                std::string tok;
                while (std::getline(ss, tok, ','))
                    spec.solvers.push_back(SolverSpec::parse(tok));
            }
            if (!coupling_kind.empty()) {
                if (coupling_kind == "attractive") spec.coupling = CouplingSpec::Kind::attractive;
                else if (coupling_kind == "mixed") spec.coupling = CouplingSpec::Kind::mixed;
                else if (coupling_kind == "gaussian") spec.coupling = CouplingSpec::Kind::gaussian;
                else throw ValidationError("unknown coupling '" + coupling_kind + "'");
            }
            ExperimentResult res = run_experiment(spec);
            spill(out_path, res.csv);
            if (!timings_path.empty()) spill(timings_path, res.timings);
            std::cerr << res.rows.size() << " rows written to " << out_path << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
