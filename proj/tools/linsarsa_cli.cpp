// Command-line front end: simulate, chatter, converge, oracle, validate.
//
// Exit codes: 0 success, 2 invalid input or failed assumption check,
// 1 any other runtime error.

#include "linsarsa/linsarsa.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace linsarsa;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 1;

struct ProblemFlags {
    std::string mdp = "gordon";
    double reward_scale = 1.0;
    std::optional<double> gamma;
    std::string policy = "softmax";
    double epsilon = 0.1;
    double iota = 0.01;
    std::string c_gamma = "inf";
};

struct StepFlags {
    std::optional<double> alpha;
    std::string schedule;
    std::string variant = "sarsa";
    std::uint64_t steps = 1'000'000;
    std::string seeds = "0";
    std::uint64_t stride = 100;
};

double parse_radius(const std::string& text) { return io::radius_from_json(io::Json(text)); }

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    try {
        if (const auto dots = text.find(".."); dots != std::string::npos) {
            const auto lo = std::stoull(text.substr(0, dots));
            const auto hi = std::stoull(text.substr(dots + 2));
            detail::require(lo <= hi, "--seeds: empty range");
            for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
            return seeds;
        }
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = text.find(',', pos);
            seeds.push_back(std::stoull(text.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    } catch (const std::logic_error&) {
        throw ValidationError("--seeds: expected N, A..B or a comma list, got '" + text + "'");
    }
    return seeds;
}

LearningRateSchedule parse_schedule(const StepFlags& f, LearningRateSchedule fallback) {
    if (!f.schedule.empty()) {
        double c = 0, t0 = 0, eps = 0;
        char tail = 0;
        if (std::sscanf(f.schedule.c_str(), "%lf:%lf:%lf%c", &c, &t0, &eps, &tail) != 3)
            throw ValidationError("--schedule: expected c:t0:eps, got '" + f.schedule + "'");
        return LearningRateSchedule::polynomial(c, t0, eps);
    }
    if (f.alpha) return LearningRateSchedule::constant(*f.alpha);
    return fallback;
}

Variant parse_variant(const std::string& v) {
    if (v == "sarsa") return Variant::Sarsa;
    if (v == "expected" || v == "expected_sarsa") return Variant::ExpectedSarsa;
    throw ValidationError("--variant: expected sarsa or expected, got '" + v + "'");
}

PolicyOperator make_operator(const ProblemFlags& f) {
    if (f.policy == "greedy") return PolicyOperator::eps_greedy(f.epsilon);
    if (f.policy == "softmax") return PolicyOperator::eps_softmax(f.epsilon, f.iota);
    throw ValidationError("--policy: expected softmax or greedy, got '" + f.policy + "'");
}

Problem load_problem(const ProblemFlags& f) {
    if (f.mdp == "gordon") {
        Problem p = build_gordon_mdp(f.reward_scale, f.gamma.value_or(1.0));
        return p;
    }
    const io::Json doc = io::parse_json_file(f.mdp);
    Mdp mdp = io::mdp_from_json(doc);
    if (f.reward_scale != 1.0) mdp = mdp.with_reward_scale(f.reward_scale);
    if (f.gamma) mdp = mdp.with_gamma(*f.gamma);
    auto features = io::features_from_json(mdp, doc);
    if (!features) {
        const auto n = static_cast<Eigen::Index>(mdp.n_pairs());
        features.emplace(mdp, Matrix::Identity(n, n));
    }
    return Problem{std::move(mdp), std::move(*features)};
}

void add_problem_flags(CLI::App* app, ProblemFlags& f) {
    app->add_option("--mdp", f.mdp, "'gordon' or a JSON MDP file")->capture_default_str();
    app->add_option("--reward-scale", f.reward_scale, "reward multiplier")->capture_default_str();
    app->add_option("--gamma", f.gamma, "discount override");
    app->add_option("--policy", f.policy, "softmax or greedy")->capture_default_str();
    app->add_option("--epsilon", f.epsilon, "exploration floor")->capture_default_str();
    app->add_option("--iota", f.iota, "softmax temperature")->capture_default_str();
    app->add_option("--c-gamma", f.c_gamma, "projection radius, or inf")->capture_default_str();
}

void add_step_flags(CLI::App* app, StepFlags& f) {
    app->add_option("--alpha", f.alpha, "constant step size");
    app->add_option("--schedule", f.schedule, "polynomial step size c:t0:eps");
    app->add_option("--variant", f.variant, "sarsa or expected")->capture_default_str();
    app->add_option("--steps", f.steps, "iterations per run")->capture_default_str();
    app->add_option("--seeds", f.seeds, "N, A..B or a comma list")->capture_default_str();
    app->add_option("--stride", f.stride, "record every n-th iterate")->capture_default_str();
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") std::cout << text;
    else io::write_file(out, text);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const ProblemFlags& pf, const StepFlags& sf, const std::string& config_path, const std::string& out) {
    const Problem problem = load_problem(pf);
    SarsaConfig cfg;
    if (!config_path.empty()) cfg = io::sarsa_config_from_json(io::parse_json_file(config_path));
    else {
        cfg.op = make_operator(pf);
        cfg.projection_radius = parse_radius(pf.c_gamma);
        cfg.schedule = parse_schedule(sf, LearningRateSchedule::constant(0.01));
        cfg.variant = parse_variant(sf.variant);
        cfg.steps = sf.steps;
        cfg.record_stride = sf.stride;
    }
    const auto seeds = config_path.empty() ? parse_seeds(sf.seeds) : std::vector<std::uint64_t>{cfg.seed};
    for (auto seed : seeds) {
        cfg.seed = seed;
        std::string csv = io::trajectory_header(problem.features.dim());
        run(
            cfg, problem.mdp, problem.features, [&](const TrajectoryRecord& r) { io::append_trajectory_row(csv, r); },
            [](std::uint64_t, const Vector&, const StepResult&) {});
        if (seeds.size() == 1) emit(out, csv);
        else {
            detail::require(!out.empty() && out != "-", "simulate: several seeds need --out DIR");
            io::write_file(std::filesystem::path(out) / ("seed_" + std::to_string(seed) + ".csv"), csv);
        }
    }
    return 0;
}

ChatterSpec chatter_spec_from_json(const io::Json& j) {
    ChatterSpec s;
    try {
        s.name = j.value("name", s.name);
        if (j.contains("reward_scales")) s.reward_scales = j.at("reward_scales").get<std::vector<double>>();
        if (j.contains("temperatures")) s.temperatures = j.at("temperatures").get<std::vector<double>>();
        s.include_greedy = j.value("include_greedy", s.include_greedy);
        s.epsilon = j.value("epsilon", s.epsilon);
        s.gamma = j.value("gamma", s.gamma);
        if (j.contains("schedule")) s.schedule = io::schedule_from_json(j.at("schedule"));
        if (j.contains("c_gamma")) s.c_gamma = io::radius_from_json(j.at("c_gamma"));
        if (j.contains("variant")) s.variant = parse_variant(j.at("variant").get<std::string>());
        s.steps = j.value("steps", s.steps);
        if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        s.record_stride = j.value("record_stride", s.record_stride);
    } catch (const io::Json::exception& e) {
        throw ValidationError(std::string("chatter spec: ") + e.what());
    }
    return s;
}

int cmd_chatter(CLI::App* app, const ProblemFlags& pf, const StepFlags& sf, const std::vector<double>& scales,
                const std::vector<double>& iotas, bool greedy, const std::string& config_path, const std::string& out,
                unsigned workers) {
    ChatterSpec spec;
    if (!config_path.empty()) spec = chatter_spec_from_json(io::parse_json_file(config_path));
    auto given = [&](const char* name) { return app->count(name) > 0; };
    if (given("--reward-scale")) spec.reward_scales = scales;
    if (given("--iota")) spec.temperatures = iotas;
    if (given("--greedy")) spec.include_greedy = greedy;
    if (given("--epsilon")) spec.epsilon = pf.epsilon;
    if (given("--gamma")) spec.gamma = *pf.gamma;
    if (given("--c-gamma")) spec.c_gamma = parse_radius(pf.c_gamma);
    if (given("--alpha") || given("--schedule")) spec.schedule = parse_schedule(sf, spec.schedule);
    if (given("--variant")) spec.variant = parse_variant(sf.variant);
    if (given("--steps")) spec.steps = sf.steps;
    if (given("--seeds")) spec.seeds = parse_seeds(sf.seeds);
    if (given("--stride")) spec.record_stride = sf.stride;

    const ChatterResults res = run_chattering_experiment(spec, workers);
    emit_chatter_report(res, out);
    std::cout << chatter_summary_csv(res);
    return 0;
}

int cmd_converge(const ProblemFlags& pf, const StepFlags& sf, std::size_t samples, const std::string& out,
                 unsigned workers) {
    const Problem problem = load_problem(pf);
    const PolicyOperator op = make_operator(pf);
    AnalysisOptions opt;
    opt.c_gamma = parse_radius(pf.c_gamma);
    opt.n_samples = samples;
    const AnalysisReport oracle = analyze(problem.mdp, problem.features, op, opt);

    ConvergenceSpec spec;
    spec.op = op;
    spec.c_gamma = opt.c_gamma;
    spec.schedule = parse_schedule(sf, spec.schedule);
    spec.variant = parse_variant(sf.variant);
    spec.steps = sf.steps;
    spec.seeds = parse_seeds(sf.seeds);
    const RateTable table = run_convergence_study(spec, problem.mdp, problem.features, oracle, workers);

    const std::filesystem::path dir(out);
    io::write_file(dir / "oracle.json", to_json(oracle).dump(2) + "\n");
    io::write_file(dir / "rate.json", to_json(table).dump(2) + "\n");
    io::write_file(dir / "rate.csv", rate_table_csv(table));
    std::cout << "fitted slope " << io::number(table.fitted_slope) << " over [" << table.fit_lo << ", " << table.fit_hi
              << "], predicted -" << io::number(table.predicted.power) << " (" << table.predicted.label << ")\n"
              << "within R* " << io::number(table.frac_within_r_star) << ", within 2C " << io::number(table.frac_within_2c)
              << "\n";
    return 0;
}

int cmd_oracle(const ProblemFlags& pf, std::size_t samples, std::uint64_t sample_seed, double sample_radius,
               const std::string& out) {
    const Problem problem = load_problem(pf);
    AnalysisOptions opt;
    opt.c_gamma = parse_radius(pf.c_gamma);
    opt.n_samples = samples;
    opt.seed = sample_seed;
    opt.sampling_radius = sample_radius;
    const AnalysisReport rep = analyze(problem.mdp, problem.features, make_operator(pf), opt);
    emit(out, to_json(rep).dump(2) + "\n");
    return 0;
}

int cmd_validate(const ProblemFlags& pf, std::size_t samples, const std::string& out) {
    const Problem problem = load_problem(pf);
    const Mdp mdp = problem.mdp.gamma() < 1.0 ? problem.mdp : problem.mdp.with_gamma(0.99);
    const PolicyOperator op = make_operator(pf);
    const double c_gamma = parse_radius(pf.c_gamma);
    io::Json checks = io::Json::array();
    bool all = true;
    auto check = [&](const std::string& name, bool ok, const std::string& what) {
        checks.push_back({{"check", name}, {"passed", ok}, {"detail", what}});
        all = all && ok;
    };

    const Matrix p_uniform = state_action_transition(mdp, PolicyTable::uniform(mdp));
    const bool irreducible = unit_eigenvalues(p_uniform) == 1;
    const bool aperiodic = unit_modulus_eigenvalues(p_uniform) == 1;
    check("ergodicity", irreducible && aperiodic,
          std::string("uniform-policy chain ") + (irreducible ? "irreducible" : "reducible") + ", " +
              (aperiodic ? "aperiodic" : "periodic"));

    AnalysisOptions opt;
    opt.c_gamma = c_gamma;
    opt.n_samples = samples;
    const AnalysisReport rep = analyze(mdp, problem.features, op, opt);
    check("lipschitz", rep.normalized.region.applicable,
          "L_w = " + io::number(rep.normalized.l_w.value) +
              (rep.normalized.region.note.empty() ? std::string() : "; " + rep.normalized.region.note));

    const Matrix& a = rep.at_fixed_point.A_pi;
    Eigen::SelfAdjointEigenSolver<Matrix> es(a + a.transpose(), Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    check("negative_definite", top < 0.0, "max eigenvalue of A + A^T at w* = " + io::number(top));

    const ThetaSampling sampling{rep.sampling_radius, samples, 0, {rep.fixed_point.w}};
    const PseudoContractionReport pc = pseudo_contraction_check(mdp, problem.features, op, 0.0, sampling, 1.0);
    check("pseudo_contraction", pc.passed,
          std::to_string(pc.violations) + " violations in " + std::to_string(pc.checked) + " pairs at alpha " +
              io::number(pc.alpha) + ", kappa " + io::number(pc.kappa) + ", max ratio " + io::number(pc.max_ratio));

    emit(out, io::Json{{"passed", all}, {"checks", checks}, {"gamma", io::rounded(mdp.gamma())}}.dump(2) + "\n");
    return all ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Projected linear SARSA: simulation, chattering sweeps, rate studies and oracles"};
    app.require_subcommand(1);

    ProblemFlags pf;
    StepFlags sf;
    std::string out, config;
    std::size_t samples = 256;
    unsigned workers = 0;

    auto* simulate = app.add_subcommand("simulate", "single run, trajectory CSV");
    add_problem_flags(simulate, pf);
    add_step_flags(simulate, sf);
    simulate->add_option("--config", config, "SarsaConfig JSON (replaces policy and step flags)");
    simulate->add_option("--out", out, "CSV file, or directory for several seeds");

    std::vector<double> scales{0.1, 1.0, 4.0}, iotas{0.01, 0.1, 1.0};
    bool greedy = false;
    auto* chatter = app.add_subcommand("chatter", "temperature and reward-scale sweep on the diagnostic MDP");
    chatter->add_option("--reward-scale", scales, "reward multipliers")->delimiter(',');
    chatter->add_option("--iota", iotas, "softmax temperatures")->delimiter(',');
    chatter->add_flag("--greedy", greedy, "also run eps-greedy");
    chatter->add_option("--epsilon", pf.epsilon, "exploration floor");
    chatter->add_option("--gamma", pf.gamma, "discount");
    chatter->add_option("--c-gamma", pf.c_gamma, "projection radius, or inf");
    add_step_flags(chatter, sf);
    chatter->add_option("--config", config, "experiment spec JSON; flags override it");
    chatter->add_option("--out", out, "output directory")->required();
    chatter->add_option("--workers", workers, "threads (0 = all cores)");

    ProblemFlags cpf;
    cpf.reward_scale = 0.1;
    cpf.gamma = 0.99;
    cpf.iota = 1.0;
    cpf.c_gamma = "10";
    StepFlags csf;
    csf.schedule = "1:100:0.6";
    csf.seeds = "0..29";
    auto* converge = app.add_subcommand("converge", "multi-seed distance to the oracle fixed point");
    add_problem_flags(converge, cpf);
    add_step_flags(converge, csf);
    converge->add_option("--samples", samples, "theta samples for theory constants")->capture_default_str();
    converge->add_option("--out", out, "output directory")->required();
    converge->add_option("--workers", workers, "threads (0 = all cores)");

    std::uint64_t sample_seed = 0;
    double sample_radius = 10.0;
    auto* oracle = app.add_subcommand("oracle", "fixed point, exact matrices and theory constants as JSON");
    add_problem_flags(oracle, pf);
    oracle->add_option("--samples", samples, "theta samples")->capture_default_str();
    oracle->add_option("--sample-seed", sample_seed, "theta sampling seed")->capture_default_str();
    oracle->add_option("--sample-radius", sample_radius, "theta ball radius when C_Gamma is inf")->capture_default_str();
    oracle->add_option("--out", out, "JSON file (default stdout)");

    auto* validate = app.add_subcommand("validate", "assumption checks; exit 2 if any fails");
    add_problem_flags(validate, pf);
    validate->add_option("--samples", samples, "theta samples")->capture_default_str();
    validate->add_option("--out", out, "JSON file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*simulate) return cmd_simulate(pf, sf, config, out);
        if (*chatter) return cmd_chatter(chatter, pf, sf, scales, iotas, greedy, config, out, workers);
        if (*converge) return cmd_converge(cpf, csf, samples, out, workers);
        if (*oracle) return cmd_oracle(pf, samples, sample_seed, sample_radius, out);
        if (*validate) return cmd_validate(pf, samples, out);
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ErgodicityError& e) {
        std::cerr << "assumption violated: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
