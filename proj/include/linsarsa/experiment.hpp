#pragma once

#include "linsarsa/analysis.hpp"
#include "linsarsa/io.hpp"
#include "linsarsa/oracle.hpp"
#include "linsarsa/sarsa.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace linsarsa {

/// Calls task(i) for i in [0, n) on a small thread pool. Each task must only
/// write to its own slot; the first exception is rethrown after joining.
template <class Task>
void parallel_for(std::size_t n, Task&& task, unsigned max_workers = 0) {
    unsigned workers = max_workers ? max_workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < workers; ++k) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Running mean/variance (Welford).
class RunningStats {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
        min_ = std::min(min_, x);
        max_ = std::max(max_, x);
    }
    std::uint64_t count() const { return n_; }
    double mean() const { return n_ ? mean_ : 0.0; }
    /// Population variance.
    double variance() const { return n_ ? m2_ / static_cast<double>(n_) : 0.0; }
    double min() const { return min_; }
    double max() const { return max_; }

private:
    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
    double min_ = kInf;
    double max_ = -kInf;
};

/// Counts sign changes of a sequence, ignoring exact zeros.
class SignChangeCounter {
public:
    void add(double x) {
        const int s = (x > 0.0) - (x < 0.0);
        if (s == 0) return;
        if (last_ != 0 && s != last_) ++changes_;
        last_ = s;
    }
    std::uint64_t changes() const { return changes_; }

private:
    int last_ = 0;
    std::uint64_t changes_ = 0;
};

// ---------------------------------------------------------------------------
// Chattering experiment
// ---------------------------------------------------------------------------

/// Sweep over temperatures and reward multipliers on the diagnostic MDP.
/// Defaults: eps = 0.1, gamma = 1, alpha = 0.01, no projection.
struct ChatterSpec {
    std::string name = "chatter";
    std::vector<double> reward_scales = {0.1, 1.0, 4.0};
    std::vector<double> temperatures = {0.01, 0.1, 1.0};
    bool include_greedy = false;
    double epsilon = 0.1;
    double gamma = 1.0;
    LearningRateSchedule schedule = LearningRateSchedule::constant(0.01);
    double c_gamma = kInf;
    Variant variant = Variant::Sarsa;
    std::uint64_t steps = 1'000'000;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::uint64_t record_stride = 100;

    void validate() const {
        detail::require(!seeds.empty(), "chatter: seeds must be non-empty");
        detail::require(steps >= 1, "chatter: steps must be at least 1");
        detail::require(!reward_scales.empty() && (!temperatures.empty() || include_greedy),
                        "chatter: sweep must be non-empty");
    }
};

/// Per-run statistics of the tracked value q(s0, a_U) / reward_scale.
struct ChatterSummary {
    std::string run_id;
    PolicyOperator op;
    double reward_scale = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;
    std::uint64_t sign_changes = 0;  // of q(s0,a_U) - q(s0,a_L), final half
    double sup_norm = 0.0;           // sup_t ||w_t||
    double final_min = 0.0, final_max = 0.0, final_mean = 0.0;  // tracked, final half
    double first_half_var = 0.0;
    double final_half_var = 0.0;
    double tail_var = 0.0;           // tracked, final 10%
};

struct ChatterRun {
    ChatterSummary summary;
    std::string csv;
};

struct ChatterResults {
    ChatterSpec spec;
    std::vector<ChatterRun> runs;  // sorted by run_id
};

inline std::string chatter_run_id(const PolicyOperator& op, double reward_scale, std::uint64_t seed) {
    const std::string policy = op.kind == PolicyKind::EpsGreedy ? "greedy" : "iota" + io::number(op.temperature);
    return "rs" + io::number(reward_scale) + "_" + policy + "_seed" + std::to_string(seed);
}

inline std::string chatter_csv_header(Eigen::Index dim) {
    std::string h = io::trajectory_header(dim);
    h.pop_back();
    return h + ",tracked,iota,reward_scale,seed\n";
}

/// One run of the chattering protocol; statistics see every step.
inline ChatterRun run_chatter_once(const PolicyOperator& op, double reward_scale, std::uint64_t seed,
                                   const ChatterSpec& spec) {
    const Problem problem = build_gordon_mdp(reward_scale, spec.gamma);
    SarsaConfig cfg;
    cfg.projection_radius = spec.c_gamma;
    cfg.steps = spec.steps;
    cfg.seed = seed;
    cfg.op = op;
    cfg.schedule = spec.schedule;
    cfg.variant = spec.variant;
    cfg.record_stride = spec.record_stride;

    ChatterRun out;
    ChatterSummary& s = out.summary;
    s.run_id = chatter_run_id(op, reward_scale, seed);
    s.op = op;
    s.reward_scale = reward_scale;
    s.seed = seed;
    s.steps = spec.steps;

    const auto& x = problem.features;
    const std::uint64_t half = spec.steps / 2;
    const std::uint64_t tail_start = spec.steps - spec.steps / 10;
    RunningStats first, final_half, tail;
    SignChangeCounter signs;
    auto tracked = [&](const Vector& w) { return x.row(gordon::kPairUp).dot(w) / reward_scale; };
    auto observe_value = [&](std::uint64_t t, const Vector& w) {
        const double v = tracked(w);
        s.sup_norm = std::max(s.sup_norm, w.norm());
        if (t < half) first.add(v);
        if (t >= half) {
            final_half.add(v);
            signs.add(x.row(gordon::kPairUp).dot(w) - x.row(gordon::kPairLeft).dot(w));
        }
        if (t >= tail_start) tail.add(v);
    };

    const std::string suffix_op = op.kind == PolicyKind::EpsGreedy ? "nan" : io::number(op.temperature);
    const std::string suffix = "," + suffix_op + "," + io::number(reward_scale) + "," + std::to_string(seed) + "\n";
    out.csv = chatter_csv_header(x.dim());
    out.csv.reserve(out.csv.size() + (spec.steps / spec.record_stride + 1) * 120);
    bool initial = true;
    run(
        cfg, problem.mdp, x,
        [&](const TrajectoryRecord& r) {
            if (initial) {
                observe_value(0, r.w);
                initial = false;
            }
            io::append_trajectory_row(out.csv, r);
            out.csv.pop_back();
            out.csv += "," + io::number(tracked(r.w)) + suffix;
        },
        [&](std::uint64_t t, const Vector& w, const StepResult&) { observe_value(t, w); });

    s.sign_changes = signs.changes();
    s.final_min = final_half.min();
    s.final_max = final_half.max();
    s.final_mean = final_half.mean();
    s.first_half_var = first.variance();
    s.final_half_var = final_half.variance();
    s.tail_var = tail.variance();
    return out;
}

inline ChatterResults run_chattering_experiment(const ChatterSpec& spec, unsigned workers = 0) {
    spec.validate();
    std::vector<PolicyOperator> ops;
    for (double iota : spec.temperatures) ops.push_back(PolicyOperator::eps_softmax(spec.epsilon, iota));
    if (spec.include_greedy) ops.push_back(PolicyOperator::eps_greedy(spec.epsilon));

    struct Job {
        PolicyOperator op;
        double reward_scale;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (double rs : spec.reward_scales)
        for (const auto& op : ops)
            for (auto seed : spec.seeds) jobs.push_back({op, rs, seed});

    ChatterResults res;
    res.spec = spec;
    res.runs.resize(jobs.size());
    parallel_for(
        jobs.size(), [&](std::size_t i) { res.runs[i] = run_chatter_once(jobs[i].op, jobs[i].reward_scale, jobs[i].seed, spec); },
        workers);
    std::sort(res.runs.begin(), res.runs.end(),
              [](const ChatterRun& a, const ChatterRun& b) { return a.summary.run_id < b.summary.run_id; });
    return res;
}

struct MonotonicityProbe {
    bool holds = true;
    std::vector<std::pair<double, double>> mean_tail_var;  // (iota, seed-averaged tail variance)
    std::string detail;
};

/// Seed-averaged tail variance at reward scale 1 should not increase with
/// temperature. Reported, never enforced.
inline MonotonicityProbe monotonicity_probe(const ChatterResults& res) {
    MonotonicityProbe p;
    std::vector<double> iotas = res.spec.temperatures;
    std::sort(iotas.begin(), iotas.end());
    for (double iota : iotas) {
        RunningStats st;
        for (const auto& r : res.runs)
            if (r.summary.reward_scale == 1.0 && r.summary.op.kind == PolicyKind::EpsSoftmax &&
                r.summary.op.temperature == iota)
                st.add(r.summary.tail_var);
        if (st.count()) p.mean_tail_var.emplace_back(iota, st.mean());
    }
    for (std::size_t i = 1; i < p.mean_tail_var.size(); ++i) {
        if (p.mean_tail_var[i].second > p.mean_tail_var[i - 1].second) {
            p.holds = false;
            p.detail += "tail variance rises from iota " + io::number(p.mean_tail_var[i - 1].first) + " to " +
                        io::number(p.mean_tail_var[i].first) + "; ";
        }
    }
    if (p.mean_tail_var.size() < 2) p.detail = "fewer than two temperatures at reward scale 1";
    return p;
}

inline std::string chatter_summary_csv(const ChatterResults& res) {
    std::string out = "run_id,iota,reward_scale,seed,sign_changes,sup_norm,tail_var\n";
    for (const auto& r : res.runs) {
        const auto& s = r.summary;
        out += s.run_id + ',' + (s.op.kind == PolicyKind::EpsGreedy ? "nan" : io::number(s.op.temperature)) + ',' +
               io::number(s.reward_scale) + ',' + std::to_string(s.seed) + ',' + std::to_string(s.sign_changes) +
               ',' + io::number(s.sup_norm) + ',' + io::number(s.tail_var) + '\n';
    }
    return out;
}

inline io::Json chatter_summary_json(const ChatterResults& res) {
    using io::rounded;
    const auto& sp = res.spec;
    io::Json j;
    j["name"] = sp.name;
    j["rng"] = std::string(Rng::kName);
    std::vector<io::Json> iotas;
    for (double t : sp.temperatures) iotas.push_back(rounded(t));
    std::vector<io::Json> scales;
    for (double r : sp.reward_scales) scales.push_back(rounded(r));
    j["spec"] = {{"epsilon", rounded(sp.epsilon)},
                 {"gamma", rounded(sp.gamma)},
                 {"schedule", io::to_json(sp.schedule)},
                 {"c_gamma", std::isinf(sp.c_gamma) ? io::Json("inf") : rounded(sp.c_gamma)},
                 {"variant", sp.variant == Variant::Sarsa ? "sarsa" : "expected_sarsa"},
                 {"steps", sp.steps},
                 {"seeds", sp.seeds},
                 {"record_stride", sp.record_stride},
                 {"temperatures", iotas},
                 {"reward_scales", scales},
                 {"include_greedy", sp.include_greedy}};
    j["labels"] = {"temperatures other than 0.01 are extra sweep points chosen here",
                   "reward scale 1.0 is an added baseline chosen here",
                   "tracked value is q(s0,a_U) divided by the reward scale"};
    io::Json runs = io::Json::array();
    for (const auto& r : res.runs) {
        const auto& s = r.summary;
        runs.push_back({{"run_id", s.run_id},
                        {"operator", io::to_json(s.op)},
                        {"reward_scale", rounded(s.reward_scale)},
                        {"seed", s.seed},
                        {"steps", s.steps},
                        {"sign_changes", s.sign_changes},
                        {"sup_norm", rounded(s.sup_norm)},
                        {"final_half_min", rounded(s.final_min)},
                        {"final_half_max", rounded(s.final_max)},
                        {"final_half_mean", rounded(s.final_mean)},
                        {"first_half_var", rounded(s.first_half_var)},
                        {"final_half_var", rounded(s.final_half_var)},
                        {"tail_var", rounded(s.tail_var)}});
    }
    j["runs"] = runs;
    const MonotonicityProbe probe = monotonicity_probe(res);
    io::Json means = io::Json::array();
    for (const auto& [iota, v] : probe.mean_tail_var) means.push_back({{"iota", rounded(iota)}, {"mean_tail_var", rounded(v)}});
    j["monotonicity_probe"] = {{"holds", probe.holds}, {"mean_tail_var", means}, {"detail", probe.detail}};
    return j;
}

/// Writes runs/<run_id>.csv, summary.csv and summary.json under `dir`.
inline void emit_chatter_report(const ChatterResults& res, const std::filesystem::path& dir) {
    for (const auto& r : res.runs) io::write_file(dir / "runs" / (r.summary.run_id + ".csv"), r.csv);
    io::write_file(dir / "summary.csv", chatter_summary_csv(res));
    io::write_file(dir / "summary.json", chatter_summary_json(res).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Convergence-rate study
// ---------------------------------------------------------------------------

struct ConvergenceSpec {
    PolicyOperator op = PolicyOperator::eps_softmax(0.1, 1.0);
    LearningRateSchedule schedule = LearningRateSchedule::polynomial(1.0, 100.0, 0.6);
    double c_gamma = 10.0;
    Variant variant = Variant::Sarsa;
    std::uint64_t steps = 1'000'000;
    std::vector<std::uint64_t> seeds;
    std::size_t grid_points = 61;
    double burn_in_fraction = 0.2;
    /// First step included in the slope fit; 0 selects max(10 t0, steps/1000).
    std::uint64_t fit_start = 0;
    /// A decade whose mean distance is at least this fraction of the previous
    /// decade's mean starts the plateau.
    double plateau_ratio = 0.8;
};

struct RateTable {
    std::vector<std::uint64_t> grid;
    std::vector<double> mean_distance;
    Vector w_star;
    std::size_t n_seeds = 0;
    double fitted_slope = 0.0;
    std::uint64_t fit_lo = 0;
    std::uint64_t fit_hi = 0;
    std::size_t fit_points = 0;
    std::optional<std::uint64_t> plateau_start;
    RateCase predicted;
    double last_decade_mean = 0.0;
    double previous_decade_mean = 0.0;
    bool r_star_applicable = false;
    double r_star = kInf;             // raw-weight units
    double frac_within_r_star = 0.0;  // post burn-in, over all seeds and steps
    double frac_within_2c = 0.0;
    std::uint64_t burn_in = 0;
};

/// Integers log-spaced over [1, steps], deduplicated.
inline std::vector<std::uint64_t> log_grid(std::uint64_t steps, std::size_t points) {
    std::vector<std::uint64_t> g;
    const double top = std::log10(static_cast<double>(steps));
    for (std::size_t i = 0; i < points; ++i) {
        const double e = points == 1 ? top : top * static_cast<double>(i) / static_cast<double>(points - 1);
        const auto t = static_cast<std::uint64_t>(std::llround(std::pow(10.0, e)));
        if (g.empty() || t > g.back()) g.push_back(std::min(t, steps));
    }
    return g;
}

/// Least-squares slope of log(y) against log(t).
inline double log_log_slope(const std::vector<std::uint64_t>& t, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double lx = std::log(static_cast<double>(t[i]));
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Mean of y over grid points in (lo, hi]; NaN when there are none.
inline double window_mean(const std::vector<std::uint64_t>& grid, const std::vector<double>& y, double lo, double hi) {
    RunningStats st;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (static_cast<double>(grid[i]) > lo && static_cast<double>(grid[i]) <= hi) st.add(y[i]);
    return st.count() ? st.mean() : std::nan("");
}

/// Decades (T/10^{j+1}, T/10^j] are scanned upward from `fit_lo`; the first
/// whose mean is at least `ratio` times the previous decade's mean starts the
/// plateau, and its lower edge is returned.
inline std::optional<std::uint64_t> plateau_start(const std::vector<std::uint64_t>& grid, const std::vector<double>& y,
                                                  std::uint64_t steps, std::uint64_t fit_lo, double ratio) {
    const double T = static_cast<double>(steps);
    int decades = 0;
    while (T / std::pow(10.0, decades + 1) >= static_cast<double>(fit_lo)) ++decades;
    double prev = std::nan("");
    for (int j = decades - 1; j >= 0; --j) {
        const double lo = T / std::pow(10.0, j + 1), hi = T / std::pow(10.0, j);
        const double m = window_mean(grid, y, lo, hi);
        if (std::isnan(m)) continue;
        if (!std::isnan(prev) && m >= ratio * prev) return static_cast<std::uint64_t>(lo);
        prev = m;
    }
    return std::nullopt;
}

/// Multi-seed distance to the oracle fixed point on a log grid, a fitted
/// decay slope next to the predicted rate, and region-membership fractions.
inline RateTable run_convergence_study(const ConvergenceSpec& spec, const Mdp& mdp, const FeatureMap& features,
                                       const AnalysisReport& oracle, unsigned workers = 0) {
    if (!oracle.fixed_point.converged) throw ValidationError("convergence study: oracle has no converged fixed point");
    detail::require(spec.op.kind == PolicyKind::EpsSoftmax, "convergence study: operator must be eps-softmax");
    detail::require(mdp.gamma() < 1.0, "convergence study: requires gamma < 1");
    detail::require(!spec.seeds.empty() && spec.steps >= 10, "convergence study: need seeds and at least 10 steps");
    detail::require(!std::isinf(spec.c_gamma), "convergence study: needs a finite projection radius");

    RateTable table;
    table.w_star = oracle.fixed_point.w;
    table.n_seeds = spec.seeds.size();
    table.grid = log_grid(spec.steps, spec.grid_points);
    table.burn_in = static_cast<std::uint64_t>(std::ceil(spec.burn_in_fraction * static_cast<double>(spec.steps)));
    table.r_star_applicable = oracle.normalized.region.applicable;
    table.r_star = oracle.r_star_raw_units();
    const double c2 = 2.0 * spec.c_gamma;

    struct SeedResult {
        std::vector<double> dist;
        std::uint64_t within_r = 0, within_2c = 0, counted = 0;
    };
    std::vector<SeedResult> per_seed(spec.seeds.size());
    parallel_for(
        spec.seeds.size(),
        [&](std::size_t k) {
            SarsaConfig cfg;
            cfg.projection_radius = spec.c_gamma;
            cfg.steps = spec.steps;
            cfg.seed = spec.seeds[k];
            cfg.op = spec.op;
            cfg.schedule = spec.schedule;
            cfg.variant = spec.variant;
            SarsaRun runner(cfg, mdp, features);
            SeedResult& out = per_seed[k];
            out.dist.reserve(table.grid.size());
            std::size_t next_grid = 0;
            for (std::uint64_t i = 0; i < spec.steps; ++i) {
                runner.step();
                const std::uint64_t t = runner.t();
                const double d = (runner.weights() - table.w_star).norm();
                if (next_grid < table.grid.size() && t == table.grid[next_grid]) {
                    out.dist.push_back(d);
                    ++next_grid;
                }
                if (t >= table.burn_in) {
                    ++out.counted;
                    if (d <= table.r_star) ++out.within_r;
                    if (d <= c2) ++out.within_2c;
                }
            }
        },
        workers);

    table.mean_distance.assign(table.grid.size(), 0.0);
    std::uint64_t within_r = 0, within_2c = 0, counted = 0;
    for (const auto& r : per_seed) {
        for (std::size_t i = 0; i < r.dist.size(); ++i) table.mean_distance[i] += r.dist[i];
        within_r += r.within_r;
        within_2c += r.within_2c;
        counted += r.counted;
    }
    for (double& m : table.mean_distance) m /= static_cast<double>(per_seed.size());
    table.frac_within_r_star = counted ? static_cast<double>(within_r) / static_cast<double>(counted) : 0.0;
    table.frac_within_2c = counted ? static_cast<double>(within_2c) / static_cast<double>(counted) : 0.0;

    const double T = static_cast<double>(spec.steps);
    table.last_decade_mean = window_mean(table.grid, table.mean_distance, T / 10.0, T);
    table.previous_decade_mean = window_mean(table.grid, table.mean_distance, T / 100.0, T / 10.0);

    table.fit_lo = spec.fit_start ? spec.fit_start
                                  : std::max<std::uint64_t>(
                                        static_cast<std::uint64_t>(10.0 * (spec.schedule.kind ==
                                                                                   LearningRateSchedule::Kind::Polynomial
                                                                               ? spec.schedule.t0
                                                                               : 1.0)),
                                        spec.steps / 1000);
    table.plateau_start = plateau_start(table.grid, table.mean_distance, spec.steps, table.fit_lo, spec.plateau_ratio);
    table.fit_hi = table.plateau_start ? *table.plateau_start : spec.steps;

    std::vector<std::uint64_t> ts;
    std::vector<double> ys;
    for (std::size_t i = 0; i < table.grid.size(); ++i)
        if (table.grid[i] >= table.fit_lo && table.grid[i] <= table.fit_hi && table.mean_distance[i] > 0.0) {
            ts.push_back(table.grid[i]);
            ys.push_back(table.mean_distance[i]);
        }
    table.fit_points = ts.size();
    table.fitted_slope = ts.size() >= 2 ? log_log_slope(ts, ys) : std::nan("");

    const double eta = oracle.normalized.eta.eta > 0.0 ? oracle.normalized.eta.eta : 1e-300;
    if (spec.schedule.kind == LearningRateSchedule::Kind::Polynomial)
        table.predicted = rate_case(spec.schedule.eps_alpha, eta, spec.schedule.c_alpha);
    else
        table.predicted = {"constant step: no decay", 0.0, 0.0};
    return table;
}

inline io::Json to_json(const RateTable& t) {
    using io::rounded;
    io::Json grid = io::Json::array();
    for (std::size_t i = 0; i < t.grid.size(); ++i)
        grid.push_back({{"step", t.grid[i]}, {"mean_distance", rounded(t.mean_distance[i])}});
    io::Json j{{"grid", grid},
               {"w_star", io::to_json(t.w_star)},
               {"n_seeds", t.n_seeds},
               {"fitted_slope", rounded(t.fitted_slope)},
               {"fit_lo", t.fit_lo},
               {"fit_hi", t.fit_hi},
               {"fit_points", t.fit_points},
               {"predicted_case", t.predicted.label},
               {"predicted_power", rounded(t.predicted.power)},
               {"predicted_log_power", rounded(t.predicted.log_power)},
               {"last_decade_mean", rounded(t.last_decade_mean)},
               {"previous_decade_mean", rounded(t.previous_decade_mean)},
               {"burn_in", t.burn_in},
               {"r_star_applicable", t.r_star_applicable},
               {"r_star", rounded(t.r_star)},
               {"frac_within_r_star", rounded(t.frac_within_r_star)},
               {"frac_within_2c", rounded(t.frac_within_2c)}};
    j["plateau_start"] = t.plateau_start ? io::Json(*t.plateau_start) : io::Json(nullptr);
    return j;
}

inline std::string rate_table_csv(const RateTable& t) {
    std::string out = "step,mean_distance\n";
    for (std::size_t i = 0; i < t.grid.size(); ++i)
        out += std::to_string(t.grid[i]) + ',' + io::number(t.mean_distance[i]) + '\n';
    return out;
}

}  // namespace linsarsa
