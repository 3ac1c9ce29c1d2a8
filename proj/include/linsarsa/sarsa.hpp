#pragma once

#include "linsarsa/common.hpp"
#include "linsarsa/mdp.hpp"
#include "linsarsa/policy.hpp"
#include "linsarsa/rng.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace linsarsa {

/// alpha_t: either constant or c / (t0 + t)^eps.
struct LearningRateSchedule {
    enum class Kind { Constant, Polynomial };

    Kind kind = Kind::Constant;
    double alpha = 0.01;
    double c_alpha = 1.0;
    double t0 = 1.0;
    double eps_alpha = 1.0;

    static LearningRateSchedule constant(double alpha) {
        LearningRateSchedule s;
        s.kind = Kind::Constant;
        s.alpha = alpha;
        s.validate();
        return s;
    }

    static LearningRateSchedule polynomial(double c_alpha, double t0, double eps_alpha) {
        LearningRateSchedule s;
        s.kind = Kind::Polynomial;
        s.c_alpha = c_alpha;
        s.t0 = t0;
        s.eps_alpha = eps_alpha;
        s.validate();
        return s;
    }

    void validate() const {
        if (kind == Kind::Constant) {
            detail::require(alpha >= 0.0 && std::isfinite(alpha), "schedule: constant alpha must be finite and >= 0");
            return;
        }
        detail::require(c_alpha > 0.0 && t0 > 0.0, "schedule: c_alpha and t0 must be positive");
        detail::require(eps_alpha > 0.0 && eps_alpha <= 1.0, "schedule: eps_alpha must lie in (0, 1]");
    }

    double at(std::uint64_t t) const {
        if (kind == Kind::Constant) return alpha;
        return c_alpha / std::pow(t0 + static_cast<double>(t), eps_alpha);
    }
};

enum class Variant { Sarsa, ExpectedSarsa };

struct SarsaConfig {
    double projection_radius = kInf;
    std::uint64_t steps = 0;
    std::uint64_t seed = 0;
    PolicyOperator op;
    LearningRateSchedule schedule;
    Variant variant = Variant::Sarsa;
    std::uint64_t record_stride = 100;
    /// Defaults to the zero vector.
    std::optional<Vector> initial_weight;
    /// When set, actions follow this fixed policy instead of pi_{w_t}; the
    /// run is then plain linear TD evaluation of that policy.
    std::optional<PolicyTable> frozen_policy;

    void validate(const Mdp& mdp, const FeatureMap& features) const {
        detail::require(projection_radius > 0.0, "sarsa: projection radius must be positive");
        detail::require(record_stride >= 1, "sarsa: record_stride must be at least 1");
        op.validate();
        schedule.validate();
        if (initial_weight) {
            detail::require(initial_weight->size() == features.dim(), "sarsa: initial weight has wrong dimension");
            detail::require(initial_weight->norm() <= projection_radius,
                            "sarsa: initial weight lies outside the projection ball");
        }
        if (frozen_policy) frozen_policy->validate(mdp, 1e-9);
    }
};

/// Gamma(w): radial projection onto the ball of the given radius.
inline Vector project(const Vector& w, double radius) {
    if (std::isinf(radius)) return w;
    const double norm = w.norm();
    if (norm <= radius) return w;
    return (radius / norm) * w;
}

/// One transition (S_t, A_t, R_{t+1}, S_{t+1}, A_{t+1}) of the behavior chain.
/// `terminal` marks that the episode ended and S_{t+1} is a restart state.
struct StepResult {
    std::size_t s = 0;
    std::size_t a = 0;
    double reward = 0.0;
    std::size_t s_next = 0;
    std::size_t a_next = 0;
    bool terminal = false;
    double delta = 0.0;
    double alpha = 0.0;
};

struct TrajectoryRecord {
    std::uint64_t step = 0;
    Vector w;
    double delta = 0.0;
    /// -1 in the initial record, which has no incoming transition.
    long s = -1;
    long a = -1;
    double reward = 0.0;
    /// Pair (S_t, A_t) current after this record's update.
    long s_next = -1;
    long a_next = -1;
    double alpha = 0.0;
};

/// The iterate w_t together with the pair (S_t, A_t) it will act from.
struct SarsaState {
    Vector w;
    std::size_t s = 0;
    std::size_t a = 0;
};

namespace detail {

inline std::size_t sample_initial_state(const Mdp& mdp, Rng& rng) {
    const Vector& p0 = mdp.initial_dist();
    return rng.categorical(std::span<const double>(p0.data(), static_cast<std::size_t>(p0.size())));
}

}  // namespace detail

/// Either the improvement operator applied to X w, or a frozen table.
class Behavior {
public:
    explicit Behavior(PolicyOperator op) : op_(op) {}
    explicit Behavior(PolicyTable table) : op_(), table_(std::move(table)) {}

    static Behavior from(const SarsaConfig& config) {
        return config.frozen_policy ? Behavior(*config.frozen_policy) : Behavior(config.op);
    }

    /// pi(. | s) over s's available actions, in list order.
    void probabilities(const Mdp& mdp, const FeatureMap& features, const Vector& w, std::size_t s,
                       std::vector<double>& out, std::vector<double>& scratch) const {
        const auto acts = mdp.available(s);
        out.resize(acts.size());
        if (table_) {
            for (std::size_t k = 0; k < acts.size(); ++k) out[k] = (*table_)(s, acts[k]);
            return;
        }
        scratch.resize(acts.size());
        const std::size_t first = mdp.first_pair(s);
        for (std::size_t k = 0; k < acts.size(); ++k) scratch[k] = features.row(first + k).dot(w);
        action_probabilities(op_, scratch, out);
    }

private:
    PolicyOperator op_;
    std::optional<PolicyTable> table_;
};

/// One iteration of projected linear SARSA, updating `state` in place.
///
/// A_{t+1} is drawn from the policy of the pre-update weight w_t. The
/// bootstrap term is dropped on a terminal transition, after which the chain
/// restarts from the initial distribution.
inline StepResult sarsa_step(SarsaState& state, const Mdp& mdp, const FeatureMap& features, const Behavior& behavior,
                             double alpha, Variant variant, double radius, Rng& rng) {
    thread_local std::vector<double> probs;
    thread_local std::vector<double> scratch;

    StepResult out;
    out.s = state.s;
    out.a = state.a;
    out.alpha = alpha;
    out.reward = mdp.reward(state.s, state.a);
    const std::size_t pair = *mdp.pair_index(state.s, state.a);

    std::size_t next = rng.categorical(mdp.next_state_dist(state.s, state.a));
    out.terminal = mdp.is_terminal(next);
    if (out.terminal) next = detail::sample_initial_state(mdp, rng);

    behavior.probabilities(mdp, features, state.w, next, probs, scratch);
    const auto acts = mdp.available(next);
    const std::size_t k = rng.categorical(probs);
    out.s_next = next;
    out.a_next = acts[k];

    double bootstrap = 0.0;
    if (!out.terminal) {
        const std::size_t first = mdp.first_pair(next);
        if (variant == Variant::Sarsa) {
            bootstrap = features.row(first + k).dot(state.w);
        } else {
            for (std::size_t j = 0; j < acts.size(); ++j) bootstrap += probs[j] * features.row(first + j).dot(state.w);
        }
    }
    const auto x = features.row(pair);
    out.delta = out.reward + mdp.gamma() * bootstrap - x.dot(state.w);

    state.w += (alpha * out.delta) * x.transpose();
    if (!std::isinf(radius)) {
        const double norm = state.w.norm();
        if (norm > radius) state.w *= radius / norm;
    }
    if (!state.w.allFinite())
        throw NumericalError("sarsa: non-finite weight after update (delta " + std::to_string(out.delta) +
                             ", alpha " + std::to_string(alpha) + ")");
    state.s = out.s_next;
    state.a = out.a_next;
    return out;
}

/// Algorithm state for one seeded run; advance with step().
class SarsaRun {
public:
    SarsaRun(const SarsaConfig& config, const Mdp& mdp, const FeatureMap& features)
        : config_(config), mdp_(mdp), features_(features), behavior_(Behavior::from(config)), rng_(config.seed) {
        config_.validate(mdp_, features_);
        state_.w = config_.initial_weight ? *config_.initial_weight : Vector::Zero(features_.dim());
        state_.s = detail::sample_initial_state(mdp_, rng_);
        std::vector<double> probs, scratch;
        behavior_.probabilities(mdp_, features_, state_.w, state_.s, probs, scratch);
        state_.a = mdp_.available(state_.s)[rng_.categorical(probs)];
    }

    const SarsaState& state() const noexcept { return state_; }
    const Vector& weights() const noexcept { return state_.w; }
    std::uint64_t t() const noexcept { return t_; }

    const StepResult& step() {
        last_ = sarsa_step(state_, mdp_, features_, behavior_, config_.schedule.at(t_), config_.variant,
                           config_.projection_radius, rng_);
        ++t_;
        return last_;
    }

    /// Record for the current iterate; the transition fields describe the
    /// update that produced it.
    TrajectoryRecord record() const {
        TrajectoryRecord r;
        r.step = t_;
        r.w = state_.w;
        r.s_next = static_cast<long>(state_.s);
        r.a_next = static_cast<long>(state_.a);
        if (t_ > 0) {
            r.delta = last_.delta;
            r.s = static_cast<long>(last_.s);
            r.a = static_cast<long>(last_.a);
            r.reward = last_.reward;
            r.alpha = last_.alpha;
        }
        return r;
    }

private:
    SarsaConfig config_;
    const Mdp& mdp_;
    const FeatureMap& features_;
    Behavior behavior_;
    Rng rng_;
    SarsaState state_;
    StepResult last_;
    std::uint64_t t_ = 0;
};

/// Runs `config.steps` iterations. `sink(record)` receives w_0 and every
/// record_stride-th iterate; `observe(t, w_t, transition)` sees every step.
template <class Sink, class Observer>
void run(const SarsaConfig& config, const Mdp& mdp, const FeatureMap& features, Sink&& sink, Observer&& observe) {
    SarsaRun runner(config, mdp, features);
    sink(runner.record());
    for (std::uint64_t i = 0; i < config.steps; ++i) {
        const StepResult& tr = runner.step();
        observe(runner.t(), runner.weights(), tr);
        if (runner.t() % config.record_stride == 0) sink(runner.record());
    }
}

inline std::vector<TrajectoryRecord> run(const SarsaConfig& config, const Mdp& mdp, const FeatureMap& features) {
    std::vector<TrajectoryRecord> records;
    run(
        config, mdp, features, [&](TrajectoryRecord r) { records.push_back(std::move(r)); },
        [](std::uint64_t, const Vector&, const StepResult&) {});
    return records;
}

}  // namespace linsarsa
