#pragma once

#include "linsarsa/common.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace linsarsa {

/// Raw description of a finite MDP, before validation.
///
/// `transition` is laid out as [s][a][s'] and `reward` is n_states x n_actions.
/// Entries belonging to terminal states or to unavailable actions are ignored.
/// An empty `available_actions` means every action is available at every
/// non-terminal state.
struct MdpDefinition {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<std::string> state_names;
    std::vector<std::string> action_names;
    std::vector<std::vector<std::size_t>> available_actions;
    std::vector<double> transition;
    Matrix reward;
    double gamma = 1.0;
    Vector initial_dist;
    std::vector<std::size_t> terminals;
};

struct StateAction {
    std::size_t state;
    std::size_t action;
    friend bool operator==(const StateAction&, const StateAction&) = default;
};

/// Validated finite MDP with deterministic rewards r(s, a).
///
/// Terminal states have no actions. A transition into a terminal state ends
/// the episode: its value is zero, and the behavior chain restarts from the
/// initial distribution. State-action pairs are indexed state-major over the
/// available actions only; every vector "over pairs" uses that order.
class Mdp {
public:
    static constexpr double kProbabilityTolerance = 1e-12;

    explicit Mdp(MdpDefinition def) : def_(std::move(def)) {
        validate_and_index();
    }

    std::size_t n_states() const noexcept { return def_.n_states; }
    std::size_t n_actions() const noexcept { return def_.n_actions; }
    std::size_t n_pairs() const noexcept { return pairs_.size(); }
    double gamma() const noexcept { return def_.gamma; }
    double r_max() const noexcept { return r_max_; }
    const Vector& initial_dist() const noexcept { return def_.initial_dist; }
    const MdpDefinition& definition() const noexcept { return def_; }

    bool is_terminal(std::size_t s) const { return terminal_[s]; }

    std::span<const std::size_t> available(std::size_t s) const {
        return def_.available_actions[s];
    }

    /// p(. | s, a) as a contiguous row of length n_states.
    std::span<const double> next_state_dist(std::size_t s, std::size_t a) const {
        return {def_.transition.data() + (s * def_.n_actions + a) * def_.n_states, def_.n_states};
    }

    double transition(std::size_t s, std::size_t a, std::size_t next) const {
        return def_.transition[(s * def_.n_actions + a) * def_.n_states + next];
    }

    double reward(std::size_t s, std::size_t a) const { return def_.reward(s, a); }

    /// Index of (s, a) among the available pairs, or nullopt.
    std::optional<std::size_t> pair_index(std::size_t s, std::size_t a) const {
        const auto idx = index_[s * def_.n_actions + a];
        if (idx < 0) return std::nullopt;
        return static_cast<std::size_t>(idx);
    }

    /// First pair index of state s; its pairs occupy [first, first + |A(s)|).
    std::size_t first_pair(std::size_t s) const { return first_pair_[s]; }

    StateAction pair(std::size_t i) const { return pairs_[i]; }

    /// r over state-action pairs.
    const Vector& reward_vector() const noexcept { return reward_vector_; }

    /// Copy with a different discount factor.
    Mdp with_gamma(double gamma) const {
        MdpDefinition d = def_;
        d.gamma = gamma;
        return Mdp(std::move(d));
    }

    /// Copy with every reward multiplied by `scale`.
    Mdp with_reward_scale(double scale) const {
        MdpDefinition d = def_;
        d.reward *= scale;
        return Mdp(std::move(d));
    }

    /// Copy with the rewards replaced (n_states x n_actions).
    Mdp with_rewards(Matrix reward) const {
        MdpDefinition d = def_;
        d.reward = std::move(reward);
        return Mdp(std::move(d));
    }

private:
    void validate_and_index() {
        auto& d = def_;
        const std::size_t ns = d.n_states;
        const std::size_t na = d.n_actions;
        detail::require(ns > 0 && na > 0, "mdp: n_states and n_actions must be positive");
        detail::require(d.transition.size() == ns * na * ns,
                        "mdp: transition tensor must have n_states*n_actions*n_states entries");
        detail::require(static_cast<std::size_t>(d.reward.rows()) == ns &&
                            static_cast<std::size_t>(d.reward.cols()) == na,
                        "mdp: reward must be n_states x n_actions");
        detail::require(static_cast<std::size_t>(d.initial_dist.size()) == ns,
                        "mdp: initial_dist must have n_states entries");
        detail::require(d.gamma >= 0.0 && d.gamma <= 1.0, "mdp: gamma must lie in [0, 1]");

        terminal_.assign(ns, false);
        for (auto t : d.terminals) {
            detail::require(t < ns, "mdp: terminal index out of range");
            terminal_[t] = true;
        }

        if (d.available_actions.empty()) {
            d.available_actions.resize(ns);
            for (std::size_t s = 0; s < ns; ++s) {
                if (terminal_[s]) continue;
                for (std::size_t a = 0; a < na; ++a) d.available_actions[s].push_back(a);
            }
        }
        detail::require(d.available_actions.size() == ns,
                        "mdp: available_actions must have one entry per state");

        index_.assign(ns * na, -1);
        first_pair_.assign(ns, 0);
        pairs_.clear();
        for (std::size_t s = 0; s < ns; ++s) {
            auto& acts = d.available_actions[s];
            first_pair_[s] = pairs_.size();
            if (terminal_[s]) {
                acts.clear();
                continue;
            }
            detail::require(!acts.empty(),
                            "mdp: non-terminal state " + std::to_string(s) + " has no available action");
            std::sort(acts.begin(), acts.end());
            detail::require(std::adjacent_find(acts.begin(), acts.end()) == acts.end(),
                            "mdp: duplicate available action at state " + std::to_string(s));
            for (auto a : acts) {
                detail::require(a < na, "mdp: available action index out of range");
                index_[s * na + a] = static_cast<long>(pairs_.size());
                pairs_.push_back({s, a});
            }
        }
        detail::require(!pairs_.empty(), "mdp: no state-action pairs");

        for (const auto& [s, a] : pairs_) {
            double sum = 0.0;
            for (double p : next_state_dist(s, a)) {
                detail::require(std::isfinite(p) && p >= 0.0, "mdp: negative or non-finite transition probability");
                sum += p;
            }
            detail::require(std::abs(sum - 1.0) <= kProbabilityTolerance,
                            "mdp: transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                ") does not sum to 1");
            detail::require(std::isfinite(d.reward(s, a)), "mdp: non-finite reward");
        }

        double p0_sum = 0.0;
        for (std::size_t s = 0; s < ns; ++s) {
            const double p = d.initial_dist(s);
            detail::require(std::isfinite(p) && p >= 0.0, "mdp: negative initial probability");
            detail::require(!(terminal_[s] && p > 0.0), "mdp: initial_dist puts mass on a terminal state");
            p0_sum += p;
        }
        detail::require(std::abs(p0_sum - 1.0) <= kProbabilityTolerance, "mdp: initial_dist does not sum to 1");

        reward_vector_.resize(static_cast<Eigen::Index>(pairs_.size()));
        r_max_ = 0.0;
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            const double r = d.reward(pairs_[i].state, pairs_[i].action);
            reward_vector_(static_cast<Eigen::Index>(i)) = r;
            r_max_ = std::max(r_max_, std::abs(r));
        }

        if (d.state_names.empty())
            for (std::size_t s = 0; s < ns; ++s) d.state_names.push_back("s" + std::to_string(s));
        if (d.action_names.empty())
            for (std::size_t a = 0; a < na; ++a) d.action_names.push_back("a" + std::to_string(a));
        detail::require(d.state_names.size() == ns && d.action_names.size() == na,
                        "mdp: name lists must match state/action counts");
    }

    MdpDefinition def_;
    std::vector<bool> terminal_;
    std::vector<long> index_;
    std::vector<std::size_t> first_pair_;
    std::vector<StateAction> pairs_;
    Vector reward_vector_;
    double r_max_ = 0.0;
};

/// Feature matrix X with one row x(s, a)^T per state-action pair.
class FeatureMap {
public:
    static constexpr double kRankTolerance = 1e-10;

    FeatureMap(const Mdp& mdp, Matrix x) : FeatureMap(std::move(x)) {
        detail::require(static_cast<std::size_t>(x_.rows()) == mdp.n_pairs(),
                        "features: row count must equal the number of state-action pairs");
    }

    explicit FeatureMap(Matrix x) : x_(std::move(x)), rows_(x_) {
        detail::require(x_.rows() > 0 && x_.cols() > 0, "features: empty feature matrix");
        detail::require(x_.allFinite(), "features: non-finite entry");
        detail::require(x_.cols() <= x_.rows(), "features: more features than state-action pairs");
        Eigen::JacobiSVD<Matrix> svd(x_);
        const auto& sv = svd.singularValues();
        spectral_norm_ = sv(0);
        min_singular_ = sv(sv.size() - 1);
        detail::require(min_singular_ > kRankTolerance,
                        "features: X does not have full column rank (smallest singular value " +
                            std::to_string(min_singular_) + ")");
        x_max_ = x_.rowwise().norm().maxCoeff();
    }

    const Matrix& matrix() const noexcept { return x_; }
    Eigen::Index dim() const noexcept { return x_.cols(); }
    Eigen::Index n_rows() const noexcept { return x_.rows(); }

    /// x(s, a) for pair index i.
    auto row(std::size_t i) const { return rows_.row(static_cast<Eigen::Index>(i)); }

    double x_max() const noexcept { return x_max_; }
    double spectral_norm() const noexcept { return spectral_norm_; }
    double min_singular_value() const noexcept { return min_singular_; }

    /// q = X w over all pairs.
    Vector values(const Vector& w) const { return x_ * w; }

    /// Copy scaled to unit spectral norm.
    FeatureMap normalized() const { return FeatureMap(Matrix(x_ / spectral_norm_)); }

private:
    Matrix x_;
    RowMatrix rows_;
    double x_max_ = 0.0;
    double spectral_norm_ = 0.0;
    double min_singular_ = 0.0;
};

/// pi(a | s) as an n_states x n_actions matrix.
///
/// Rows of non-terminal states sum to one over the available actions; entries
/// of unavailable actions and rows of terminal states are zero.
struct PolicyTable {
    Matrix probs;

    double operator()(std::size_t s, std::size_t a) const {
        return probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    }

    /// Throws ValidationError if the table is not a policy for `mdp`.
    void validate(const Mdp& mdp, double tol = 1e-12) const {
        detail::require(static_cast<std::size_t>(probs.rows()) == mdp.n_states() &&
                            static_cast<std::size_t>(probs.cols()) == mdp.n_actions(),
                        "policy: shape must be n_states x n_actions");
        for (std::size_t s = 0; s < mdp.n_states(); ++s) {
            double sum = 0.0;
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
                const double p = (*this)(s, a);
                detail::require(std::isfinite(p) && p >= 0.0, "policy: negative or non-finite probability");
                if (!mdp.pair_index(s, a)) {
                    detail::require(p == 0.0, "policy: mass on an unavailable action");
                }
                sum += p;
            }
            if (mdp.is_terminal(s)) continue;
            detail::require(std::abs(sum - 1.0) <= tol, "policy: row " + std::to_string(s) + " does not sum to 1");
        }
    }

    /// Uniform over the available actions of each state.
    static PolicyTable uniform(const Mdp& mdp) {
        PolicyTable p{Matrix::Zero(static_cast<Eigen::Index>(mdp.n_states()),
                                   static_cast<Eigen::Index>(mdp.n_actions()))};
        for (std::size_t s = 0; s < mdp.n_states(); ++s) {
            const auto acts = mdp.available(s);
            for (auto a : acts)
                p.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) =
                    1.0 / static_cast<double>(acts.size());
        }
        return p;
    }

    /// pi as a vector over state-action pairs.
    Vector over_pairs(const Mdp& mdp) const {
        Vector v(static_cast<Eigen::Index>(mdp.n_pairs()));
        for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
            const auto [s, a] = mdp.pair(i);
            v(static_cast<Eigen::Index>(i)) = (*this)(s, a);
        }
        return v;
    }
};

/// Named pair indices of the diagnostic MDP returned by build_gordon_mdp.
namespace gordon {
inline constexpr std::size_t kStart = 0;       // s0
inline constexpr std::size_t kUpper = 1;       // s1
inline constexpr std::size_t kLower = 2;       // s2
inline constexpr std::size_t kTerminal = 3;    // S_T
inline constexpr std::size_t kPairUp = 0;      // (s0, a_U)
inline constexpr std::size_t kPairLeft = 1;    // (s0, a_L)
inline constexpr std::size_t kPairUpper = 2;   // (s1, a_1)
inline constexpr std::size_t kPairLower = 3;   // (s2, a_2)
}  // namespace gordon

struct Problem {
    Mdp mdp;
    FeatureMap features;
};

/// Three-state chattering diagnostic: s0 chooses a_U (to s1) or a_L (to s2)
/// for reward 0; s1 and s2 each have one action, paying -2 and -1 (times
/// `reward_scale`) and ending the episode. Features aggregate s1 and s2.
inline Problem build_gordon_mdp(double reward_scale = 1.0, double gamma = 1.0) {
    detail::require(reward_scale > 0.0 && std::isfinite(reward_scale), "gordon: reward_scale must be positive");
    MdpDefinition d;
    d.n_states = 4;
    d.n_actions = 2;
    d.state_names = {"s0", "s1", "s2", "terminal"};
    d.action_names = {"first", "second"};
    d.available_actions = {{0, 1}, {0}, {0}, {}};
    d.transition.assign(4 * 2 * 4, 0.0);
    auto set = [&](std::size_t s, std::size_t a, std::size_t next) { d.transition[(s * 2 + a) * 4 + next] = 1.0; };
    set(gordon::kStart, 0, gordon::kUpper);
    set(gordon::kStart, 1, gordon::kLower);
    set(gordon::kUpper, 0, gordon::kTerminal);
    set(gordon::kLower, 0, gordon::kTerminal);
    d.reward = Matrix::Zero(4, 2);
    d.reward(gordon::kUpper, 0) = -2.0 * reward_scale;
    d.reward(gordon::kLower, 0) = -1.0 * reward_scale;
    d.gamma = gamma;
    d.initial_dist = Vector::Zero(4);
    d.initial_dist(gordon::kStart) = 1.0;
    d.terminals = {gordon::kTerminal};
    Mdp mdp(std::move(d));

    Matrix x(4, 3);
    x << 1, 0, 0,  //
        0, 1, 0,   //
        0, 0, 1,   //
        0, 0, 1;
    FeatureMap features(mdp, std::move(x));
    return {std::move(mdp), std::move(features)};
}

/// P_pi((s,a),(s',a')) = p(s'|s,a) pi(a'|s') on the behavior chain: mass that
/// would enter a terminal state is redistributed through the initial
/// distribution, so the matrix is row-stochastic.
inline Matrix state_action_transition(const Mdp& mdp, const PolicyTable& policy) {
    const auto n = static_cast<Eigen::Index>(mdp.n_pairs());
    Matrix p = Matrix::Zero(n, n);
    const Vector& p0 = mdp.initial_dist();
    auto spread = [&](Eigen::Index row, std::size_t next, double mass) {
        for (auto a2 : mdp.available(next))
            p(row, static_cast<Eigen::Index>(*mdp.pair_index(next, a2))) += mass * policy(next, a2);
    };
    for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
        const auto [s, a] = mdp.pair(i);
        const auto row = static_cast<Eigen::Index>(i);
        const auto dist = mdp.next_state_dist(s, a);
        for (std::size_t next = 0; next < dist.size(); ++next) {
            if (dist[next] == 0.0) continue;
            if (mdp.is_terminal(next)) {
                for (std::size_t s0 = 0; s0 < mdp.n_states(); ++s0)
                    if (p0(static_cast<Eigen::Index>(s0)) > 0.0)
                        spread(row, s0, dist[next] * p0(static_cast<Eigen::Index>(s0)));
            } else {
                spread(row, next, dist[next]);
            }
        }
    }
    return p;
}

/// Sub-stochastic matrix used for bootstrapping: as state_action_transition
/// but transitions into terminal states carry no mass (their value is 0).
inline Matrix bootstrap_transition(const Mdp& mdp, const PolicyTable& policy) {
    const auto n = static_cast<Eigen::Index>(mdp.n_pairs());
    Matrix p = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
        const auto [s, a] = mdp.pair(i);
        const auto dist = mdp.next_state_dist(s, a);
        for (std::size_t next = 0; next < dist.size(); ++next) {
            if (dist[next] == 0.0 || mdp.is_terminal(next)) continue;
            for (auto a2 : mdp.available(next))
                p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(*mdp.pair_index(next, a2))) +=
                    dist[next] * policy(next, a2);
        }
    }
    return p;
}

/// T_pi q = r + gamma P q with terminal bootstrap zero.
inline Vector bellman_operator(const Mdp& mdp, const Matrix& bootstrap, const Vector& q) {
    return mdp.reward_vector() + mdp.gamma() * (bootstrap * q);
}

/// q_pi, the unique solution of (I - gamma P) q = r.
///
/// Throws SingularSystemError when the system is singular, e.g. gamma = 1
/// on a chain that never terminates.
inline Vector exact_action_values(const Mdp& mdp, const PolicyTable& policy) {
    policy.validate(mdp, 1e-9);
    const Matrix pb = bootstrap_transition(mdp, policy);
    const auto n = pb.rows();
    const Matrix system = Matrix::Identity(n, n) - mdp.gamma() * pb;
    const double cond = detail::condition_number(system);
    if (!(cond < 1e12)) throw SingularSystemError("action values: (I - gamma P) is singular", cond);
    Vector q = system.partialPivLu().solve(mdp.reward_vector());
    const double residual = (q - bellman_operator(mdp, pb, q)).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, q.cwiseAbs().maxCoeff());
    if (!(residual < 1e-10 * scale))
        throw SingularSystemError("action values: Bellman residual " + std::to_string(residual) + " too large", cond);
    return q;
}

}  // namespace linsarsa
