#pragma once

#include "linsarsa/common.hpp"
#include "linsarsa/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace linsarsa {

enum class PolicyKind { EpsGreedy, EpsSoftmax };

/// Policy improvement operator q -> pi_q.
///
/// EpsGreedy puts 1 - eps + eps/|A(s)| on the argmax (lowest action index
/// wins ties) and eps/|A(s)| elsewhere. EpsSoftmax mixes eps/|A(s)| with
/// (1 - eps) softmax(q(s, .) / temperature).
struct PolicyOperator {
    PolicyKind kind = PolicyKind::EpsSoftmax;
    double epsilon = 0.1;
    double temperature = 1.0;

    static PolicyOperator eps_greedy(double epsilon) { return checked({PolicyKind::EpsGreedy, epsilon, 1.0}); }
    static PolicyOperator eps_softmax(double epsilon, double temperature) {
        return checked({PolicyKind::EpsSoftmax, epsilon, temperature});
    }

    void validate() const {
        detail::require(epsilon >= 0.0 && epsilon <= 1.0, "policy operator: epsilon must lie in [0, 1]");
        if (kind == PolicyKind::EpsSoftmax)
            detail::require(temperature > 0.0 && !std::isnan(temperature),
                            "policy operator: temperature must be positive");
    }

    std::string name() const { return kind == PolicyKind::EpsGreedy ? "eps_greedy" : "eps_softmax"; }

private:
    static PolicyOperator checked(PolicyOperator op) {
        op.validate();
        return op;
    }
};

/// Action probabilities at one state from that state's action values.
/// `q` and `out` are indexed by position in the state's available-action list.
inline void action_probabilities(const PolicyOperator& op, std::span<const double> q, std::span<double> out) {
    const std::size_t n = q.size();
    const double floor = op.epsilon / static_cast<double>(n);
    for (double v : q)
        if (!std::isfinite(v)) throw ValidationError("policy operator: non-finite action value");

    if (op.kind == PolicyKind::EpsGreedy) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (q[i] > q[best]) best = i;
        for (std::size_t i = 0; i < n; ++i) out[i] = floor;
        out[best] += 1.0 - op.epsilon;
        return;
    }

    const double qmax = *std::max_element(q.begin(), q.end());
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::isinf(op.temperature) ? 1.0 : std::exp((q[i] - qmax) / op.temperature);
        z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = floor + (1.0 - op.epsilon) * out[i] / z;
}

/// pi_q for q over state-action pairs.
inline PolicyTable improve(const PolicyOperator& op, const Mdp& mdp, const Vector& q) {
    detail::require(static_cast<std::size_t>(q.size()) == mdp.n_pairs(), "improve: q must have one entry per pair");
    PolicyTable pi{Matrix::Zero(static_cast<Eigen::Index>(mdp.n_states()), static_cast<Eigen::Index>(mdp.n_actions()))};
    std::vector<double> probs;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        const auto acts = mdp.available(s);
        if (acts.empty()) continue;
        probs.resize(acts.size());
        const auto first = static_cast<Eigen::Index>(mdp.first_pair(s));
        action_probabilities(op, std::span<const double>(q.data() + first, acts.size()), probs);
        for (std::size_t k = 0; k < acts.size(); ++k)
            pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(acts[k])) = probs[k];
    }
    return pi;
}

/// pi_w = pi_{Xw}.
inline PolicyTable improve(const PolicyOperator& op, const Mdp& mdp, const FeatureMap& features, const Vector& w) {
    return improve(op, mdp, features.values(w));
}

/// Lipschitz constant of q -> pi_q: (1 - eps)/temperature for EpsSoftmax,
/// infinite for EpsGreedy.
inline double lipschitz_constant(const PolicyOperator& op) {
    if (op.kind == PolicyKind::EpsGreedy) return kInf;
    return (1.0 - op.epsilon) / op.temperature;
}

/// Largest probability an eps-softmax policy can give any action when
/// |q| <= x_max * c_gamma.
inline double max_action_prob_bound(double epsilon, std::size_t n_actions, double x_max, double c_gamma,
                                    double temperature) {
    detail::require(epsilon >= 0.0 && epsilon <= 1.0, "bound: epsilon must lie in [0, 1]");
    detail::require(n_actions >= 1 && x_max > 0.0 && c_gamma > 0.0 && temperature > 0.0,
                    "bound: inputs must be positive");
    const double n = static_cast<double>(n_actions);
    double tail = 0.0;
    if (!std::isinf(temperature)) tail = std::exp(-2.0 * x_max * c_gamma / temperature);
    else tail = 1.0;
    return epsilon / n + (1.0 - epsilon) / (1.0 + (n - 1.0) * tail);
}

/// Largest observed max_{s,a} |pi_q(a|s) - pi_q'(a|s)| / ||q - q'||_2 over
/// `n_pairs` pairs drawn from `sample_q`. Identical pairs are skipped.
inline double empirical_lipschitz(const PolicyOperator& op, const Mdp& mdp, const std::function<Vector()>& sample_q,
                                  std::size_t n_pairs) {
    if (op.kind == PolicyKind::EpsGreedy)
        throw ValidationError("empirical_lipschitz: eps-greedy has no finite Lipschitz constant");
    detail::require(n_pairs >= 1, "empirical_lipschitz: n_pairs must be at least 1");
    double worst = 0.0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const Vector q1 = sample_q();
        const Vector q2 = sample_q();
        const double dist = (q1 - q2).norm();
        if (dist == 0.0) continue;
        const double dev = (improve(op, mdp, q1).probs - improve(op, mdp, q2).probs).cwiseAbs().maxCoeff();
        worst = std::max(worst, dev / dist);
    }
    return worst;
}

/// Same ratio measured in weight space, pi_w = pi_{Xw}.
inline double empirical_lipschitz_weights(const PolicyOperator& op, const Mdp& mdp, const FeatureMap& features,
                                          const std::function<Vector()>& sample_w, std::size_t n_pairs) {
    if (op.kind == PolicyKind::EpsGreedy)
        throw ValidationError("empirical_lipschitz: eps-greedy has no finite Lipschitz constant");
    double worst = 0.0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const Vector w1 = sample_w();
        const Vector w2 = sample_w();
        const double dist = (w1 - w2).norm();
        if (dist == 0.0) continue;
        const double dev =
            (improve(op, mdp, features, w1).probs - improve(op, mdp, features, w2).probs).cwiseAbs().maxCoeff();
        worst = std::max(worst, dev / dist);
    }
    return worst;
}

}  // namespace linsarsa
