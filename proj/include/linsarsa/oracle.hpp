#pragma once

#include "linsarsa/common.hpp"
#include "linsarsa/mdp.hpp"
#include "linsarsa/policy.hpp"
#include "linsarsa/rng.hpp"
#include "linsarsa/sarsa.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace linsarsa {

// ---------------------------------------------------------------------------
// Stationary distributions and mixing
// ---------------------------------------------------------------------------

/// Number of eigenvalues of `p` on the unit circle (within `tol`).
inline std::size_t unit_modulus_eigenvalues(const Matrix& p, double tol = 1e-8) {
    Eigen::EigenSolver<Matrix> es(p, false);
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        if (std::abs(es.eigenvalues()(i)) > 1.0 - tol) ++count;
    return count;
}

/// Number of eigenvalues of `p` equal to 1 (within `tol`).
inline std::size_t unit_eigenvalues(const Matrix& p, double tol = 1e-8) {
    Eigen::EigenSolver<Matrix> es(p, false);
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        if (std::abs(es.eigenvalues()(i) - 1.0) < tol) ++count;
    return count;
}

/// Ergodic: 1 is the only eigenvalue on the unit circle. Irreducible: 1 is
/// simple, other unit-modulus eigenvalues (periodicity) allowed.
enum class ChainRequirement { Ergodic, Irreducible };

/// Unique d with d^T P = d^T and sum(d) = 1.
///
/// Throws ErgodicityError for reducible chains, and for periodic ones unless
/// only irreducibility is requested.
inline Vector stationary_distribution(const Matrix& p, ChainRequirement req = ChainRequirement::Ergodic) {
    detail::require(p.rows() == p.cols() && p.rows() > 0, "stationary: matrix must be square");
    const auto n = p.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        detail::require(std::abs(p.row(i).sum() - 1.0) < 1e-9 && p.row(i).minCoeff() >= 0.0,
                        "stationary: matrix is not row-stochastic");
    const std::size_t unit =
        req == ChainRequirement::Ergodic ? unit_modulus_eigenvalues(p) : unit_eigenvalues(p);
    if (unit != 1)
        throw ErgodicityError("stationary: chain is not ergodic (" + std::to_string(unit) +
                              " eigenvalues on the unit circle)");

    // (P - I)^T d = 0 has rank n - 1; replace the last equation by sum(d) = 1.
    Matrix system = (p - Matrix::Identity(n, n)).transpose();
    system.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;
    Vector d = system.fullPivLu().solve(rhs);
    const double residual = (p.transpose() * d - d).cwiseAbs().maxCoeff();
    if (!(residual < 1e-10))
        throw ErgodicityError("stationary: residual " + std::to_string(residual) + " too large");
    return d;
}

/// sup_y sum_y' |P^n(y, y') - d(y')| for n = 0, 1, ... until it drops to
/// `accuracy`; returns that n.
inline std::uint64_t mixing_time(const Matrix& p, double accuracy, std::uint64_t cap = 1'000'000) {
    detail::require(accuracy > 0.0 && accuracy <= 2.0, "mixing_time: accuracy must lie in (0, 2]");
    const Vector d = stationary_distribution(p);
    const auto n = p.rows();
    Matrix power = Matrix::Identity(n, n);
    for (std::uint64_t k = 0; k <= cap; ++k) {
        const double dist = (power.rowwise() - d.transpose()).cwiseAbs().rowwise().sum().maxCoeff();
        if (dist <= accuracy) return k;
        power = power * p;
    }
    throw ErgodicityError("mixing_time: accuracy not reached within " + std::to_string(cap) + " steps");
}

// ---------------------------------------------------------------------------
// Policy-dependent matrices and fixed points
// ---------------------------------------------------------------------------

/// Exact on-policy quantities for one policy.
struct PolicyMatrices {
    Vector d_pi;           // stationary distribution over pairs
    Matrix P_pi;           // behavior chain (restart-closed)
    Matrix P_bootstrap;    // value transition, zero into terminals
    Matrix A_pi;           // X^T D (gamma P_bootstrap - I) X
    Vector b_pi;           // X^T D r

    auto D_pi() const { return d_pi.asDiagonal(); }
};

inline PolicyMatrices policy_matrices(const Mdp& mdp, const FeatureMap& features, const PolicyTable& policy) {
    PolicyMatrices m;
    m.P_pi = state_action_transition(mdp, policy);
    m.d_pi = stationary_distribution(m.P_pi, ChainRequirement::Irreducible);
    if (!(m.d_pi.minCoeff() > 0.0))
        throw ErgodicityError("policy matrices: some state-action pair has zero stationary probability");
    m.P_bootstrap = bootstrap_transition(mdp, policy);
    const Matrix& x = features.matrix();
    const auto n = m.P_pi.rows();
    const Matrix dx = m.d_pi.asDiagonal() * x;
    m.A_pi = dx.transpose() * ((mdp.gamma() * m.P_bootstrap - Matrix::Identity(n, n)) * x);
    m.b_pi = dx.transpose() * mdp.reward_vector();
    return m;
}

/// w = -A^{-1} b, the TD fixed point of the policy.
inline Vector td_fixed_point(const PolicyMatrices& m) {
    const double cond = detail::condition_number(m.A_pi);
    if (!(cond < 1e12)) throw SingularSystemError("td_fixed_point: A_pi is singular", cond);
    Vector w = -m.A_pi.partialPivLu().solve(m.b_pi);
    const double residual = (m.A_pi * w + m.b_pi).norm();
    if (!(residual < 1e-10 * std::max(1.0, m.b_pi.norm())))
        throw SingularSystemError("td_fixed_point: residual " + std::to_string(residual) + " too large", cond);
    return w;
}

/// Scale of the stationary fluctuation of constant-step linear TD around its
/// fixed point: ||A^{-1}|| x_max G (1 + tau(1/4)), with
/// G = x_max (r_max + (1 + gamma) x_max ||w*||) bounding the update size.
/// The tail-averaged iterate at step size alpha sits within O(alpha) of this.
inline double td_problem_scale(const Mdp& mdp, const FeatureMap& features, const PolicyMatrices& m) {
    const Vector w = td_fixed_point(m);
    const double x_max = features.x_max();
    const double g = x_max * (mdp.r_max() + (1.0 + mdp.gamma()) * x_max * w.norm());
    Eigen::JacobiSVD<Matrix> svd(m.A_pi);
    const double inv_norm = 1.0 / svd.singularValues()(svd.singularValues().size() - 1);
    const auto tau = static_cast<double>(mixing_time(m.P_pi, 0.25));
    return inv_norm * x_max * g * (1.0 + tau);
}

/// Pi_D = X (X^T D X)^{-1} X^T D.
inline Matrix projection_operator(const PolicyMatrices& m, const FeatureMap& features) {
    const Matrix& x = features.matrix();
    const Matrix xtd = x.transpose() * m.d_pi.asDiagonal();
    const Matrix gram = xtd * x;
    const double cond = detail::condition_number(gram);
    if (!(cond < 1e14)) throw SingularSystemError("projection: X^T D X is singular", cond);
    return x * gram.ldlt().solve(xtd);
}

/// H(q) = Pi_{D_{pi_q}} T_{pi_q} q.
inline Vector h_operator(const Vector& q, const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op) {
    const PolicyTable pi = improve(op, mdp, q);
    const PolicyMatrices m = policy_matrices(mdp, features, pi);
    return projection_operator(m, features) * bellman_operator(mdp, m.P_bootstrap, q);
}

/// w*_theta = -A^{-1} b for the policy pi_{Gamma(theta)}.
inline Vector fixed_point_target(const Vector& theta, const Mdp& mdp, const FeatureMap& features,
                                 const PolicyOperator& op, double c_gamma) {
    const Vector clipped = project(theta, c_gamma);
    return td_fixed_point(policy_matrices(mdp, features, improve(op, mdp, features, clipped)));
}

/// e(w) = ||w - w*_{Gamma(w)}||^2.
inline double error_function(const Vector& w, const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                             double c_gamma) {
    return (w - fixed_point_target(w, mdp, features, op, c_gamma)).squaredNorm();
}

struct FixedPointResult {
    Vector w;
    bool converged = false;
    std::size_t iterations = 0;
    double error = kInf;                  // e(w) at the returned point
    std::vector<double> contraction;      // ||w_{k+1} - w_k|| / ||w_k - w_{k-1}||
    std::optional<std::size_t> cycle_period;  // set when a non-converged run cycles
};

/// Damped iteration w <- (1 - damping) w + damping w*_{Gamma(w)} from w = 0.
inline FixedPointResult find_fixed_point(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                                         double c_gamma, double damping = 0.5, double tol = 1e-10,
                                         std::size_t max_iter = 10'000) {
    detail::require(tol > 0.0, "find_fixed_point: tol must be positive");
    detail::require(damping > 0.0 && damping <= 1.0, "find_fixed_point: damping must lie in (0, 1]");
    FixedPointResult res;
    Vector w = Vector::Zero(features.dim());
    std::vector<Vector> history{w};
    double prev_step = -1.0;
    for (std::size_t k = 1; k <= max_iter; ++k) {
        const Vector target = fixed_point_target(w, mdp, features, op, c_gamma);
        const Vector next = (1.0 - damping) * w + damping * target;
        const double step = (next - w).norm();
        if (prev_step > 0.0) res.contraction.push_back(step / prev_step);
        prev_step = step;
        w = next;
        res.iterations = k;
        if (history.size() >= 64) history.erase(history.begin());
        history.push_back(w);
        if (step < tol) {
            res.converged = true;
            break;
        }
    }
    res.w = w;
    res.error = error_function(w, mdp, features, op, c_gamma);
    if (!res.converged) {
        const std::size_t h = history.size();
        for (std::size_t period = 2; period < std::min<std::size_t>(h, 32); ++period) {
            if ((history[h - 1] - history[h - 1 - period]).norm() < 1e-8) {
                res.cycle_period = period;
                break;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Sampled theory constants
// ---------------------------------------------------------------------------

/// How the weight-space suprema/infima are approximated. Estimates are
/// sampled bounds, not certified values.
struct ThetaSampling {
    double radius = 1.0;
    std::size_t n_samples = 256;
    std::uint64_t seed = 0;
    std::vector<Vector> anchors;  // always evaluated in addition to samples (0 is implicit)
};

/// Uniform draw from the Euclidean ball of `radius` in `dim` dimensions.
inline Vector sample_ball(Rng& rng, Eigen::Index dim, double radius) {
    Vector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
    const double n = v.norm();
    if (n == 0.0) return Vector::Zero(dim);
    const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
    return (r / n) * v;
}

/// Deterministic list of points: 0, the anchors, then n_samples ball draws.
inline std::vector<Vector> theta_points(const ThetaSampling& sampling, Eigen::Index dim) {
    detail::require(sampling.radius > 0.0 && std::isfinite(sampling.radius),
                    "sampling: radius must be positive and finite");
    std::vector<Vector> pts;
    pts.push_back(Vector::Zero(dim));
    for (const auto& a : sampling.anchors) pts.push_back(project(a, sampling.radius));
    Rng rng(sampling.seed, 0x7e7a);
    for (std::size_t i = 0; i < sampling.n_samples; ++i) pts.push_back(sample_ball(rng, dim, sampling.radius));
    return pts;
}

struct GramBounds {
    double c1 = kInf;  // min over samples of lambda_min(X^T D X)
    double c2 = 0.0;   // max over samples of trace(X^T D X) * ||X^T D X||
    std::size_t samples = 0;
};

inline GramBounds gram_bounds(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                              const std::vector<Vector>& thetas) {
    GramBounds g;
    const Matrix& x = features.matrix();
    for (const auto& theta : thetas) {
        const PolicyTable pi = improve(op, mdp, features, theta);
        const Vector d = stationary_distribution(state_action_transition(mdp, pi), ChainRequirement::Irreducible);
        const Matrix gram = x.transpose() * d.asDiagonal() * x;
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
        const double lmin = es.eigenvalues()(0);
        const double lmax = es.eigenvalues()(es.eigenvalues().size() - 1);
        g.c1 = std::min(g.c1, lmin);
        g.c2 = std::max(g.c2, gram.trace() * lmax);
        ++g.samples;
    }
    return g;
}

struct EtaEstimate {
    double eta = 0.0;
    double lambda_min = 0.0;  // sampled inf of lambda_min(X^T D X)
    std::size_t samples = 0;
    bool applicable = true;   // false when gamma = 1
};

/// eta = (1 - gamma) inf_theta lambda_min(X^T D_{pi_theta} X), sampled.
inline EtaEstimate eta_estimate(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                                const ThetaSampling& sampling) {
    detail::require(sampling.n_samples >= 1, "eta_estimate: n_samples must be at least 1");
    const GramBounds g = gram_bounds(mdp, features, op, theta_points(sampling, features.dim()));
    EtaEstimate e;
    e.lambda_min = g.c1;
    e.samples = g.samples;
    e.eta = (1.0 - mdp.gamma()) * g.c1;
    e.applicable = mdp.gamma() < 1.0;
    return e;
}

struct LipschitzEstimate {
    double value = 0.0;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;  // samples whose fixed-point solve failed
};

/// Sampled max of ||w*_theta - w*_theta'|| / ||theta - theta'|| over local
/// perturbations of size `step` and random far pairs.
inline LipschitzEstimate lw_estimate(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                                     double c_gamma, const ThetaSampling& sampling, double step = 1e-4) {
    detail::require(sampling.n_samples >= 1, "lw_estimate: n_pairs must be at least 1");
    detail::require(step > 0.0, "lw_estimate: step must be positive");
    const auto dim = features.dim();
    const std::vector<Vector> pts = theta_points(sampling, dim);
    Rng rng(sampling.seed, 0x1a);
    LipschitzEstimate est;
    auto target = [&](const Vector& theta) -> std::optional<Vector> {
        try {
            return fixed_point_target(theta, mdp, features, op, c_gamma);
        } catch (const Error&) {
            return std::nullopt;
        }
    };
    auto consider = [&](const Vector& a, const Vector& b) {
        const double dist = (project(a, c_gamma) - project(b, c_gamma)).norm();
        if (dist == 0.0) return;
        const auto wa = target(a);
        const auto wb = target(b);
        if (!wa || !wb) {
            ++est.skipped;
            return;
        }
        est.value = std::max(est.value, (*wa - *wb).norm() / dist);
        ++est.evaluated;
    };
    for (const auto& theta : pts) {
        Vector h(dim);
        for (Eigen::Index i = 0; i < dim; ++i) h(i) = rng.normal();
        h *= step / h.norm();
        consider(theta, theta + h);
    }
    for (std::size_t i = 1; i < pts.size(); ++i) consider(pts[i - 1], pts[i]);
    return est;
}

/// Sampled sup_theta ||w*_theta||.
inline double uw_estimate(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op, double c_gamma,
                          const ThetaSampling& sampling) {
    double best = 0.0;
    for (const auto& theta : theta_points(sampling, features.dim())) {
        try {
            best = std::max(best, fixed_point_target(theta, mdp, features, op, c_gamma).norm());
        } catch (const Error&) {
        }
    }
    return best;
}

struct RegionRadius {
    bool applicable = false;
    double r_star = kInf;
    double informativeness = kInf;  // R* / (2 C_Gamma)
    std::string note;
};

/// R* = 6 sqrt(2) L_w (1 + 4 C) / (eta (1 - L_w)) and R* / (2 C).
/// With C infinite, R* is infinite and the ratio tends to
/// 12 sqrt(2) L_w / (eta (1 - L_w)).
inline RegionRadius region_radius(double l_w, double eta, double c_gamma) {
    RegionRadius r;
    if (!(l_w >= 0.0 && l_w < 1.0)) {
        r.note = "L_w >= 1: no region bound";
        return r;
    }
    if (!(eta > 0.0)) {
        r.note = "eta is not positive: no region bound";
        return r;
    }
    r.applicable = true;
    const double k = 6.0 * std::numbers::sqrt2 * l_w / (eta * (1.0 - l_w));
    if (std::isinf(c_gamma)) {
        r.r_star = l_w == 0.0 ? 0.0 : kInf;
        r.informativeness = 2.0 * k;
        return r;
    }
    r.r_star = k * (1.0 + 4.0 * c_gamma);
    r.informativeness = r.r_star / (2.0 * c_gamma);
    return r;
}

inline double kappa(double eta, double alpha) { return std::sqrt(1.0 - eta * alpha); }

struct PseudoContractionReport {
    bool passed = true;
    double alpha = 0.0;
    double alpha_bar = 0.0;
    bool alpha_below_bar = false;  // the contraction bound is only proven below alpha_bar
    double eta = 0.0;
    double kappa = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double max_ratio = 0.0;
    std::size_t checked = 0;
    std::size_t violations = 0;
    std::optional<Vector> witness_theta;
    std::optional<Vector> witness_w;
};

/// Largest step size admitted by the pseudo-contraction argument,
/// (1 - gamma) C1 / ((1 + gamma)^2 C2).
inline double pseudo_contraction_alpha_bar(double gamma, const GramBounds& g) {
    return (1.0 - gamma) * g.c1 / ((1.0 + gamma) * (1.0 + gamma) * g.c2);
}

/// Checks ||f(w) - w*_theta|| <= sqrt(1 - eta alpha) ||w - w*_theta|| with
/// f(w) = w + alpha (A_theta w + b_theta) on sampled (theta, w) pairs.
/// eta and the step bound come from Gram bounds over the same thetas, so the
/// check is exact for every theta it visits. `alpha <= 0` selects alpha_bar/2.
inline PseudoContractionReport pseudo_contraction_check(const Mdp& mdp, const FeatureMap& features,
                                                        const PolicyOperator& op, double alpha,
                                                        const ThetaSampling& sampling, double w_radius) {
    detail::require(mdp.gamma() < 1.0, "pseudo_contraction_check: requires gamma < 1");
    const auto dim = features.dim();
    const std::vector<Vector> thetas = theta_points(sampling, dim);
    const GramBounds g = gram_bounds(mdp, features, op, thetas);
    PseudoContractionReport rep;
    rep.c1 = g.c1;
    rep.c2 = g.c2;
    rep.alpha_bar = pseudo_contraction_alpha_bar(mdp.gamma(), g);
    rep.alpha = alpha > 0.0 ? alpha : 0.5 * rep.alpha_bar;
    rep.alpha_below_bar = rep.alpha < rep.alpha_bar;
    rep.eta = (1.0 - mdp.gamma()) * g.c1;
    detail::require(rep.alpha * rep.eta < 1.0, "pseudo_contraction_check: alpha * eta must be below 1");
    rep.kappa = kappa(rep.eta, rep.alpha);

    Rng rng(sampling.seed, 0xc0);
    for (const auto& theta : thetas) {
        const PolicyMatrices m = policy_matrices(mdp, features, improve(op, mdp, features, theta));
        const Vector target = td_fixed_point(m);
        const Vector w = target + sample_ball(rng, dim, w_radius);
        const double before = (w - target).norm();
        if (before == 0.0) continue;
        const Vector f = w + rep.alpha * (m.A_pi * w + m.b_pi);
        const double ratio = (f - target).norm() / before;
        rep.max_ratio = std::max(rep.max_ratio, ratio);
        ++rep.checked;
        if (ratio > rep.kappa + 1e-9) {
            ++rep.violations;
            rep.passed = false;
            if (!rep.witness_theta) {
                rep.witness_theta = theta;
                rep.witness_w = w;
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Asymptotic rate cases
// ---------------------------------------------------------------------------

/// Transient term t^{-power} (log t)^{log_power} of E||w_t - w_*||.
struct RateCase {
    std::string label;
    double power = 0.0;
    double log_power = 1.0;
};

inline RateCase rate_case(double eps_alpha, double eta, double c_alpha) {
    detail::require(eps_alpha > 0.0 && eps_alpha <= 1.0, "rate_case: eps_alpha must lie in (0, 1]");
    detail::require(eta > 0.0 && c_alpha > 0.0, "rate_case: eta and c_alpha must be positive");
    constexpr double tol = 1e-12;
    if (eps_alpha < 1.0) return {"eps_alpha in (0,1)", eps_alpha / 2.0, 1.0};
    const double ec = eta * c_alpha;
    if (std::abs(ec - 3.0) <= tol) return {"eps_alpha = 1, eta*c_alpha = 3", 0.5, 1.5};
    if (ec < 3.0) return {"eps_alpha = 1, eta*c_alpha in (0,3)", ec / 6.0, 1.0};
    return {"eps_alpha = 1, eta*c_alpha > 3", 0.5, 1.0};
}

}  // namespace linsarsa
