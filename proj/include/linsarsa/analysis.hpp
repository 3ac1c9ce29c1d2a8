#pragma once

#include "linsarsa/io.hpp"
#include "linsarsa/oracle.hpp"

#include <string>
#include <vector>

namespace linsarsa {

struct AnalysisOptions {
    double c_gamma = kInf;
    /// Discount used for oracles needing gamma < 1 when the MDP has gamma = 1.
    double gamma_override = 0.99;
    /// Ball radius for theta sampling when c_gamma is infinite.
    double sampling_radius = 10.0;
    std::size_t n_samples = 256;
    std::uint64_t seed = 0;
    double lw_step = 1e-4;
    double damping = 0.5;
    double tol = 1e-10;
    std::size_t max_iter = 10'000;
    std::vector<double> kappa_alphas = {1e-3, 1e-2, 1e-1};
    std::vector<double> mixing_accuracies = {0.25, 1e-2, 1e-4};
};

/// Constants evaluated on one feature matrix.
struct TheoryConstants {
    EtaEstimate eta;
    LipschitzEstimate l_w;
    double u_w = 0.0;
    RegionRadius region;
};

struct AnalysisReport {
    PolicyOperator op;
    double gamma = 0.0;           // discount the oracles used
    double model_gamma = 0.0;     // discount stored in the MDP
    bool gamma_substituted = false;
    double c_gamma = kInf;
    double sampling_radius = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;

    FixedPointResult fixed_point;
    PolicyMatrices at_fixed_point;
    double h_residual = kInf;     // ||H(X w*) - X w*||_inf

    double feature_spectral_norm = 1.0;
    TheoryConstants normalized;   // on X / ||X||
    TheoryConstants raw;          // on X as given

    double lipschitz_q = 0.0;     // (1 - eps)/temperature
    std::vector<std::pair<double, double>> kappa_table;
    /// Empty when the chain is periodic and never mixes.
    std::vector<std::pair<double, std::optional<std::uint64_t>>> mixing_times;
    std::vector<std::string> caveats;

    /// R* in raw-weight units, from the normalized-feature constants.
    double r_star_raw_units() const { return normalized.region.r_star / feature_spectral_norm; }
};

namespace detail {

inline TheoryConstants theory_constants(const Mdp& mdp, const FeatureMap& features, const PolicyOperator& op,
                                        double c_gamma, const ThetaSampling& sampling, double lw_step) {
    TheoryConstants t;
    t.eta = eta_estimate(mdp, features, op, sampling);
    if (op.kind == PolicyKind::EpsSoftmax) t.l_w = lw_estimate(mdp, features, op, c_gamma, sampling, lw_step);
    else t.l_w.value = kInf;
    t.u_w = uw_estimate(mdp, features, op, c_gamma, sampling);
    t.region = region_radius(t.l_w.value, t.eta.eta, c_gamma);
    return t;
}

}  // namespace detail

/// Full oracle pass: fixed point, exact matrices at it, and sampled constants.
inline AnalysisReport analyze(const Mdp& model, const FeatureMap& features, const PolicyOperator& op,
                              const AnalysisOptions& opt) {
    AnalysisReport rep;
    rep.op = op;
    rep.model_gamma = model.gamma();
    rep.c_gamma = opt.c_gamma;
    rep.n_samples = opt.n_samples;
    rep.seed = opt.seed;
    const Mdp mdp = model.gamma() < 1.0 ? model : model.with_gamma(opt.gamma_override);
    rep.gamma = mdp.gamma();
    rep.gamma_substituted = model.gamma() >= 1.0;
    if (rep.gamma_substituted)
        rep.caveats.push_back("gamma = 1 in the model; oracles use substituted gamma " + io::number(rep.gamma));

    rep.fixed_point = find_fixed_point(mdp, features, op, opt.c_gamma, opt.damping, opt.tol, opt.max_iter);
    if (!rep.fixed_point.converged)
        rep.caveats.push_back("fixed-point iteration did not converge" +
                              (rep.fixed_point.cycle_period
                                   ? " (cycle of period " + std::to_string(*rep.fixed_point.cycle_period) + ")"
                                   : std::string()));
    const Vector& w = rep.fixed_point.w;
    rep.at_fixed_point = policy_matrices(mdp, features, improve(op, mdp, features, project(w, opt.c_gamma)));
    const Vector q = features.values(w);
    rep.h_residual = (h_operator(q, mdp, features, op) - q).cwiseAbs().maxCoeff();

    rep.sampling_radius = std::isinf(opt.c_gamma) ? opt.sampling_radius : opt.c_gamma;
    if (std::isinf(opt.c_gamma))
        rep.caveats.push_back("C_Gamma is infinite; theta sampled in a ball of radius " +
                              io::number(rep.sampling_radius));
    rep.caveats.push_back("eta, L_w, U_w are sampled bounds, not certified (" + std::to_string(opt.n_samples) +
                          " samples, seed " + std::to_string(opt.seed) + ", rng " + std::string(Rng::kName) + ")");

    ThetaSampling sampling{rep.sampling_radius, opt.n_samples, opt.seed, {w}};
    rep.feature_spectral_norm = features.spectral_norm();
    const FeatureMap unit = features.normalized();
    ThetaSampling unit_sampling = sampling;
    unit_sampling.anchors = {w * rep.feature_spectral_norm};
    rep.normalized = detail::theory_constants(mdp, unit, op, opt.c_gamma, unit_sampling, opt.lw_step);
    rep.raw = detail::theory_constants(mdp, features, op, opt.c_gamma, sampling, opt.lw_step);
    rep.caveats.push_back("theory constants use X scaled to unit spectral norm (||X|| = " +
                          io::number(rep.feature_spectral_norm) + "); raw-feature values reported alongside");
    if (!rep.normalized.region.applicable) rep.caveats.push_back("R*: " + rep.normalized.region.note);

    rep.lipschitz_q = lipschitz_constant(op);
    for (double a : opt.kappa_alphas)
        rep.kappa_table.emplace_back(a, a * rep.normalized.eta.eta < 1.0 ? kappa(rep.normalized.eta.eta, a) : 0.0);
    bool periodic = false;
    for (double acc : opt.mixing_accuracies) {
        try {
            rep.mixing_times.emplace_back(acc, mixing_time(rep.at_fixed_point.P_pi, acc));
        } catch (const ErgodicityError&) {
            rep.mixing_times.emplace_back(acc, std::nullopt);
            periodic = true;
        }
    }
    if (periodic) rep.caveats.push_back("behavior chain at w* is periodic; mixing times undefined");
    return rep;
}

inline io::Json theory_json(const TheoryConstants& t) {
    return io::Json{{"eta", io::rounded(t.eta.eta)},
                     {"lambda_min", io::rounded(t.eta.lambda_min)},
                     {"eta_applicable", t.eta.applicable},
                     {"L_w", io::rounded(t.l_w.value)},
                     {"L_w_skipped", t.l_w.skipped},
                     {"U_w", io::rounded(t.u_w)},
                     {"R_star", io::rounded(t.region.r_star)},
                     {"R_star_applicable", t.region.applicable},
                     {"informativeness", io::rounded(t.region.informativeness)}};
}

/// {d_pi, A_pi, b_pi, w_star, e_at_w_star, eta, L_w, U_w, R_star,
///  informativeness, kappa_table, mixing_times, caveats[]} plus context.
inline io::Json to_json(const AnalysisReport& r) {
    using io::rounded;
    io::Json j;
    j["operator"] = io::to_json(r.op);
    j["gamma"] = rounded(r.gamma);
    j["model_gamma"] = rounded(r.model_gamma);
    j["gamma_substituted"] = r.gamma_substituted;
    j["c_gamma"] = std::isinf(r.c_gamma) ? io::Json("inf") : rounded(r.c_gamma);
    j["d_pi"] = io::to_json(r.at_fixed_point.d_pi);
    j["A_pi"] = io::to_json(r.at_fixed_point.A_pi);
    j["b_pi"] = io::to_json(r.at_fixed_point.b_pi);
    j["w_star"] = io::to_json(r.fixed_point.w);
    j["e_at_w_star"] = rounded(r.fixed_point.error);
    j["fixed_point"] = {{"converged", r.fixed_point.converged},
                        {"iterations", r.fixed_point.iterations},
                        {"h_residual", rounded(r.h_residual)}};
    if (r.fixed_point.cycle_period) j["fixed_point"]["cycle_period"] = *r.fixed_point.cycle_period;
    io::Json ratios = io::Json::array();
    const auto& c = r.fixed_point.contraction;
    for (std::size_t i = c.size() > 10 ? c.size() - 10 : 0; i < c.size(); ++i) ratios.push_back(rounded(c[i]));
    j["fixed_point"]["contraction_tail"] = ratios;

    const io::Json unit = theory_json(r.normalized);
    for (const auto& [k, v] : unit.items()) j[k] = v;
    j["raw_features"] = theory_json(r.raw);
    j["feature_spectral_norm"] = rounded(r.feature_spectral_norm);
    j["lipschitz_q"] = rounded(r.lipschitz_q);
    j["sampling"] = {{"radius", rounded(r.sampling_radius)},
                     {"n_samples", r.n_samples},
                     {"seed", r.seed},
                     {"rng", std::string(Rng::kName)}};
    io::Json kt = io::Json::array();
    for (const auto& [a, k] : r.kappa_table) kt.push_back({{"alpha", rounded(a)}, {"kappa", rounded(k)}});
    j["kappa_table"] = kt;
    io::Json mt = io::Json::array();
    for (const auto& [acc, n] : r.mixing_times) mt.push_back({{"accuracy", rounded(acc)}, {"steps", n ? io::Json(*n) : io::Json(nullptr)}});
    j["mixing_times"] = mt;
    j["caveats"] = r.caveats;
    return j;
}

}  // namespace linsarsa
