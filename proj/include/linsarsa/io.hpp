#pragma once

#include "linsarsa/common.hpp"
#include "linsarsa/mdp.hpp"
#include "linsarsa/policy.hpp"
#include "linsarsa/sarsa.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace linsarsa::io {

using Json = nlohmann::json;

/// Fixed 12-significant-digit rendering used by every CSV/JSON writer.
inline std::string number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

/// x rounded to 12 significant digits, so JSON output matches number(x).
/// Non-finite values become JSON null.
inline Json rounded(double x) {
    if (!std::isfinite(x)) return nullptr;
    return std::strtod(number(x).c_str(), nullptr);
}

inline Json to_json(const Vector& v) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(rounded(v(i)));
    return arr;
}

inline Json to_json(const Matrix& m) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) arr.push_back(to_json(Vector(m.row(i).transpose())));
    return arr;
}

inline Vector vector_from_json(const Json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << contents;
    if (!out) throw Error("write failed for " + path.string());
}

inline Json parse_json_file(const std::filesystem::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// MDP documents
// ---------------------------------------------------------------------------

/// {states, actions, available_actions, transition, reward, gamma,
///  initial_dist, terminals}. `states`/`actions` are a count or a name list;
/// `transition` is [s][a][s'], `reward` is [s][a].
inline Mdp mdp_from_json(const Json& j) {
    try {
        MdpDefinition d;
        auto read_names = [](const Json& v, std::size_t& count, std::vector<std::string>& names) {
            if (v.is_number_unsigned() || v.is_number_integer()) {
                count = v.get<std::size_t>();
            } else {
                names = v.get<std::vector<std::string>>();
                count = names.size();
            }
        };
        read_names(j.at("states"), d.n_states, d.state_names);
        read_names(j.at("actions"), d.n_actions, d.action_names);
        const std::size_t ns = d.n_states, na = d.n_actions;
        if (j.contains("available_actions"))
            d.available_actions = j.at("available_actions").get<std::vector<std::vector<std::size_t>>>();
        if (j.contains("terminals")) d.terminals = j.at("terminals").get<std::vector<std::size_t>>();

        const auto& tr = j.at("transition");
        detail::require(tr.size() == ns, "mdp json: transition needs one entry per state");
        d.transition.assign(ns * na * ns, 0.0);
        for (std::size_t s = 0; s < ns; ++s) {
            if (tr[s].is_null() || tr[s].empty()) continue;
            detail::require(tr[s].size() == na, "mdp json: transition[s] needs one entry per action");
            for (std::size_t a = 0; a < na; ++a) {
                if (tr[s][a].is_null() || tr[s][a].empty()) continue;
                const auto row = tr[s][a].get<std::vector<double>>();
                detail::require(row.size() == ns, "mdp json: transition[s][a] needs one entry per state");
                std::copy(row.begin(), row.end(), d.transition.begin() + static_cast<long>((s * na + a) * ns));
            }
        }
        const auto& rw = j.at("reward");
        detail::require(rw.size() == ns, "mdp json: reward needs one entry per state");
        d.reward = Matrix::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na));
        for (std::size_t s = 0; s < ns; ++s) {
            if (rw[s].is_null() || rw[s].empty()) continue;
            detail::require(rw[s].size() == na, "mdp json: reward[s] needs one entry per action");
            for (std::size_t a = 0; a < na; ++a)
                d.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = rw[s][a].get<double>();
        }
        d.gamma = j.at("gamma").get<double>();
        d.initial_dist = vector_from_json(j.at("initial_dist"));
        return Mdp(std::move(d));
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("mdp json: ") + e.what());
    }
}

inline Json to_json(const Mdp& mdp) {
    const auto& d = mdp.definition();
    Json j;
    j["states"] = d.state_names;
    j["actions"] = d.action_names;
    j["available_actions"] = d.available_actions;
    std::vector<std::size_t> terminals;
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
        if (mdp.is_terminal(s)) terminals.push_back(s);
    j["terminals"] = terminals;
    Json tr = Json::array();
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        Json per_action = Json::array();
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            Json row = Json::array();
            for (double p : mdp.next_state_dist(s, a)) row.push_back(rounded(p));
            per_action.push_back(row);
        }
        tr.push_back(per_action);
    }
    j["transition"] = tr;
    j["reward"] = to_json(d.reward);
    j["gamma"] = rounded(mdp.gamma());
    j["initial_dist"] = to_json(mdp.initial_dist());
    return j;
}

/// Optional "features" member: a matrix with one row per state-action pair.
inline std::optional<FeatureMap> features_from_json(const Mdp& mdp, const Json& j) {
    if (!j.contains("features")) return std::nullopt;
    const auto rows = j.at("features").get<std::vector<std::vector<double>>>();
    detail::require(!rows.empty(), "features: empty matrix");
    Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail::require(rows[i].size() == rows[0].size(), "features: ragged matrix");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return FeatureMap(mdp, std::move(x));
}

// ---------------------------------------------------------------------------
// Operators and configs
// ---------------------------------------------------------------------------

/// {"kind": "eps_greedy"|"eps_softmax", "epsilon": x, "temperature": y}
inline PolicyOperator operator_from_json(const Json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const double eps = j.value("epsilon", 0.1);
    if (kind == "eps_greedy") return PolicyOperator::eps_greedy(eps);
    if (kind == "eps_softmax") return PolicyOperator::eps_softmax(eps, j.at("temperature").get<double>());
    throw ValidationError("operator: unknown kind '" + kind + "'");
}

inline Json to_json(const PolicyOperator& op) {
    Json j{{"kind", op.name()}, {"epsilon", rounded(op.epsilon)}};
    if (op.kind == PolicyKind::EpsSoftmax) j["temperature"] = rounded(op.temperature);
    return j;
}

inline LearningRateSchedule schedule_from_json(const Json& j) {
    if (j.is_number()) return LearningRateSchedule::constant(j.get<double>());
    const auto kind = j.value("kind", std::string("constant"));
    if (kind == "constant") return LearningRateSchedule::constant(j.at("alpha").get<double>());
    if (kind == "polynomial")
        return LearningRateSchedule::polynomial(j.at("c_alpha").get<double>(), j.at("t0").get<double>(),
                                                j.at("eps_alpha").get<double>());
    throw ValidationError("schedule: unknown kind '" + kind + "'");
}

inline Json to_json(const LearningRateSchedule& s) {
    if (s.kind == LearningRateSchedule::Kind::Constant) return Json{{"kind", "constant"}, {"alpha", rounded(s.alpha)}};
    return Json{{"kind", "polynomial"},
                {"c_alpha", rounded(s.c_alpha)},
                {"t0", rounded(s.t0)},
                {"eps_alpha", rounded(s.eps_alpha)}};
}

/// Accepts a number or the strings "inf"/"infinity".
inline double radius_from_json(const Json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "infinity") return kInf;
        return std::stod(s);
    }
    if (j.is_null()) return kInf;
    return j.get<double>();
}

inline SarsaConfig sarsa_config_from_json(const Json& j) {
    try {
        SarsaConfig c;
        if (j.contains("projection_radius")) c.projection_radius = radius_from_json(j.at("projection_radius"));
        c.steps = j.value("steps", std::uint64_t{0});
        c.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("operator")) c.op = operator_from_json(j.at("operator"));
        if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
        const auto variant = j.value("variant", std::string("sarsa"));
        if (variant == "sarsa") c.variant = Variant::Sarsa;
        else if (variant == "expected_sarsa") c.variant = Variant::ExpectedSarsa;
        else throw ValidationError("config: unknown variant '" + variant + "'");
        c.record_stride = j.value("record_stride", std::uint64_t{100});
        if (j.contains("initial_weight")) c.initial_weight = vector_from_json(j.at("initial_weight"));
        return c;
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("config json: ") + e.what());
    }
}

inline Json to_json(const SarsaConfig& c) {
    Json j{{"projection_radius", std::isinf(c.projection_radius) ? Json("inf") : rounded(c.projection_radius)},
           {"steps", c.steps},
           {"seed", c.seed},
           {"operator", to_json(c.op)},
           {"schedule", to_json(c.schedule)},
           {"variant", c.variant == Variant::Sarsa ? "sarsa" : "expected_sarsa"},
           {"record_stride", c.record_stride}};
    if (c.initial_weight) j["initial_weight"] = to_json(*c.initial_weight);
    return j;
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

inline std::string trajectory_header(Eigen::Index dim) {
    std::string h = "step";
    for (Eigen::Index k = 0; k < dim; ++k) h += ",w_" + std::to_string(k);
    h += ",delta,s,a,r,s_next,a_next,alpha\n";
    return h;
}

inline void append_trajectory_row(std::string& out, const TrajectoryRecord& r) {
    out += std::to_string(r.step);
    for (Eigen::Index k = 0; k < r.w.size(); ++k) {
        out += ',';
        out += number(r.w(k));
    }
    out += ',' + number(r.delta) + ',' + std::to_string(r.s) + ',' + std::to_string(r.a) + ',' + number(r.reward) +
           ',' + std::to_string(r.s_next) + ',' + std::to_string(r.a_next) + ',' + number(r.alpha) + '\n';
}

}  // namespace linsarsa::io
