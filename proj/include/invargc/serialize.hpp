#pragma once

#include "invargc/common.hpp"
#include "invargc/json_io.hpp"
#include "invargc/linear.hpp"
#include "invargc/nonlinear.hpp"

#include <algorithm>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace invargc {

inline Json to_json(const HyperParams& hp) {
    return Json{{"lambda_z", hp.lambda_z}, {"alpha", hp.alpha},         {"lambda_w", hp.lambda_w},
                {"n_latents", hp.n_latents}, {"max_iters", hp.max_iters}, {"tol", hp.tol},
                {"step_init", hp.step_init}, {"backtrack", hp.backtrack}, {"ridge", hp.ridge}};
}

inline HyperParams hyperparams_from_json(const Json& j) {
    if (!j.is_object()) throw FormatError("hyperparams: expected an object");
    HyperParams hp;
    auto num = [&](const char* key, double& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw FormatError(std::string("hyperparams: field '") + key + "' must be a number");
        out = j[key].get<double>();
    };
    num("lambda_z", hp.lambda_z);
    num("alpha", hp.alpha);
    num("lambda_w", hp.lambda_w);
    num("tol", hp.tol);
    num("step_init", hp.step_init);
    num("backtrack", hp.backtrack);
    num("ridge", hp.ridge);
    if (j.contains("n_latents")) hp.n_latents = j["n_latents"].get<Index>();
    if (j.contains("max_iters")) hp.max_iters = j["max_iters"].get<std::size_t>();
    return hp;
}

namespace serialize_detail {

inline Json trace_tail(const std::vector<double>& trace, std::size_t n = 10) {
    Json out = Json::array();
    const std::size_t from = trace.size() > n ? trace.size() - n : 0;
    for (std::size_t i = from; i < trace.size(); ++i) out.push_back(trace[i]);
    return out;
}

inline const Json& field(const Json& j, const char* key) {
    if (!j.contains(key)) throw FormatError(std::string("model.json: missing field '") + key + "'");
    return j[key];
}

inline constexpr const char* kSlotNames[] = {"f1", "fb1", "f2", "fb2", "f3", "fb3", "a1", "ab1", "a2", "ab2"};
inline constexpr const char* kEnvSlotNames[] = {"g1", "gb1", "g2", "gb2"};

}  // namespace serialize_detail

/// Fit metadata stored next to the parameters.
struct FitInfo {
    HyperParams hp;
    std::vector<double> trace;
    std::size_t iterations = 0;
    bool converged = false;
    std::uint64_t seed = 0;
};

inline Json info_json(const FitInfo& info) {
    return Json{{"hyperparams", to_json(info.hp)},
                {"objective_trace_tail", serialize_detail::trace_tail(info.trace)},
                {"iterations", info.iterations},
                {"converged", info.converged},
                {"seed", info.seed},
                {"preprocessing", "center_and_rescale"},
                {"version", kVersion}};
}

inline Json to_json(const LinearModel& m, const FitInfo& info) {
    Json j = info_json(info);
    j["mode"] = "linear";
    j["w0"] = json_io::matrix_to_json(m.w0);
    j["wk"] = json_io::stack_to_json(m.wk);
    j["z"] = json_io::stack_to_json(m.z);
    return j;
}

inline Json to_json(const NonlinearModel& m, const FitInfo& info) {
    Json j = info_json(info);
    j["mode"] = "nonlinear";
    j["dims"] = Json{{"hidden", m.dims.hidden}, {"repr", m.dims.repr}, {"embed", m.dims.embed}};
    j["n_latents"] = m.n_latents;
    Json nets = Json::array();
    for (const auto& net : m.nets) {
        Json n;
        for (Index s = 0; s < TargetNet::kShared; ++s) n[serialize_detail::kSlotNames[s]] = json_io::matrix_to_json(net.at(s));
        Json envs = Json::array();
        for (Index k = 0; k < net.n_envs(); ++k) {
            Json e;
            for (Index s = 0; s < TargetNet::kPerEnv; ++s)
                e[serialize_detail::kEnvSlotNames[s]] = json_io::matrix_to_json(net.at(TargetNet::kShared + TargetNet::kPerEnv * k + s));
            envs.push_back(std::move(e));
        }
        n["envs"] = std::move(envs);
        nets.push_back(std::move(n));
    }
    j["nets"] = std::move(nets);
    j["z"] = json_io::stack_to_json(m.z);
    return j;
}

using AnyModel = std::variant<LinearModel, NonlinearModel>;

struct LoadedModel {
    AnyModel model;
    FitInfo info;
};

inline LinearModel linear_model_from_json(const Json& j) {
    using serialize_detail::field;
    LinearModel m;
    m.w0 = json_io::matrix_from_json(field(j, "w0"), "w0");
    const Index d = m.w0.rows();
    require(m.w0.cols() >= d, "model.json: w0 must have at least d columns");
    m.wk = json_io::stack_from_json(field(j, "wk"), "wk", d);
    m.z = json_io::stack_from_json(field(j, "z"), "z");
    if (m.wk.size() != m.z.size()) throw FormatError("model.json: wk and z disagree on the number of environments");
    for (const auto& w : m.wk)
        if (w.rows() != d || w.cols() != d) throw FormatError("model.json: every wk must be d x d");
    for (const auto& z : m.z)
        if (z.rows() != m.n_latents()) throw FormatError("model.json: z rows must match the latent columns of w0");
    if (!m.all_finite()) throw FormatError("model.json: non-finite parameter");
    return m;
}

inline NonlinearModel nonlinear_model_from_json(const Json& j) {
    using serialize_detail::field;
    const Json& dj = field(j, "dims");
    Dims dims{dj.at("hidden").get<Index>(), dj.at("repr").get<Index>(), dj.at("embed").get<Index>()};
    validate(dims);
    const Index p = field(j, "n_latents").get<Index>();
    const Json& nets = field(j, "nets");
    const auto z = json_io::stack_from_json(field(j, "z"), "z");
    if (!nets.is_array() || nets.empty()) throw FormatError("model.json: nets must be a non-empty array");
    const Index d = static_cast<Index>(nets.size());
    const Index n_envs = static_cast<Index>(z.size());
    const Index n_steps = z.empty() ? 2 : z.front().cols() + 1;
    NonlinearModel m = NonlinearModel::zeros(d, p, n_envs, n_steps, dims);
    for (Index i = 0; i < d; ++i) {
        const Json& nj = nets[static_cast<std::size_t>(i)];
        auto& net = m.nets[static_cast<std::size_t>(i)];
        auto load = [&](Index slot, const Json& src, const std::string& name) {
            Matrix v = json_io::matrix_from_json(src, name, net.at(slot).cols());
            if (v.rows() != net.at(slot).rows() || v.cols() != net.at(slot).cols())
                throw FormatError("model.json: " + name + " has the wrong shape");
            net.at(slot) = std::move(v);
        };
        for (Index s = 0; s < TargetNet::kShared; ++s) load(s, field(nj, serialize_detail::kSlotNames[s]), serialize_detail::kSlotNames[s]);
        const Json& envs = field(nj, "envs");
        if (!envs.is_array() || static_cast<Index>(envs.size()) != n_envs)
            throw FormatError("model.json: each net needs one entry per environment");
        for (Index k = 0; k < n_envs; ++k)
            for (Index s = 0; s < TargetNet::kPerEnv; ++s)
                load(TargetNet::kShared + TargetNet::kPerEnv * k + s, field(envs[static_cast<std::size_t>(k)], serialize_detail::kEnvSlotNames[s]),
                     serialize_detail::kEnvSlotNames[s]);
    }
    for (Index k = 0; k < n_envs; ++k) {
        if (z[static_cast<std::size_t>(k)].rows() != p || z[static_cast<std::size_t>(k)].cols() != n_steps - 1)
            throw FormatError("model.json: z has the wrong shape");
        m.z[static_cast<std::size_t>(k)] = z[static_cast<std::size_t>(k)];
    }
    if (!m.all_finite()) throw FormatError("model.json: non-finite parameter");
    return m;
}

inline LoadedModel model_from_json(const Json& j) {
    using serialize_detail::field;
    LoadedModel out;
    const std::string mode = field(j, "mode").get<std::string>();
    if (mode == "linear")
        out.model = linear_model_from_json(j);
    else if (mode == "nonlinear")
        out.model = nonlinear_model_from_json(j);
    else
        throw FormatError("model.json: unknown mode '" + mode + "'");
    if (j.contains("hyperparams")) out.info.hp = hyperparams_from_json(j["hyperparams"]);
    if (j.contains("objective_trace_tail"))
        for (const auto& v : j["objective_trace_tail"]) out.info.trace.push_back(v.get<double>());
    if (j.contains("iterations")) out.info.iterations = j["iterations"].get<std::size_t>();
    if (j.contains("converged")) out.info.converged = j["converged"].get<bool>();
    if (j.contains("seed")) out.info.seed = j["seed"].get<std::uint64_t>();
    return out;
}

inline LoadedModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(json_io::read_file(path));
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace invargc
