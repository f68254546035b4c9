#pragma once

#include "invargc/baseline.hpp"
#include "invargc/datagen.hpp"
#include "invargc/dataset.hpp"
#include "invargc/json_io.hpp"
#include "invargc/linear.hpp"
#include "invargc/nonlinear.hpp"
#include "invargc/report.hpp"
#include "invargc/selftest.hpp"
#include "invargc/serialize.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace invargc::cli {

enum ExitCode : int {
    kOk = 0,
    kSelfTestFailed = 1,
    kValidation = 2,
    kIo = 3,
    kDivergence = 4,
    kBenchmarkFailed = 5,
};

/// Runs `body`, mapping library exceptions onto exit codes and printing the
/// message to `err`.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const DivergenceError& e) {
        err << "error: solver diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const Json::exception& e) {
        err << "error: malformed JSON: " << e.what() << '\n';
        return kValidation;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    }
}

inline GenConfig read_gen_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
    Json j;
    try {
        j = json_io::read_file(path);
    } catch (const Json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return gen_config_from_json(j);
}

// ---- generate ---------------------------------------------------------------

struct GenerateOptions {
    std::filesystem::path config;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
};

inline int cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        GenConfig cfg = read_gen_config(o.config);
        if (o.seed) cfg.seed = *o.seed;
        auto [ds, truth] = generate_benchmark(cfg);
        save_dataset(ds, truth, o.out);
        out << "generated N=" << ds.n_envs() << " d=" << ds.n_vars() << " T=" << ds.n_steps()
            << " edges=" << truth.adjacency.sum() << " intervened_envs=" << truth.n_intervened_envs() << " -> "
            << o.out.string() << '\n';
        return kOk;
    });
}

// ---- fit --------------------------------------------------------------------

struct FitOptions {
    std::filesystem::path data;
    std::string mode = "linear";
    std::optional<double> lambda_z;
    double alpha = HyperParams{}.alpha;
    std::optional<double> lambda_w;
    Index latents = 1;
    std::size_t max_iters = 0;
    double tol = HyperParams{}.tol;
    std::filesystem::path out;
    std::uint64_t seed = 0;
};

inline HyperParams hyperparams(const FitOptions& o) {
    HyperParams hp;
    if (o.lambda_z) hp.lambda_z = *o.lambda_z;
    if (o.lambda_w) hp.lambda_w = *o.lambda_w;
    hp.alpha = o.alpha;
    hp.n_latents = o.latents;
    hp.max_iters = o.max_iters;
    hp.tol = o.tol;
    return hp;
}

inline int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (o.mode != "linear" && o.mode != "nonlinear")
            throw ValidationError("mode must be 'linear' or 'nonlinear', got '" + o.mode + "'");
        const HyperParams hp = hyperparams(o);
        validate(hp);
        const MultiEnvDataset ds = center_and_rescale(load_dataset(o.data));
        Json j;
        double final_objective = 0.0;
        std::size_t iterations = 0;
        if (o.mode == "linear") {
            const auto resolved = resolve_defaults(hp, ds.n_steps());
            auto fit = fit_linear(ds, resolved, o.seed);
            j = to_json(fit.model, FitInfo{resolved, fit.trace, fit.iterations, fit.converged, o.seed});
            final_objective = fit.trace.back();
            iterations = fit.iterations;
        } else {
            const auto resolved = resolve_nonlinear_defaults(hp, ds.n_steps());
            auto fit = fit_nonlinear(ds, resolved, Dims{}, o.seed);
            j = to_json(fit.model, FitInfo{resolved, fit.trace, fit.iterations, fit.converged, o.seed});
            final_objective = fit.trace.back();
            iterations = fit.iterations;
        }
        json_io::write_file(o.out, j);
        out << std::setprecision(10) << "objective " << final_objective << " after " << iterations << " iterations -> "
            << o.out.string() << '\n';
        return kOk;
    });
}

// ---- eval -------------------------------------------------------------------

struct EvalOptions {
    std::filesystem::path model;
    std::filesystem::path truth;
    std::filesystem::path out;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!std::filesystem::exists(o.model)) throw IoError("missing file " + o.model.string());
        if (!std::filesystem::exists(o.truth)) throw IoError("missing file " + o.truth.string());
        const auto loaded = load_model(o.model);
        const GroundTruth truth = load_truth(o.truth);
        const EvalReport r = evaluate_model(loaded.model, truth);
        Json j = to_json(r, truth);
        j["hyperparams"] = to_json(loaded.info.hp);
        json_io::write_file(o.out, j);
        out << std::fixed << std::setprecision(4) << "auroc " << r.graph.auroc << " auprc " << r.graph.auprc;
        if (r.intervention_auroc) out << " intervention_auroc " << *r.intervention_auroc;
        out << " -> " << o.out.string() << '\n';
        return kOk;
    });
}

// ---- benchmark --------------------------------------------------------------

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m = {"invargc-linear", "invargc-nonlinear", "var-lasso"};
    return m;
}

struct BenchmarkOptions {
    std::filesystem::path config;
    std::size_t seeds = 5;
    std::vector<std::string> methods = known_methods();
    std::filesystem::path out_md;
    std::filesystem::path out_json;
};

struct CellResult {
    std::string method;
    std::uint64_t seed = 0;
    bool ok = false;
    double auroc = 0.0;
    double auprc = 0.0;
    std::optional<double> intervention_auroc;
    std::optional<double> latent_correlation;
    double wall_time_seconds = 0.0;
    std::string error;
};

/// Fits one method on one generated dataset and scores it against the truth.
inline CellResult run_cell(const std::string& method, std::uint64_t seed, const MultiEnvDataset& ds, const GroundTruth& truth) {
    CellResult c;
    c.method = method;
    c.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const MultiEnvDataset prepared = center_and_rescale(ds);
        EvalReport r;
        if (method == "invargc-linear") {
            r = evaluate_model(fit_linear(prepared, resolve_defaults(HyperParams{}, prepared.n_steps()), seed).model, truth);
        } else if (method == "invargc-nonlinear") {
            r = evaluate_model(
                fit_nonlinear(prepared, resolve_nonlinear_defaults(HyperParams{}, prepared.n_steps()), Dims{}, seed).model, truth);
        } else {
            r = evaluate_baseline(fit_var_lasso_bic(prepared), truth);
        }
        c.ok = true;
        c.auroc = r.graph.auroc;
        c.auprc = r.graph.auprc;
        c.intervention_auroc = r.intervention_auroc;
        c.latent_correlation = r.latent_correlation;
    } catch (const Error& e) {
        c.error = e.what();
    }
    c.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
}

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
};

// Sample standard deviation; zero for a single value.
inline Summary summarize(const std::vector<double>& v) {
    Summary s{v.size()};
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string fixed4(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << round4(v);
    return os.str();
}

inline std::vector<std::string> parse_methods(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, e - b + 1);
        if (std::find(known_methods().begin(), known_methods().end(), item) == known_methods().end())
            throw ValidationError("unknown method '" + item + "' (expected invargc-linear, invargc-nonlinear or var-lasso)");
        if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    }
    if (out.empty()) throw ValidationError("methods list is empty");
    return out;
}

/// Markdown table plus JSON document for a finished grid of cells, ordered by
/// method then seed. Both carry the same 4-decimal summary numbers.
inline std::pair<std::string, Json> benchmark_outputs(const GenConfig& cfg, const std::vector<std::string>& methods,
                                                      std::size_t n_seeds, const std::vector<CellResult>& cells) {
    std::ostringstream md;
    md << "| method | AUROC | AUPRC | failed |\n|---|---|---|---|\n";
    Json jm = Json::array();
    for (const auto& method : methods) {
        std::vector<double> a, p;
        Json per_seed = Json::array();
        std::size_t failed = 0;
        for (const auto& c : cells) {
            if (c.method != method) continue;
            Json cj{{"seed", c.seed}, {"mechanism", to_string(cfg.mechanism)}, {"wall_time_seconds", c.wall_time_seconds}};
            if (c.ok) {
                a.push_back(c.auroc);
                p.push_back(c.auprc);
                cj["auroc"] = c.auroc;
                cj["auprc"] = c.auprc;
                cj["intervention_auroc"] = optional_json(c.intervention_auroc);
                cj["latent_correlation"] = optional_json(c.latent_correlation);
            } else {
                ++failed;
                cj["status"] = "failed";
                cj["error"] = c.error;
            }
            per_seed.push_back(std::move(cj));
        }
        const Summary sa = summarize(a), sp = summarize(p);
        Json summary;
        if (a.empty()) {
            md << "| " << method << " | failed | failed | " << failed << " |\n";
            summary = "failed";
        } else {
            md << "| " << method << " | " << fixed4(sa.mean) << " ± " << fixed4(sa.sd) << " | " << fixed4(sp.mean) << " ± "
               << fixed4(sp.sd) << " | " << failed << " |\n";
            summary = Json{{"auroc_mean", round4(sa.mean)}, {"auroc_sd", round4(sa.sd)}, {"auprc_mean", round4(sp.mean)},
                           {"auprc_sd", round4(sp.sd)},   {"n_ok", a.size()},          {"n_failed", failed}};
        }
        jm.push_back(Json{{"method", method}, {"summary", std::move(summary)}, {"seeds", std::move(per_seed)}});
    }
    Json j{{"version", kVersion}, {"config", to_json(cfg)}, {"n_seeds", n_seeds}, {"methods", std::move(jm)}};
    j["config"].erase("seed");
    return {md.str(), j};
}

inline int cmd_benchmark(const BenchmarkOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (o.seeds < 1) throw ValidationError("seeds must be at least 1");
        if (o.methods.empty()) throw ValidationError("methods list is empty");
        const GenConfig base = read_gen_config(o.config);
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<CellResult> cells;
        for (std::uint64_t s = 0; s < o.seeds; ++s) {
            GenConfig cfg = base;
            cfg.seed = s;
            const auto [ds, truth] = generate_benchmark(cfg);
            for (const auto& method : o.methods) {
                cells.push_back(run_cell(method, s, ds, truth));
                const auto& c = cells.back();
                if (c.ok)
                    out << method << " seed " << s << ": auroc " << fixed4(c.auroc) << " auprc " << fixed4(c.auprc) << '\n';
                else
                    err << method << " seed " << s << ": failed: " << c.error << '\n';
            }
        }
        std::stable_sort(cells.begin(), cells.end(), [&](const CellResult& a, const CellResult& b) {
            const auto ia = std::find(o.methods.begin(), o.methods.end(), a.method);
            const auto ib = std::find(o.methods.begin(), o.methods.end(), b.method);
            return ia != ib ? ia < ib : a.seed < b.seed;
        });
        auto [md, j] = benchmark_outputs(base, o.methods, o.seeds, cells);
        {
            std::ofstream f(o.out_md);
            if (!f) throw IoError("cannot write " + o.out_md.string());
            f << md;
            if (!f) throw IoError("write failed for " + o.out_md.string());
        }
        json_io::write_file(o.out_json, j);
        out << md;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << std::fixed << std::setprecision(1) << "total wall time " << secs << " s\n";
        const bool any_ok = std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
        return any_ok ? kOk : kBenchmarkFailed;
    });
}

// ---- check ------------------------------------------------------------------

inline int cmd_check(const selftest::Faults& faults, std::ostream& out, std::ostream& err) {
    bool all = true;
    for (const auto& r : selftest::run_all(faults)) {
        out << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.summary << '\n';
        if (!r.passed) {
            all = false;
            err << r.name << " suite failed on " << r.failure << '\n';
        }
    }
    return all ? kOk : kSelfTestFailed;
}

inline selftest::Faults parse_faults(const std::vector<std::string>& names) {
    selftest::Faults f;
    for (const auto& n : names) {
        if (n == "prox") f.prox = true;
        else if (n == "gradient") f.gradient = true;
        else if (n == "metrics") f.metrics = true;
        else if (n == "descent") f.descent = true;
        else if (n == "datagen") f.datagen = true;
        else throw ValidationError("unknown fault '" + n + "'");
    }
    return f;
}

}  // namespace invargc::cli
