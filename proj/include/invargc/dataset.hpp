#pragma once

#include "invargc/common.hpp"
#include "invargc/json_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace invargc {

/// N environments of a d-variable, T-step series. Environment k is stored as
/// a d x T matrix (row = variable, column = time). Immutable once built.
class MultiEnvDataset {
public:
    MultiEnvDataset() = default;

    MultiEnvDataset(std::vector<Matrix> series, std::vector<std::string> var_names)
        : series_(std::move(series)), var_names_(std::move(var_names)) {
        validate();
    }

    explicit MultiEnvDataset(std::vector<Matrix> series)
        : MultiEnvDataset(series, default_names(series.empty() ? 0 : series.front().rows())) {}

    Index n_envs() const noexcept { return static_cast<Index>(series_.size()); }
    Index n_vars() const noexcept { return series_.empty() ? 0 : series_.front().rows(); }
    Index n_steps() const noexcept { return series_.empty() ? 0 : series_.front().cols(); }

    const Matrix& env(Index k) const { return series_.at(static_cast<std::size_t>(k)); }
    const std::vector<Matrix>& series() const noexcept { return series_; }
    const std::vector<std::string>& var_names() const noexcept { return var_names_; }

    // Inputs X_{k,1..T-1} and targets X_{k,2..T} for one-step prediction.
    auto inputs(Index k) const { return env(k).leftCols(n_steps() - 1); }
    auto targets(Index k) const { return env(k).rightCols(n_steps() - 1); }

    static std::vector<std::string> default_names(Index d) {
        std::vector<std::string> names;
        for (Index i = 0; i < d; ++i) names.push_back("x" + std::to_string(i));
        return names;
    }

private:
    void validate() const {
        require(!series_.empty(), "dataset needs at least one environment");
        const Index d = series_.front().rows();
        const Index t = series_.front().cols();
        require(d >= 1, "dataset needs at least one variable");
        require(t >= 2, "dataset needs at least two time steps");
        for (std::size_t k = 0; k < series_.size(); ++k) {
            require_shape(series_[k].rows() == d && series_[k].cols() == t,
                          "environment " + std::to_string(k) + " has a different shape");
            require(series_[k].allFinite(), "environment " + std::to_string(k) + " contains non-finite values");
        }
        require_shape(static_cast<Index>(var_names_.size()) == d, "var_names length differs from n_vars");
    }

    std::vector<Matrix> series_;
    std::vector<std::string> var_names_;
};

/// Ground-truth generator state. All d x d matrices use (source j, target i)
/// orientation: entry (j, i) describes the edge X_t^j -> X_{t+1}^i.
struct GroundTruth {
    Eigen::MatrixXi adjacency;                        // d x d, 0/1
    std::vector<std::vector<int>> latent_children;    // p lists of observed indices
    Vector latent_dynamics;                           // p, diagonal of W_ZZ
    Matrix latent_to_obs;                             // p x d
    Matrix base_weights;                              // d x d invariant X->X coefficients
    std::vector<Matrix> obs_weights;                  // N x (d x d) effective coefficients
    std::vector<Eigen::MatrixXi> intervention_mask;   // N x (d x d), 0/1
    std::vector<Matrix> latent_series;                // N x (p x T)

    Index n_vars() const noexcept { return adjacency.rows(); }
    Index n_latents() const noexcept { return latent_dynamics.size(); }
    Index n_envs() const noexcept { return static_cast<Index>(obs_weights.size()); }

    // Number of environments with at least one intervened edge.
    Index n_intervened_envs() const {
        Index n = 0;
        for (const auto& m : intervention_mask) n += m.any() ? 1 : 0;
        return n;
    }
};

/// Checks the machine-checkable GroundTruth invariants. Returns an empty
/// string when all hold, otherwise a description of the first violation.
inline std::string check_truth(const GroundTruth& g) {
    const Index d = g.n_vars();
    const Index p = g.n_latents();
    if (g.adjacency.cols() != d) return "adjacency is not square";
    if (g.latent_to_obs.rows() != p || (p > 0 && g.latent_to_obs.cols() != d)) return "latent_to_obs shape";
    if (static_cast<Index>(g.latent_children.size()) != p) return "latent_children length";
    if (static_cast<Index>(g.intervention_mask.size()) != g.n_envs()) return "intervention_mask length";
    if (g.base_weights.rows() != d || g.base_weights.cols() != d) return "base_weights shape";
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i)
            if ((g.base_weights(j, i) != 0.0) != (g.adjacency(j, i) != 0)) return "base_weights support differs from adjacency";
    for (Index k = 0; k < g.n_envs(); ++k) {
        const auto& w = g.obs_weights[static_cast<std::size_t>(k)];
        const auto& m = g.intervention_mask[static_cast<std::size_t>(k)];
        if (w.rows() != d || w.cols() != d || m.rows() != d || m.cols() != d) return "per-environment shape";
        for (Index j = 0; j < d; ++j)
            for (Index i = 0; i < d; ++i) {
                const bool deviates = w(j, i) != g.base_weights(j, i);
                if (deviates != (m(j, i) != 0))
                    return "mask/weight mismatch at env " + std::to_string(k) + " (" + std::to_string(j) + ", " +
                           std::to_string(i) + ")";
            }
    }
    for (Index l = 0; l < p; ++l)
        for (Index i = 0; i < d; ++i) {
            const auto& ch = g.latent_children[static_cast<std::size_t>(l)];
            const bool child = std::find(ch.begin(), ch.end(), static_cast<int>(i)) != ch.end();
            if (child != (g.latent_to_obs(l, i) != 0.0)) return "latent_children disagrees with latent_to_obs";
        }
    return {};
}

/// Z-scores every (environment, variable) trajectory with the Bessel-corrected
/// standard deviation. Constant trajectories map to zeros.
inline MultiEnvDataset standardize(const MultiEnvDataset& ds) {
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(ds.n_envs()));
    const double n = static_cast<double>(ds.n_steps());
    for (const auto& x : ds.series()) {
        Matrix z(x.rows(), x.cols());
        for (Index i = 0; i < x.rows(); ++i) {
            const double mean = x.row(i).mean();
            const RowVector centered = x.row(i).array() - mean;
            const double sd = std::sqrt(centered.squaredNorm() / (n - 1.0));
            if (sd > 0.0 && std::isfinite(sd) && centered.cwiseAbs().maxCoeff() > 1e-14 * (std::abs(mean) + 1.0))
                z.row(i) = centered / sd;
            else
                z.row(i).setZero();
        }
        out.push_back(std::move(z));
    }
    return MultiEnvDataset(std::move(out), ds.var_names());
}

/// Removes each (environment, variable) mean, then divides everything by one
/// pooled root-mean-square. A single common scale keeps regression
/// coefficients comparable across environments and variables, which per-series
/// z-scoring does not. All-constant data map to zeros.
inline MultiEnvDataset center_and_rescale(const MultiEnvDataset& ds) {
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(ds.n_envs()));
    double ss = 0.0;
    for (const auto& x : ds.series()) {
        Matrix c = x.colwise() - x.rowwise().mean();
        for (Index i = 0; i < c.rows(); ++i) {
            const double mean = x.row(i).mean();
            if (c.row(i).cwiseAbs().maxCoeff() <= 1e-14 * (std::abs(mean) + 1.0)) c.row(i).setZero();
        }
        ss += c.squaredNorm();
        out.push_back(std::move(c));
    }
    const double count = static_cast<double>(ds.n_envs() * ds.n_vars() * ds.n_steps());
    const double rms = std::sqrt(ss / count);
    if (rms > 0.0)
        for (auto& c : out) c /= rms;
    return MultiEnvDataset(std::move(out), ds.var_names());
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline Json truth_to_json(const GroundTruth& g) {
    Json j;
    j["adjacency"] = json_io::matrix_to_json(g.adjacency);
    j["latent_children"] = g.latent_children;
    j["latent_to_obs"] = json_io::matrix_to_json(g.latent_to_obs);
    j["latent_dynamics"] = json_io::vector_to_json(g.latent_dynamics);
    j["base_weights"] = json_io::matrix_to_json(g.base_weights);
    j["obs_weights"] = json_io::stack_to_json(g.obs_weights);
    j["intervention_mask"] = json_io::stack_to_json(g.intervention_mask);
    j["latent_series"] = json_io::stack_to_json(g.latent_series);
    return j;
}

}  // namespace detail

inline void save_truth(const GroundTruth& g, const std::filesystem::path& file) {
    json_io::write_file(file, detail::truth_to_json(g));
}

inline GroundTruth load_truth(const std::filesystem::path& file) {
    const Json j = json_io::read_file(file);
    const std::string where = file.string();
    try {
        GroundTruth g;
        g.adjacency = json_io::matrix_from_json<int>(j.at("adjacency"), where + ": adjacency");
        const Index d = g.adjacency.rows();
        g.latent_children = j.at("latent_children").get<std::vector<std::vector<int>>>();
        g.latent_dynamics = json_io::vector_from_json(j.at("latent_dynamics"), where + ": latent_dynamics");
        const Index p = g.latent_dynamics.size();
        g.latent_to_obs = json_io::matrix_from_json(j.at("latent_to_obs"), where + ": latent_to_obs", d);
        if (p == 0) g.latent_to_obs.resize(0, d);
        g.obs_weights = json_io::stack_from_json(j.at("obs_weights"), where + ": obs_weights");
        g.intervention_mask = json_io::stack_from_json<int>(j.at("intervention_mask"), where + ": intervention_mask");
        g.base_weights = j.contains("base_weights")
                             ? json_io::matrix_from_json(j.at("base_weights"), where + ": base_weights")
                             : (g.obs_weights.empty() ? Matrix::Zero(d, d) : g.obs_weights.front());
        const Json& ls = j.at("latent_series");
        if (!ls.is_array()) throw FormatError(where + ": latent_series must be an array");
        for (std::size_t k = 0; k < ls.size(); ++k) {
            Matrix m = json_io::matrix_from_json(ls[k], where + ": latent_series", 0);
            g.latent_series.push_back(std::move(m));
        }
        require_shape(g.adjacency.cols() == d, where + ": adjacency must be square");
        return g;
    } catch (const Json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
}

/// Writes manifest.json, env_<k>.csv and (optionally) graph.json into `dir`,
/// creating it if needed. Values are written with 17 significant digits.
inline void save_dataset(const MultiEnvDataset& ds, const std::optional<GroundTruth>& truth,
                         const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

    Json manifest;
    manifest["n_envs"] = ds.n_envs();
    manifest["n_vars"] = ds.n_vars();
    manifest["n_steps"] = ds.n_steps();
    manifest["var_names"] = ds.var_names();
    json_io::write_file(dir / "manifest.json", manifest);

    for (Index k = 0; k < ds.n_envs(); ++k) {
        const auto file = dir / ("env_" + std::to_string(k) + ".csv");
        std::ofstream out(file);
        if (!out) throw IoError("cannot write " + file.string());
        const auto& names = ds.var_names();
        for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
        out << '\n';
        const Matrix& x = ds.env(k);
        std::string line;
        for (Index t = 0; t < x.cols(); ++t) {
            line.clear();
            for (Index i = 0; i < x.rows(); ++i) {
                if (i) line += ',';
                line += detail::format_double(x(i, t));
            }
            out << line << '\n';
        }
        if (!out) throw IoError("write failed for " + file.string());
    }
    if (truth) save_truth(*truth, dir / "graph.json");
}

inline MultiEnvDataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw IoError("missing file " + manifest_path.string());
    const Json manifest = json_io::read_file(manifest_path);
    Index n_envs = 0, d = 0, t = 0;
    std::vector<std::string> names;
    try {
        n_envs = manifest.at("n_envs").get<Index>();
        d = manifest.at("n_vars").get<Index>();
        t = manifest.at("n_steps").get<Index>();
        names = manifest.at("var_names").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    if (n_envs < 1 || d < 1 || t < 2) throw FormatError(manifest_path.string() + ": invalid dimensions");
    if (static_cast<Index>(names.size()) != d)
        throw FormatError(manifest_path.string() + ": var_names has " + std::to_string(names.size()) + " entries, n_vars is " +
                          std::to_string(d));

    std::vector<Matrix> series;
    for (Index k = 0; k < n_envs; ++k) {
        const std::string fname = "env_" + std::to_string(k) + ".csv";
        const auto file = dir / fname;
        std::ifstream in(file);
        if (!in) throw IoError("missing file " + file.string());
        std::string line;
        if (!std::getline(in, line)) throw FormatError(fname + ": empty file");
        const auto header = detail::split_csv_line(detail::trim(line));
        if (static_cast<Index>(header.size()) != d)
            throw FormatError(fname + ": dimension mismatch, header has " + std::to_string(header.size()) +
                              " columns but manifest n_vars is " + std::to_string(d));
        Matrix x(d, t);
        Index row = 0;
        while (std::getline(in, line)) {
            const auto trimmed = detail::trim(line);
            if (trimmed.empty()) continue;
            if (row >= t)
                throw FormatError(fname + ": dimension mismatch, more than " + std::to_string(t) + " data rows");
            const auto cells = detail::split_csv_line(trimmed);
            if (static_cast<Index>(cells.size()) != d)
                throw FormatError(fname + ": dimension mismatch at row " + std::to_string(row + 1) + ", found " +
                                  std::to_string(cells.size()) + " columns, expected " + std::to_string(d));
            for (Index i = 0; i < d; ++i) {
                const auto cell = detail::trim(cells[static_cast<std::size_t>(i)]);
                double v = 0.0;
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                    throw FormatError(fname + ": non-numeric cell at row " + std::to_string(row + 1) + ", column " +
                                      std::to_string(i + 1));
                if (!std::isfinite(v))
                    throw FormatError(fname + ": non-finite value at row " + std::to_string(row + 1) + ", column " +
                                      std::to_string(i + 1));
                x(i, row) = v;
            }
            ++row;
        }
        if (row != t)
            throw FormatError(fname + ": dimension mismatch, found " + std::to_string(row) + " data rows, manifest n_steps is " +
                              std::to_string(t));
        series.push_back(std::move(x));
    }
    return MultiEnvDataset(std::move(series), std::move(names));
}

}  // namespace invargc
