#pragma once

#include "invargc/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace invargc {

using Json = nlohmann::json;

namespace json_io {

template <class Derived>
Json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
    Json rows = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

template <class Derived>
Json vector_to_json(const Eigen::MatrixBase<Derived>& v) {
    Json out = Json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

template <class MatrixT>
Json stack_to_json(const std::vector<MatrixT>& stack) {
    Json out = Json::array();
    for (const auto& m : stack) out.push_back(matrix_to_json(m));
    return out;
}

// Parses a rectangular array of arrays. An empty outer array gives a
// rows x cols matrix only when the caller supplies the expected column count.
template <class Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix_from_json(const Json& j, const std::string& what,
                                                                       Index expected_cols = -1) {
    if (!j.is_array()) throw FormatError(what + ": expected an array of rows");
    const Index rows = static_cast<Index>(j.size());
    Index cols = expected_cols;
    if (rows > 0) {
        if (!j[0].is_array()) throw FormatError(what + ": row 0 is not an array");
        cols = static_cast<Index>(j[0].size());
    }
    if (cols < 0) cols = 0;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const Json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Index>(row.size()) != cols)
            throw FormatError(what + ": row " + std::to_string(r) + " has the wrong length");
        for (Index c = 0; c < cols; ++c) {
            const Json& cell = row[static_cast<std::size_t>(c)];
            if (!cell.is_number())
                throw FormatError(what + ": non-numeric entry at (" + std::to_string(r) + ", " + std::to_string(c) + ")");
            m(r, c) = cell.get<Scalar>();
        }
    }
    return m;
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
    if (!j.is_array()) throw FormatError(what + ": expected an array");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw FormatError(what + ": non-numeric entry at " + std::to_string(i));
        v(static_cast<Index>(i)) = j[i].get<double>();
    }
    return v;
}

template <class Scalar = double>
std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> stack_from_json(const Json& j, const std::string& what,
                                                                                   Index expected_cols = -1) {
    if (!j.is_array()) throw FormatError(what + ": expected an array of matrices");
    std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> out;
    out.reserve(j.size());
    for (std::size_t k = 0; k < j.size(); ++k)
        out.push_back(matrix_from_json<Scalar>(j[k], what + "[" + std::to_string(k) + "]", expected_cols));
    return out;
}

inline Json read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_file(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace json_io
}  // namespace invargc
