#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "stacklqg/problem.hpp"

namespace stacklqg {

// Scenario document schema (JSON, human-writable):
//   dims     : {n, k, d, l, m, w}
//   horizon  : T
//   matrices : {A, B_F, B_L, D, H1, H2}          row-major nested arrays
//   weights  : {Q_F, Q_L, R_FF, R_FL, R_LL, R_LF, G_F, G_L}
//   initial  : {mean, cov}
// R_FL is optional and defaults to the zero d x d matrix. When l = 0 the H1
// entry may be omitted (leader channel degraded to nothing).

namespace detail {

inline int get_int(const nlohmann::json& j, const std::string& field) {
    if (!j.contains(field)) throw ParseError("missing field \"" + field + "\"");
    if (!j[field].is_number_integer())
        throw ParseError("field \"" + field + "\" must be an integer");
    return j[field].get<int>();
}

inline double get_double(const nlohmann::json& j, const std::string& field) {
    if (!j.contains(field)) throw ParseError("missing field \"" + field + "\"");
    if (!j[field].is_number()) throw ParseError("field \"" + field + "\" must be a number");
    return j[field].get<double>();
}

inline Matrix parse_matrix(const nlohmann::json& j, long rows, long cols,
                           const std::string& field) {
    if (!j.is_array()) throw ParseError("field \"" + field + "\" must be a nested array");
    const long got_rows = static_cast<long>(j.size());
    long got_cols = 0;
    if (got_rows > 0) {
        if (!j[0].is_array())
            throw ParseError("field \"" + field + "\" must be a nested (row-major) array");
        got_cols = static_cast<long>(j[0].size());
    }
    if (got_rows != rows || got_cols != cols)
        throw DimensionError("matrix " + field + ": expected shape " + std::to_string(rows) +
                             "x" + std::to_string(cols) + ", got " + std::to_string(got_rows) +
                             "x" + std::to_string(got_cols));
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<long>(j[r].size()) != cols)
            throw DimensionError("matrix " + field + ": row " + std::to_string(r) +
                                 " has length " + std::to_string(j[r].size()) + ", expected " +
                                 std::to_string(cols));
        for (long c = 0; c < cols; ++c) {
            if (!j[r][c].is_number())
                throw ParseError("matrix " + field + ": entry (" + std::to_string(r) + "," +
                                 std::to_string(c) + ") is not a number");
            m(r, c) = j[r][c].get<double>();
        }
    }
    return m;
}

inline Vector parse_vector(const nlohmann::json& j, long size, const std::string& field) {
    if (!j.is_array() || static_cast<long>(j.size()) != size)
        throw DimensionError("vector " + field + ": expected size " + std::to_string(size) +
                             ", got " + std::to_string(j.is_array() ? j.size() : 0));
    Vector v(size);
    for (long i = 0; i < size; ++i) {
        if (!j[i].is_number())
            throw ParseError("vector " + field + ": entry " + std::to_string(i) +
                             " is not a number");
        v[i] = j[i].get<double>();
    }
    return v;
}

inline nlohmann::json dump_matrix(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (long r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline nlohmann::json dump_vector(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (long i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

}  // namespace detail

inline ProblemSpec load_scenario(const nlohmann::json& doc) {
    using detail::get_double;
    using detail::get_int;
    using detail::parse_matrix;
    using detail::parse_vector;

    for (const char* key : {"dims", "horizon", "matrices", "weights", "initial"})
        if (!doc.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"");

    ProblemSpec s;
    const auto& dims = doc["dims"];
    s.dims.n = get_int(dims, "n");
    s.dims.k = get_int(dims, "k");
    s.dims.d = get_int(dims, "d");
    s.dims.l = get_int(dims, "l");
    s.dims.m = get_int(dims, "m");
    s.dims.w = get_int(dims, "w");
    if (s.dims.n < 1 || s.dims.k < 1 || s.dims.d < 1 || s.dims.m < 1 || s.dims.w < 1 ||
        s.dims.l < 0)
        throw ParseError("dims: n,k,d,m,w must be >= 1 and l >= 0");

    s.T = get_double(doc, "horizon");

    const auto& mats = doc["matrices"];
    for (const char* key : {"A", "B_F", "B_L", "D", "H2"})
        if (!mats.contains(key))
            throw ParseError(std::string("missing field \"matrices.") + key + "\"");
    s.A = parse_matrix(mats["A"], s.dims.n, s.dims.n, "A");
    s.B_F = parse_matrix(mats["B_F"], s.dims.n, s.dims.k, "B_F");
    s.B_L = parse_matrix(mats["B_L"], s.dims.n, s.dims.d, "B_L");
    s.D = parse_matrix(mats["D"], s.dims.n, s.dims.w, "D");
    if (s.dims.l == 0 && !mats.contains("H1")) {
        s.H1 = Matrix::Zero(0, s.dims.n);
    } else {
        if (!mats.contains("H1")) throw ParseError("missing field \"matrices.H1\"");
        s.H1 = parse_matrix(mats["H1"], s.dims.l, s.dims.n, "H1");
    }
    s.H2 = parse_matrix(mats["H2"], s.dims.m, s.dims.n, "H2");

    const auto& wts = doc["weights"];
    for (const char* key : {"Q_F", "Q_L", "R_FF", "R_LL", "R_LF", "G_F", "G_L"})
        if (!wts.contains(key))
            throw ParseError(std::string("missing field \"weights.") + key + "\"");
    s.Q_F = parse_matrix(wts["Q_F"], s.dims.n, s.dims.n, "Q_F");
    s.Q_L = parse_matrix(wts["Q_L"], s.dims.n, s.dims.n, "Q_L");
    s.R_FF = parse_matrix(wts["R_FF"], s.dims.k, s.dims.k, "R_FF");
    s.R_LL = parse_matrix(wts["R_LL"], s.dims.d, s.dims.d, "R_LL");
    s.R_LF = parse_matrix(wts["R_LF"], s.dims.k, s.dims.k, "R_LF");
    s.R_FL = wts.contains("R_FL") ? parse_matrix(wts["R_FL"], s.dims.d, s.dims.d, "R_FL")
                                  : Matrix::Zero(s.dims.d, s.dims.d);
    s.G_F = parse_matrix(wts["G_F"], s.dims.n, s.dims.n, "G_F");
    s.G_L = parse_matrix(wts["G_L"], s.dims.n, s.dims.n, "G_L");

    const auto& init = doc["initial"];
    if (!init.contains("mean")) throw ParseError("missing field \"initial.mean\"");
    if (!init.contains("cov")) throw ParseError("missing field \"initial.cov\"");
    s.x0_mean = parse_vector(init["mean"], s.dims.n, "initial.mean");
    s.x0_cov = parse_matrix(init["cov"], s.dims.n, s.dims.n, "initial.cov");

    check_shapes(s);
    return s;
}

inline nlohmann::json emit_scenario(const ProblemSpec& s) {
    nlohmann::json doc;
    doc["dims"] = {{"n", s.dims.n}, {"k", s.dims.k}, {"d", s.dims.d},
                   {"l", s.dims.l}, {"m", s.dims.m}, {"w", s.dims.w}};
    doc["horizon"] = s.T;
    doc["matrices"] = {{"A", detail::dump_matrix(s.A)},   {"B_F", detail::dump_matrix(s.B_F)},
                       {"B_L", detail::dump_matrix(s.B_L)}, {"D", detail::dump_matrix(s.D)},
                       {"H1", detail::dump_matrix(s.H1)},   {"H2", detail::dump_matrix(s.H2)}};
    doc["weights"] = {{"Q_F", detail::dump_matrix(s.Q_F)},   {"Q_L", detail::dump_matrix(s.Q_L)},
                      {"R_FF", detail::dump_matrix(s.R_FF)}, {"R_FL", detail::dump_matrix(s.R_FL)},
                      {"R_LL", detail::dump_matrix(s.R_LL)}, {"R_LF", detail::dump_matrix(s.R_LF)},
                      {"G_F", detail::dump_matrix(s.G_F)},   {"G_L", detail::dump_matrix(s.G_L)}};
    doc["initial"] = {{"mean", detail::dump_vector(s.x0_mean)},
                      {"cov", detail::dump_matrix(s.x0_cov)}};
    return doc;
}

/// Parses a scenario file. JSON syntax errors are rethrown as ParseError with
/// the position information nlohmann provides (line/byte offset).
inline ProblemSpec load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // Translate the byte offset into a line number for the message.
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i)
            if (text[i] == '\n') ++line;
        throw ParseError("scenario parse error at line " + std::to_string(line) + ": " +
                         e.what());
    }
    return load_scenario(doc);
}

}  // namespace stacklqg
