#ifndef SPLITPLOT_IO_HPP
#define SPLITPLOT_IO_HPP

#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simulation.hpp"
#include "test_engine.hpp"

namespace splitplot {

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_double(const std::string& s, double& v) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+') ++b;
    auto res = std::from_chars(b, e, v);
    return res.ec == std::errc() && res.ptr == e;
}

}  // namespace detail

// Sample CSV: header `group,y1,...,yd`, one subject per row, labels 1..a.
inline SplitPlotSample parse_sample_csv(std::istream& in, std::vector<std::string>* warnings = nullptr) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::parse_error, "empty sample file");
    auto header = detail::split_line(line);
    if (header.size() < 2 || header[0] != "group")
        throw Error(ErrorKind::parse_error, "header must be group,y1,...,yd");
    for (std::size_t c = 1; c < header.size(); ++c)
        if (header[c] != "y" + std::to_string(c))
            throw Error(ErrorKind::parse_error, "header column " + std::to_string(c + 1) + " must be y" +
                                                    std::to_string(c) + ", found '" + header[c] + "'");
    const long d = static_cast<long>(header.size()) - 1;
    std::map<long, std::vector<std::vector<double>>> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_line(line);
        if (static_cast<long>(cells.size()) != d + 1)
            throw Error(ErrorKind::parse_error, "row " + std::to_string(lineno) + " has " +
                                                    std::to_string(cells.size()) + " cells, expected " +
                                                    std::to_string(d + 1));
        long label = 0;
        {
            const std::string& g = cells[0];
            auto res = std::from_chars(g.data(), g.data() + g.size(), label);
            if (g.empty() || res.ec != std::errc() || res.ptr != g.data() + g.size() || label < 1)
                throw Error(ErrorKind::parse_error, "row " + std::to_string(lineno) +
                                                        ", column group: label must be a positive integer");
        }
        std::vector<double> vals(d);
        for (long c = 0; c < d; ++c) {
            const std::string& cell = cells[c + 1];
            const std::string where = "row " + std::to_string(lineno) + ", column " + header[c + 1];
            if (cell.empty()) throw Error(ErrorKind::parse_error, where + ": missing value");
            if (!detail::parse_double(cell, vals[c]) || !std::isfinite(vals[c]))
                throw Error(ErrorKind::parse_error, where + ": '" + cell + "' is not a finite number");
        }
        rows[label].push_back(std::move(vals));
    }
    if (rows.empty()) throw Error(ErrorKind::parse_error, "no data rows");
    long expect = 1;
    for (const auto& kv : rows) {
        if (kv.first != expect)
            throw Error(ErrorKind::validation_error, "group labels must be consecutive 1..a; label " +
                                                         std::to_string(expect) + " is missing");
        ++expect;
    }
    SplitPlotSample s;
    for (const auto& kv : rows) {
        Matrix X(static_cast<long>(kv.second.size()), d);
        for (long j = 0; j < X.rows(); ++j)
            for (long c = 0; c < d; ++c) X(j, c) = kv.second[j][c];
        if (X.rows() < 2 && warnings)
            warnings->push_back("group " + std::to_string(kv.first) + " has fewer than 2 subjects; estimators limited");
        s.groups.push_back(std::move(X));
    }
    return s;
}

inline SplitPlotSample read_sample_csv(const std::string& path, std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::invalid_input, "cannot open " + path);
    return parse_sample_csv(in, warnings);
}

inline void write_sample_csv(std::ostream& out, const SplitPlotSample& s) {
    out << "group";
    for (long t = 1; t <= s.d(); ++t) out << ",y" << t;
    out << '\n';
    out << std::setprecision(17);
    for (long i = 0; i < s.a(); ++i)
        for (long j = 0; j < s.groups[i].rows(); ++j) {
            out << (i + 1);
            for (long t = 0; t < s.d(); ++t) out << ',' << s.groups[i](j, t);
            out << '\n';
        }
}

inline void write_sample_csv(const std::string& path, const SplitPlotSample& s) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path);
    write_sample_csv(out, s);
}

// Headerless, row-major real matrix.
inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::invalid_input, "cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_line(line);
        std::vector<double> r(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (!detail::parse_double(cells[c], r[c]))
                throw Error(ErrorKind::parse_error, path + " row " + std::to_string(lineno) + ", column " +
                                                        std::to_string(c + 1) + ": not a number");
        if (!rows.empty() && r.size() != rows[0].size())
            throw Error(ErrorKind::parse_error, path + " row " + std::to_string(lineno) + " is ragged");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw Error(ErrorKind::parse_error, path + " is empty");
    Matrix M(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
    for (long i = 0; i < M.rows(); ++i)
        for (long j = 0; j < M.cols(); ++j) M(i, j) = rows[i][j];
    return M;
}

inline void write_matrix_csv(const std::string& path, const Matrix& M) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::invalid_input, "cannot write " + path);
    out << std::setprecision(17);
    for (long i = 0; i < M.rows(); ++i) {
        for (long j = 0; j < M.cols(); ++j) out << (j ? "," : "") << M(i, j);
        out << '\n';
    }
}

inline nlohmann::json to_json(const TestResult& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["hypothesis"] = r.hypothesis;
    j["q"] = num(r.q);
    j["e_hat"] = num(r.e_hat);
    j["var_hat"] = num(r.var_hat);
    j["w"] = num(r.w);
    j["f_hat"] = num(r.f_hat);
    j["tau_hat"] = num(r.tau_hat);
    j["p_value"] = num(r.p_value);
    j["reject_phi_star"] = r.reject_phi_star;
    j["reject_psi_z"] = r.reject_psi_z;
    j["reject_psi_chi"] = r.reject_psi_chi;
    j["alpha"] = r.alpha;
    j["seed"] = r.seed;
    j["B"] = r.B;
    j["correction_applied"] = r.correction_applied;
    j["estimator_mode"] = to_string(r.meta.mode);
    j["f_available"] = r.f_available;
    if (!r.warning.empty()) j["warning"] = r.warning;
    j["version"] = version;
    return j;
}

inline const char* test_result_csv_header() {
    return "hypothesis,q,e_hat,var_hat,w,f_hat,tau_hat,p_value,reject_phi_star,reject_psi_z,reject_psi_chi,alpha,"
           "seed,B,correction_applied,estimator_mode,version";
}

inline std::string test_result_csv_row(const TestResult& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << r.hypothesis << ',' << r.q << ',' << r.e_hat << ',' << r.var_hat << ',' << r.w << ',' << r.f_hat << ','
       << r.tau_hat << ',' << r.p_value << ',' << r.reject_phi_star << ',' << r.reject_psi_z << ','
       << r.reject_psi_chi << ',' << r.alpha << ',' << r.seed << ',' << r.B << ',' << r.correction_applied << ','
       << to_string(r.meta.mode) << ',' << version;
    return os.str();
}

struct OracleRow {
    std::string quantity;
    double value;
    std::string method;
};

inline void write_oracle_csv(std::ostream& out, const std::vector<OracleRow>& rows, std::uint64_t seed = 0,
                             long B = 0) {
    out << "quantity,value,method,seed,B,version\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.quantity << ',' << r.value << ',' << r.method << ',' << seed << ',' << B << ',' << version << '\n';
}

}  // namespace splitplot

#endif
