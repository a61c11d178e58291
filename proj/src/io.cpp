#include "dfm/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace dfm {

namespace {

std::vector<std::string> split_row(const std::string& line, std::size_t lineno, const std::string& source) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"') {
                if (k + 1 < line.size() && line[k + 1] == '"') {
                    cur.push_back('"');
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw Error(source + ":" + std::to_string(lineno) + ": unterminated quote");
    cells.push_back(cur);
    return cells;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace

Panel parse_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    std::vector<std::string> times;
    std::vector<std::vector<double>> rows;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_row(line, lineno, source);
        if (header.empty()) {
            header = std::move(cells);
            if (header.size() < 2) throw Error(source + ":" + std::to_string(lineno) + ": header needs a time column and at least one series");
            std::set<std::string> seen;
            for (std::size_t k = 1; k < header.size(); ++k) {
                header[k] = trim(header[k]);
                if (!seen.insert(header[k]).second)
                    throw Error(source + ":" + std::to_string(lineno) + ": duplicate series name '" + header[k] + "'");
            }
            continue;
        }
        if (cells.size() != header.size())
            throw Error(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(cells.size()));
        times.push_back(trim(cells[0]));
        std::vector<double> vals(header.size() - 1);
        for (std::size_t k = 1; k < cells.size(); ++k) {
            const std::string cell = trim(cells[k]);
            if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") {
                vals[k - 1] = nan;
                continue;
            }
            double v = 0.0;
            const char* b = cell.data();
            const char* e = b + cell.size();
            if (*b == '+') ++b;
            auto [ptr, ec] = std::from_chars(b, e, v);
            if (ec != std::errc() || ptr != e || !std::isfinite(v))
                throw Error(source + ":" + std::to_string(lineno) + ": non-numeric cell '" + cell + "' in column '" +
                            header[k] + "'");
            vals[k - 1] = v;
        }
        rows.push_back(std::move(vals));
    }
    if (header.empty()) throw Error(source + ": empty file");
    const Index T = static_cast<Index>(rows.size()), N = static_cast<Index>(header.size() - 1);
    Matrix values(T, N);
    for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < N; ++i) values(t, i) = rows[t][i];
    std::vector<std::string> names(header.begin() + 1, header.end());
    Panel p;
    p.mask = values.array().isFinite();
    p.values = std::move(values);
    p.names = std::move(names);
    p.time_index = std::move(times);
    p.validate();
    return p;
}

Panel ingest_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), path.string());
}

std::string format_sig(double v, int digits) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string format_roundtrip(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string panel_csv(const Panel& panel) {
    std::ostringstream os;
    os << "t";
    for (const auto& n : panel.names) os << ',' << quote_if_needed(n);
    os << '\n';
    for (Index t = 0; t < panel.T(); ++t) {
        os << quote_if_needed(panel.time_index.empty() ? std::to_string(t + 1) : panel.time_index[t]);
        for (Index i = 0; i < panel.N(); ++i) {
            os << ',';
            if (panel.mask(t, i)) os << format_roundtrip(panel.values(t, i));
        }
        os << '\n';
    }
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

void emit_csv(const Panel& panel, const std::filesystem::path& path) { write_text(path, panel_csv(panel)); }

void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<std::string>& row_labels, const Matrix& m) {
    if (static_cast<Index>(header.size()) != m.cols() + 1 || static_cast<Index>(row_labels.size()) != m.rows())
        throw Error("write_matrix_csv: labels do not match matrix dimensions");
    std::ostringstream os;
    for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << quote_if_needed(header[k]);
    os << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        os << quote_if_needed(row_labels[i]);
        for (Index j = 0; j < m.cols(); ++j) os << ',' << format_sig(m(i, j));
        os << '\n';
    }
    write_text(path, os.str());
}

void write_sidecar(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    const std::int64_t dims[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

Matrix read_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::int64_t dims[2] = {0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || dims[0] < 0 || dims[1] < 0) throw Error("corrupt sidecar '" + path.string() + "'");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(dims[0], dims[1]);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!in) throw Error("truncated sidecar '" + path.string() + "'");
    return rm;
}

}  // namespace dfm
