#pragma once

// Result tables (CSV / Markdown) and the long-format panel data file
// unit_id,t,y,x1..xk.

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aoi/estimator.hpp"
#include "aoi/numeric.hpp"
#include "aoi/registry.hpp"

namespace aoi {

/// 6 significant digits (printf %.6g, which rounds exact ties to even).
inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  if (std::string_view(buf) == "-0") return "0";
  return buf;
}

inline std::string format_number(std::optional<double> v) { return v ? format_number(*v) : "NA"; }

/// Round-trip representation for data files.
inline std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

enum class TableFormat { csv, markdown };

class Table {
 public:
  explicit Table(std::vector<std::string> headers) : headers_(std::move(headers)) {}

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != headers_.size()) throw ValidationError("table: row width does not match header");
    rows_.push_back(std::move(cells));
  }

  const std::vector<std::string>& headers() const { return headers_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  void write(std::ostream& os, TableFormat fmt, const std::string& comment = {}) const {
    if (fmt == TableFormat::csv) {
      if (!comment.empty()) os << "# " << comment << '\n';
      write_line(os, headers_, ",");
      for (const auto& r : rows_) write_line(os, r, ",");
      return;
    }
    if (!comment.empty()) os << "<!-- " << comment << " -->\n\n";
    os << "| ";
    write_line(os, headers_, " | ", " |");
    os << '|';
    for (std::size_t i = 0; i < headers_.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& r : rows_) {
      os << "| ";
      write_line(os, r, " | ", " |");
    }
  }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells, const char* sep,
                         const char* end = "") {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << sep;
      os << cells[i];
    }
    os << end << '\n';
  }

  std::vector<std::string> headers_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// Panel data

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    out.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

struct ParseError : ValidationError {
  ParseError(std::size_t line, const std::string& msg)
      : ValidationError("line " + std::to_string(line) + ": " + msg), line(line) {}
  std::size_t line;
};

/// Reads unit_id,t,y,x1..xk rows (t is 1-based). Units keep the order of
/// first appearance; every unit must cover periods 1..T exactly once, with
/// the same T for all units.
inline Dataset read_panel_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    for (auto c : detail::split_csv_line(line)) header.emplace_back(c);
    break;
  }
  if (header.size() < 3 || header[0] != "unit_id" || header[1] != "t" || header[2] != "y") {
    throw ParseError(lineno, "header must start with unit_id,t,y");
  }
  const std::size_t k = header.size() - 3;
  for (std::size_t j = 0; j < k; ++j) {
    if (header[3 + j] != "x" + std::to_string(j + 1)) {
      throw ParseError(lineno, "expected column x" + std::to_string(j + 1) + ", got '" + header[3 + j] + "'");
    }
  }

  struct Row {
    std::size_t t;
    int y;
    std::vector<double> x;
    std::size_t line;
  };
  std::map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<std::vector<Row>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    if (cells[0].empty()) throw ParseError(lineno, "empty unit_id");
    Row r;
    r.line = lineno;
    try {
      r.t = parse_count(cells[1], "column t");
      const std::size_t y = parse_count(cells[2], "column y");
      if (y > 1) throw ValidationError("y must be 0 or 1");
      r.y = static_cast<int>(y);
      for (std::size_t j = 0; j < k; ++j) {
        r.x.push_back(parse_real(cells[3 + j], "column x" + std::to_string(j + 1)));
        if (!std::isfinite(r.x.back())) throw ValidationError("non-finite covariate");
      }
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    if (r.t < 1) throw ParseError(lineno, "t is 1-based");
    auto [it, inserted] = index.try_emplace(std::string(cells[0]), ids.size());
    if (inserted) {
      ids.emplace_back(cells[0]);
      rows.emplace_back();
    }
    rows[it->second].push_back(std::move(r));
  }
  if (ids.empty()) throw ParseError(lineno, "no data rows");

  Dataset data;
  std::optional<std::size_t> T;
  for (std::size_t u = 0; u < ids.size(); ++u) {
    auto& rs = rows[u];
    const std::size_t Tu = rs.size();
    if (T && Tu != *T) {
      throw ParseError(rs.front().line, "unit '" + ids[u] + "' has " + std::to_string(Tu) + " periods, expected " +
                                            std::to_string(*T));
    }
    T = Tu;
    Unit unit;
    unit.id = ids[u];
    unit.y.assign(Tu, -1);
    unit.x.resize(static_cast<Eigen::Index>(Tu), static_cast<Eigen::Index>(k));
    for (const auto& r : rs) {
      if (r.t > Tu) throw ParseError(r.line, "period " + std::to_string(r.t) + " out of range 1.." + std::to_string(Tu));
      if (unit.y[r.t - 1] != -1) throw ParseError(r.line, "duplicate period " + std::to_string(r.t));
      unit.y[r.t - 1] = r.y;
      for (std::size_t j = 0; j < k; ++j) unit.x(static_cast<Eigen::Index>(r.t - 1), static_cast<Eigen::Index>(j)) = r.x[j];
    }
    data.push_back(std::move(unit));
  }
  return data;
}

inline Dataset read_panel_csv_string(const std::string& text) {
  std::istringstream in(text);
  return read_panel_csv(in);
}

/// Writes the dataset with full-precision covariates.
inline void write_panel_csv(std::ostream& os, const Dataset& data) {
  const Eigen::Index k = data.empty() ? 0 : data.front().x.cols();
  os << "unit_id,t,y";
  for (Eigen::Index j = 0; j < k; ++j) os << ",x" << (j + 1);
  os << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& u = data[i];
    const std::string id = u.id.empty() ? std::to_string(i) : u.id;
    for (std::size_t t = 0; t < u.y.size(); ++t) {
      os << id << ',' << (t + 1) << ',' << u.y[t];
      for (Eigen::Index j = 0; j < k; ++j) os << ',' << format_exact(u.x(static_cast<Eigen::Index>(t), j));
      os << '\n';
    }
  }
}

}  // namespace aoi
