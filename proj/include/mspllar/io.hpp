#pragma once

// CSV ingestion, covariate transforms and plot-ready output files.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mspllar/core_model.hpp"
#include "mspllar/error.hpp"
#include "mspllar/estimation.hpp"

namespace mspllar::io {

/// Observed counts plus covariate columns, row t entering eta_t.
struct SeriesBundle {
  std::vector<std::string> time_index;
  std::vector<int> y;
  std::vector<std::string> covariate_names;
  Matrix covariates;  // T x r

  int length() const { return static_cast<int>(y.size()); }

  int column_of(const std::string& name) const {
    const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) throw DataError("unknown covariate column: " + name);
    return static_cast<int>(it - covariate_names.begin());
  }

  /// T x k matrix holding the named columns in the given order.
  Matrix select(const std::vector<std::string>& names) const {
    Matrix out(length(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t c = 0; c < names.size(); ++c) out.col(c) = covariates.col(column_of(names[c]));
    return out;
  }
};

struct CsvSchema {
  std::string time_column = "t";
  std::string count_column = "y";
  /// Empty: every remaining column is a covariate.
  std::vector<std::string> covariate_columns;
  bool all_remaining_covariates = true;
};

// ---------------------------------------------------------------------------
// Parsing helpers.

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one CSV record; double-quoted fields may contain commas.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "." || s == "null";
}

/// Strictly increasing periods: numerically when both labels are numbers,
/// lexicographically otherwise (ISO dates and year-month strings sort this way).
inline bool period_before(const std::string& a, const std::string& b) {
  const auto x = parse_double(a);
  const auto y = parse_double(b);
  if (x && y) return *x < *y;
  return a < b;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Reads a header-first CSV into a SeriesBundle. Errors name the file line.
inline SeriesBundle parse_csv(const std::string& text, const CsvSchema& schema,
                              const std::string& source = "<input>") {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw DataError(source + ": missing header row");
  const auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(source + ": missing column '" + name + "'");
    return static_cast<int>(it - header.begin());
  };
  const int time_col = column(schema.time_column);
  const int count_col = column(schema.count_column);
  std::vector<std::string> cov_names = schema.covariate_columns;
  if (cov_names.empty() && schema.all_remaining_covariates) {
    for (const auto& h : header) {
      if (h != schema.time_column && h != schema.count_column) cov_names.push_back(h);
    }
  }
  std::vector<int> cov_cols;
  for (const auto& n : cov_names) cov_cols.push_back(column(n));

  SeriesBundle out;
  out.covariate_names = cov_names;
  std::vector<std::vector<double>> cov_values(cov_names.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    const auto where = source + " line " + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    const std::string& label = fields[time_col];
    if (is_missing(label)) throw DataError(where + ": missing time label");
    if (!out.time_index.empty() && !period_before(out.time_index.back(), label)) {
      throw DataError(where + ": period '" + label + "' is duplicated or out of order");
    }
    const std::string& count = fields[count_col];
    if (is_missing(count)) throw DataError(where + ": missing count");
    const auto v = parse_integer(count);
    if (!v || *v < 0 || *v > std::numeric_limits<int>::max()) {
      throw DataError(where + ": count '" + count + "' is not a non-negative integer");
    }
    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const std::string& f = fields[cov_cols[c]];
      if (is_missing(f)) throw DataError(where + ": missing value in column '" + cov_names[c] + "'");
      const auto x = parse_double(f);
      if (!x || !std::isfinite(*x)) {
        throw DataError(where + ": value '" + f + "' in column '" + cov_names[c] + "' is not a number");
      }
      cov_values[c].push_back(*x);
    }
    out.time_index.push_back(label);
    out.y.push_back(static_cast<int>(*v));
  }
  if (out.y.empty()) throw DataError(source + ": no data rows");
  out.covariates.resize(out.length(), static_cast<Eigen::Index>(cov_names.size()));
  for (std::size_t c = 0; c < cov_names.size(); ++c) {
    for (int t = 0; t < out.length(); ++t) out.covariates(t, c) = cov_values[c][t];
  }
  return out;
}

inline SeriesBundle ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_csv(read_file(path), schema, path.string());
}

// ---------------------------------------------------------------------------
// Covariate transforms.

enum class TransformKind { yearly_growth, yearly_diff };

inline TransformKind parse_transform_kind(const std::string& s) {
  if (s == "yearly_growth" || s == "growth") return TransformKind::yearly_growth;
  if (s == "yearly_diff" || s == "diff") return TransformKind::yearly_diff;
  throw UsageError("unknown transform '" + s + "' (expected yearly_growth or yearly_diff)");
}

/// (x_t - x_{t-p}) / x_{t-p} or x_t - x_{t-p}; the result has T - p entries.
inline Vector transform_covariate(const Vector& column, TransformKind kind, int period) {
  const auto T = column.size();
  if (period < 1) throw UsageError("transform period must be at least 1");
  if (period >= T) throw DataError("transform period must be shorter than the series");
  Vector out(T - period);
  for (Eigen::Index t = period; t < T; ++t) {
    const double base = column(t - period);
    if (kind == TransformKind::yearly_growth) {
      if (base == 0.0) throw DataError("growth rate has a zero denominator at row " + std::to_string(t - period + 1));
      out(t - period) = (column(t) - base) / base;
    } else {
      out(t - period) = column(t) - base;
    }
  }
  return out;
}

struct TransformSpec {
  std::string column;
  TransformKind kind = TransformKind::yearly_diff;
  int period = 12;
};

/// Parses "column:kind:period", e.g. "indpro:yearly_growth:12".
inline TransformSpec parse_transform_spec(const std::string& text) {
  const auto first = text.find(':');
  const auto second = first == std::string::npos ? first : text.find(':', first + 1);
  if (second == std::string::npos) {
    throw UsageError("transform '" + text + "' must look like column:kind:period");
  }
  TransformSpec spec;
  spec.column = text.substr(0, first);
  spec.kind = parse_transform_kind(text.substr(first + 1, second - first - 1));
  const auto period = parse_integer(text.substr(second + 1));
  if (!period || *period < 1) throw UsageError("transform '" + text + "' has an invalid period");
  spec.period = static_cast<int>(*period);
  return spec;
}

/// Transforms covariates in place. Every transform reads the original
/// column; afterwards the first max(period) rows of all columns, counts and
/// time labels are dropped so the bundle stays aligned.
inline void apply_transforms(SeriesBundle& bundle, const std::vector<TransformSpec>& specs) {
  if (specs.empty()) return;
  int drop = 0;
  for (const auto& s : specs) drop = std::max(drop, s.period);
  const int T = bundle.length();
  if (drop >= T) throw DataError("transform period must be shorter than the series");
  Matrix cov = bundle.covariates.bottomRows(T - drop);
  for (const auto& s : specs) {
    const int c = bundle.column_of(s.column);
    const Vector transformed = transform_covariate(bundle.covariates.col(c), s.kind, s.period);
    cov.col(c) = transformed.tail(T - drop);
  }
  bundle.covariates = std::move(cov);
  bundle.y.erase(bundle.y.begin(), bundle.y.begin() + drop);
  bundle.time_index.erase(bundle.time_index.begin(), bundle.time_index.begin() + drop);
}

inline void apply_transform(SeriesBundle& bundle, const std::string& name, TransformKind kind, int period) {
  apply_transforms(bundle, {TransformSpec{name, kind, period}});
}

// ---------------------------------------------------------------------------
// Output.

/// Shortest representation of x that parses back to the same double (at most
/// 17 significant digits).
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Builds CSV text row by row.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote_field(fields[i]);
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

/// Collects output files and publishes them together: each is written to a
/// temporary name in the target directory, then renamed. Nothing is left
/// behind when commit() is never reached.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  std::vector<std::filesystem::path> commit() const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create output directory " + dir_.string() + ": " + ec.message());
    std::vector<std::pair<fs::path, fs::path>> staged;
    const auto cleanup = [&] {
      for (const auto& [tmp, _] : staged) fs::remove(tmp, ec);
    };
    for (const auto& [name, content] : files_) {
      const fs::path final_path = dir_ / name;
      const fs::path tmp = dir_ / ("." + name + ".tmp");
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << content;
      out.close();
      staged.emplace_back(tmp, final_path);
      if (!out) {
        cleanup();
        throw DataError("cannot write " + tmp.string());
      }
    }
    std::vector<fs::path> written;
    for (const auto& [tmp, final_path] : staged) {
      fs::rename(tmp, final_path, ec);
      if (ec) {
        cleanup();
        throw DataError("cannot publish " + final_path.string() + ": " + ec.message());
      }
      written.push_back(final_path);
    }
    return written;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

// ---------------------------------------------------------------------------
// Fit report: one row per reported quantity followed by summary statistics.
//   name,value,se,z,p_value,significant_5pct

struct FitSummary {
  int T = 0;
  int p = 0;
  double qll = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  double mse = 0.0;
};

inline std::string fit_report_csv(const FitResult& fit, const FitSummary& s) {
  CsvWriter w({"name", "value", "se", "z", "p_value", "significant_5pct"});
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    const double est = fit.estimates(i);
    const double se = fit.standard_errors.size() > 0 ? fit.standard_errors(i) : std::nan("");
    std::string z = "", pv = "", sig = "";
    if (se > 0.0 && std::isfinite(se)) {
      const WaldResult wt = wald_test(est, se);
      z = format_number(wt.statistic);
      pv = format_number(wt.p_value);
      sig = wt.reject_at_5pct ? "yes" : "no";
    }
    w.row({fit.names[i], format_number(est), format_number(se), z, pv, sig});
  }
  const auto stat = [&](const std::string& name, const std::string& value) {
    w.row({name, value, "", "", "", ""});
  };
  stat("m", std::to_string(fit.regimes()));
  stat("r", std::to_string(fit.theta_hat.covariates()));
  stat("T", std::to_string(s.T));
  stat("p", std::to_string(s.p));
  stat("df", std::to_string(s.T - s.p));
  stat("qll", format_number(s.qll));
  stat("aic", format_number(s.aic));
  stat("bic", format_number(s.bic));
  stat("mse", format_number(s.mse));
  stat("iterations", std::to_string(fit.convergence.iterations));
  stat("gradient_norm", format_number(fit.convergence.gradient_norm));
  stat("status", to_string(fit.convergence.status));
  return w.str();
}

/// Name -> value column of a fit report.
inline std::map<std::string, std::string> read_fit_report(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::map<std::string, std::string> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (header) {
      if (fields.size() < 2 || fields[0] != "name" || fields[1] != "value") {
        throw DataError(path.string() + ": not a fit report (expected name,value,... header)");
      }
      header = false;
      continue;
    }
    if (fields.size() < 2) throw DataError(path.string() + ": malformed row '" + line + "'");
    out[fields[0]] = fields[1];
  }
  return out;
}

/// Rebuilds a parameter set (and covariate names) from a fit report.
inline std::pair<ParameterSet, std::vector<std::string>> parameters_from_report(
    const std::map<std::string, std::string>& report) {
  const auto get = [&](const std::string& key) {
    const auto it = report.find(key);
    if (it == report.end()) throw DataError("fit report lacks '" + key + "'");
    const auto v = parse_double(it->second);
    if (!v) throw DataError("fit report value for '" + key + "' is not a number");
    return *v;
  };
  const int m = static_cast<int>(get("m"));
  if (m < 1) throw DataError("fit report has m < 1");
  std::vector<std::string> covariates;
  const std::string suffix = "_1";
  for (const auto& [name, _] : report) {
    if (name.rfind("beta_", 0) == 0 && name.size() > 5 + suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      covariates.push_back(name.substr(5, name.size() - 5 - suffix.size()));
    }
  }
  // Covariates come back in name order; callers select columns by name.
  const int r = static_cast<int>(covariates.size());
  const auto names = reported_names(m, covariates);
  Vector values(static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].rfind("delta", 0) == 0) continue;
    values(i) = get(names[i]);
  }
  ParameterSet p;
  p.d.resize(m);
  p.a.resize(m);
  p.b.resize(m);
  p.beta.resize(m, r);
  Matrix g(m, m);
  for (int k = 0; k < m; ++k) {
    p.a(k) = values(report_index::a(m, k));
    p.b(k) = values(report_index::b(m, k));
    p.d(k) = values(report_index::d(m, k));
    for (int c = 0; c < r; ++c) p.beta(k, c) = values(report_index::beta(m, c, k));
    for (int l = 0; l < m; ++l) g(k, l) = values(report_index::gamma(m, r, k, l));
  }
  p.gamma = TransitionMatrix(g);
  p.validate();
  return {p, covariates};
}

}  // namespace mspllar::io
