#pragma once

// Report emission: fixed-schema CSV tables and ordered JSON documents.
// Numbers are printed with std::to_chars in shortest round-trip form, which
// is locale-independent and identical for identical doubles.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asiplab/errors.hpp"
#include "asiplab/stat_fit.hpp"

namespace asiplab::report {

using Json = nlohmann::ordered_json;

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline std::string fmt(long long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string &v) { return v; }
inline std::string fmt(const char *v) { return v; }

/// A CSV table with a fixed header. Cells never contain commas, quotes or
/// newlines, so no quoting is needed.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <class... T>
  void row(const T &...cells) {
    if (sizeof...(T) != header.size()) throw DomainError("Table::row: cell count does not match the header");
    rows.push_back({fmt(cells)...});
  }

  std::string csv() const {
    std::string out;
    auto line = [&](const std::vector<std::string> &cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto &r : rows) line(r);
    return out;
  }
};

inline Table tail_curve_table(const stats::TailCurve &c) {
  Table t{{"n", "p", "stderr"}, {}};
  for (const auto &pt : c) t.row(pt.n, pt.p, pt.stderr);
  return t;
}

/// JSON has no NaN or infinity; those become null so that a report always
/// parses back to itself.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json nums(const std::vector<double> &v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline Json to_json(const stats::FitResult &f) {
  return Json{{"slope", num(f.slope)},
              {"intercept", num(f.intercept)},
              {"r2", num(f.r2)},
              {"stderr_slope", num(f.stderr_slope)},
              {"n_points", f.n_points},
              {"transform", f.transform}};
}

inline stats::FitResult fit_from_json(const Json &j) {
  stats::FitResult f;
  f.slope = j.at("slope").get<double>();
  f.intercept = j.at("intercept").get<double>();
  f.r2 = j.at("r2").get<double>();
  f.stderr_slope = j.at("stderr_slope").get<double>();
  f.n_points = j.at("n_points").get<int>();
  f.transform = j.at("transform").get<std::string>();
  return f;
}

inline Json to_json(const stats::StretchedExpFit &f) {
  return Json{{"gamma_hat", num(f.gamma_hat)}, {"kappa_hat", num(f.kappa_hat)}, {"dropped", f.dropped},
              {"fit", to_json(f.fit)}};
}

inline void write_file(const std::filesystem::path &path, const std::string &content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("emit_report: cannot open '" + path.string() + "' for writing");
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  os.close();
  if (!os) throw IoError("emit_report: write to '" + path.string() + "' failed");
}

} // namespace asiplab::report
