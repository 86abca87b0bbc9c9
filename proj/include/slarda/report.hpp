#pragma once

// Result records (CSV), JSON summaries and SVG plots.

#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>

#include "slarda/runner.hpp"

namespace slarda {

inline const char* kRecordHeader = "scenario,source,target,variant,seed,accuracy,macro_f1,source_val_acc,seconds,config_hash";

/// One CSV line per (scenario, seed).
inline void write_records(std::ostream& os, const std::vector<ScenarioResult>& results, bool header = true) {
  if (header) os << kRecordHeader << '\n';
  os << std::setprecision(17);
  for (const auto& r : results)
    for (const auto& s : r.runs)
      os << r.spec.label() << ',' << r.spec.source << ',' << r.spec.target << ',' << to_string(r.spec.variant) << ','
         << s.seed << ',' << s.accuracy << ',' << s.macro_f1 << ',' << s.source_val_acc << ',' << s.seconds << ','
         << r.config_hash << '\n';
}

struct RecordRow {
  std::string scenario, source, target, variant;
  std::uint64_t seed = 0;
  double accuracy = 0.0, macro_f1 = 0.0, source_val_acc = 0.0, seconds = 0.0;
  std::string config_hash;
};

inline std::vector<RecordRow> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != kRecordHeader) throw DataError(path.string() + ": unexpected header '" + line + "'");
  std::vector<RecordRow> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 10) throw DataError(path.string() + ": malformed record '" + line + "'");
    out.push_back({f[0], f[1], f[2], f[3], std::stoull(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7]),
                   std::stod(f[8]), f[9]});
  }
  return out;
}

inline nlohmann::json to_json(const ScenarioResult& r) {
  nlohmann::json j;
  j["scenario"] = r.spec.label();
  j["source"] = r.spec.source;
  j["target"] = r.spec.target;
  j["family"] = r.spec.family;
  j["variant"] = to_string(r.spec.variant);
  j["overrides"] = r.spec.overrides;
  j["config_hash"] = r.config_hash;
  j["seconds"] = r.seconds;
  if (!r.ok()) {
    j["error"] = r.error;
    return j;
  }
  j["mean_accuracy"] = r.mean_accuracy;
  j["std_accuracy"] = r.std_accuracy;
  j["mean_macro_f1"] = r.mean_macro_f1;
  j["std_macro_f1"] = r.std_macro_f1;
  auto& runs = j["runs"] = nlohmann::json::array();
  for (const auto& s : r.runs)
    runs.push_back({{"seed", s.seed}, {"accuracy", s.accuracy}, {"macro_f1", s.macro_f1},
                    {"source_val_acc", s.source_val_acc}, {"seconds", s.seconds}});
  return j;
}

inline nlohmann::json to_json(const MatrixTable& t) {
  auto nan_to_null = [](double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); };
  nlohmann::json j;
  j["scenarios"] = t.scenarios;
  j["methods"] = t.methods;
  for (std::size_t r = 0; r < t.methods.size(); ++r) {
    auto row = nlohmann::json::array();
    for (double v : t.cells[r]) row.push_back(nan_to_null(v));
    j["cells"].push_back(row);
    j["average"].push_back(nan_to_null(t.average[r]));
  }
  for (const auto& r : t.results) j["results"].push_back(to_json(r));
  return j;
}

/// Plain-text table in the layout of a cross-domain results table.
inline std::string format_table(const MatrixTable& t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << std::left << std::setw(12) << "method";
  for (const auto& s : t.scenarios) os << std::right << std::setw(12) << s;
  os << std::setw(10) << "Average" << '\n';
  for (std::size_t r = 0; r < t.methods.size(); ++r) {
    os << std::left << std::setw(12) << t.methods[r] << std::right;
    for (double v : t.cells[r]) {
      if (std::isnan(v)) os << std::setw(12) << "FAILED";
      else os << std::setw(12) << v;
    }
    os << std::setw(10) << t.average[r] << '\n';
  }
  return os.str();
}

// ------------------------------------------------------------------------ SVG

namespace detail {
inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}
}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Line plot. `log_x` places x on a log10 axis.
inline std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel, bool log_x = false) {
  const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto fx = [&](double v) { return log_x ? std::log10(v) : v; };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, fx(s.x[i]));
      x1 = std::max(x1, fx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) {
    x0 -= 1;
    x1 += 1;
  }
  if (!(y1 > y0)) {
    y0 -= 1;
    y1 += 1;
  }
  auto px = [&](double v) { return L + (fx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << detail::svg_escape(title)
     << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\" font-size=\"13\">"
     << detail::svg_escape(xlabel) << "</text>\n"
     << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">" << detail::svg_escape(ylabel) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
       << "</text>\n";
  }
  std::size_t ci = 0;
  for (const auto& s : series) {
    const char* col = colors[ci++ % 6];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
      if (ci == 1)
        os << "<text x=\"" << px(s.x[i]) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << s.x[i] << "</text>\n";
    }
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * ci << "\" font-size=\"12\" fill=\"" << col << "\">"
       << detail::svg_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Grouped bar chart of a results table; failed cells are left empty.
inline std::string svg_bar_chart(const MatrixTable& t, const std::string& title) {
  const double W = std::max(640.0, 90.0 * static_cast<double>(t.scenarios.size() + 1) + 220), H = 400, L = 60,
               R = 150, T = 40, B = 70;
  const std::size_t groups = t.scenarios.size() + 1, nm = t.methods.size();
  const double gw = (W - L - R) / static_cast<double>(groups), bw = gw * 0.8 / static_cast<double>(std::max<std::size_t>(nm, 1));
  auto py = [&](double v) { return H - B - v / 100.0 * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << detail::svg_escape(title)
     << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k)
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(25.0 * k) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << 25 * k << "</text>\n";
  for (std::size_t g = 0; g < groups; ++g) {
    const std::string label = g < t.scenarios.size() ? t.scenarios[g] : "Average";
    const double gx = L + gw * static_cast<double>(g) + gw * 0.1;
    for (std::size_t m = 0; m < nm; ++m) {
      const double v = g < t.scenarios.size() ? t.cells[m][g] : t.average[m];
      if (std::isnan(v)) continue;
      os << "<rect x=\"" << gx + bw * static_cast<double>(m) << "\" y=\"" << py(v) << "\" width=\"" << bw
         << "\" height=\"" << H - B - py(v) << "\" fill=\"" << colors[m % 6] << "\"/>\n";
    }
    os << "<text x=\"" << gx + gw * 0.4 << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << detail::svg_escape(label) << "</text>\n";
  }
  for (std::size_t m = 0; m < nm; ++m)
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (m + 1) << "\" font-size=\"12\" fill=\"" << colors[m % 6]
       << "\">" << detail::svg_escape(t.methods[m]) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace slarda
