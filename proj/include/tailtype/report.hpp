#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tailtype/common.hpp"
#include "tailtype/metrics.hpp"
#include "tailtype/rank_stats.hpp"

namespace tailtype {

struct scatter_point {
  std::string entity;
  std::uint64_t hits = 0;
  double salience = 0;
};

// Everything a report needs. Empty members produce no figure.
struct report_bundle {
  std::map<std::string, std::vector<metric_block>> metrics;  // per system
  std::map<std::string, std::size_t> missing_predictions;   // per system
  std::vector<scatter_point> scatter;
  std::optional<double> rho;
  std::map<std::string, std::vector<split_ratio_stat>> split_curves;  // per model
  std::vector<std::size_t> bin_counts;                               // examples per bin, bin 1 first
};

struct report_files {
  std::vector<std::string> figures;
  std::vector<std::string> tables;
  std::vector<std::string> metric_tables;
};

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

struct range {
  double lo = 0, hi = 1;
};

inline range padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 1, lo + 1};
  double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

// Fixed-size canvas with a plot rectangle, axis scales and tick labels.
class canvas {
 public:
  static constexpr double width = 640, height = 420, left = 70, right = 160, top = 40, bottom = 60;

  canvas(std::string title, std::string x_label, std::string y_label, range x, range y)
      : x_(x), y_(y) {
    out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
            "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out_ += "<rect x=\"0\" y=\"0\" width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"white\"/>\n";
    out_ += "<text x=\"" + num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
    out_ += "<text x=\"" + num(left + plot_w() / 2) + "\" y=\"" + num(height - 15) + "\" text-anchor=\"middle\">" +
            escape(x_label) + "</text>\n";
    out_ += "<text x=\"18\" y=\"" + num(top + plot_h() / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
            num(top + plot_h() / 2) + ")\">" + escape(y_label) + "</text>\n";
    out_ += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(plot_w()) + "\" height=\"" +
            num(plot_h()) + "\" fill=\"none\" stroke=\"black\"/>\n";
  }

  static double plot_w() { return width - left - right; }
  static double plot_h() { return height - top - bottom; }

  double px(double x) const { return left + (x - x_.lo) / (x_.hi - x_.lo) * plot_w(); }
  double py(double y) const { return top + plot_h() - (y - y_.lo) / (y_.hi - y_.lo) * plot_h(); }

  void numeric_ticks(bool x_axis, int count = 5) {
    const auto& r = x_axis ? x_ : y_;
    for (int i = 0; i <= count; ++i) {
      double v = r.lo + (r.hi - r.lo) * i / count;
      if (x_axis)
        out_ += "<text x=\"" + num(px(v)) + "\" y=\"" + num(top + plot_h() + 16) + "\" text-anchor=\"middle\">" + tick(v) + "</text>\n";
      else
        out_ += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(v) + 4) + "\" text-anchor=\"end\">" + tick(v) + "</text>\n";
    }
  }

  void x_category(double x, const std::string& label) {
    out_ += "<text x=\"" + num(px(x)) + "\" y=\"" + num(top + plot_h() + 16) + "\" text-anchor=\"middle\">" +
            escape(label) + "</text>\n";
  }

  void point(double x, double y, const char* color) {
    out_ += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"3\" fill=\"" + color + "\" fill-opacity=\"0.7\"/>\n";
  }

  void bar(double x0, double x1, double y, const char* color) {
    double top_y = py(std::max(y, y_.lo)), base = py(std::max(0.0, y_.lo));
    out_ += "<rect x=\"" + num(px(x0)) + "\" y=\"" + num(std::min(top_y, base)) + "\" width=\"" + num(px(x1) - px(x0)) +
            "\" height=\"" + num(std::abs(base - top_y)) + "\" fill=\"" + color + "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    std::string coords;
    for (const auto& [x, y] : pts) coords += (coords.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
    out_ += "<polyline points=\"" + coords + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    for (const auto& [x, y] : pts) point(x, y, color);
  }

  void legend(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      double y = top + 10 + 18.0 * static_cast<double>(i);
      double x = width - right + 12;
      out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) + "\" width=\"10\" height=\"10\" fill=\"" + palette(i) + "\"/>\n";
      out_ += "<text x=\"" + num(x + 16) + "\" y=\"" + num(y) + "\">" + escape(names[i]) + "</text>\n";
    }
  }

  void note(const std::string& text) {
    out_ += "<text x=\"" + num(left + 8) + "\" y=\"" + num(top + 16) + "\">" + escape(text) + "</text>\n";
  }

  std::string finish() const { return out_ + "</svg>\n"; }

 private:
  range x_, y_;
  std::string out_;
};

}  // namespace svg

// Lowercase alnum plus '-', '_' and '.'; anything else becomes '_'.
inline std::string file_stem(std::string_view name) {
  std::string out;
  for (char c : name) {
    auto u = static_cast<unsigned char>(c);
    out += (std::isalnum(u) || c == '-' || c == '_' || c == '.') ? static_cast<char>(std::tolower(u)) : '_';
  }
  return out.empty() ? std::string("unnamed") : out;
}

// Human-readable metric table: one row per subset, P/R/F1 per view with sigma when present.
inline std::string metric_table_text(const std::vector<metric_block>& blocks, std::size_t missing = 0) {
  auto cell = [](const std::optional<double>& v, const std::optional<double>& sd) {
    if (!v) return std::string("NA");
    auto s = fmt_double(*v, 1);
    if (sd) s += "+-" + fmt_double(*sd, 1);
    return s;
  };
  std::string out = "subset";
  for (auto v : all_views) out += " | " + to_string(v) + " P / R / F1";
  out += '\n';
  std::map<int, std::map<label_view, metric_block>> by_subset;
  for (const auto& b : blocks) by_subset[b.subset][b.view] = b;
  for (const auto& [subset, views] : by_subset) {
    out += subset_name(subset);
    for (auto v : all_views) {
      auto it = views.find(v);
      if (it == views.end()) {
        out += " | -";
        continue;
      }
      const auto& b = it->second;
      out += " | " + cell(b.precision, b.sigma_precision) + " / " + cell(b.recall, b.sigma_recall) + " / " +
             cell(b.f1, b.sigma_f1);
    }
    out += '\n';
  }
  if (missing) out += "missing predictions scored as empty: " + std::to_string(missing) + '\n';
  return out;
}

namespace detail {

inline std::string bin_f1_table(const report_bundle& b) {
  std::string out = "system\tbin\tF1\n";
  for (const auto& [system, blocks] : b.metrics)
    for (const auto& blk : blocks)
      if (blk.subset > 0 && blk.view == label_view::overall)
        out += system + '\t' + std::to_string(blk.subset) + '\t' + fmt_double(blk.f1, 4) + '\n';
  return out;
}

inline std::string bin_f1_figure(const report_bundle& b) {
  int k = 0;
  for (const auto& [system, blocks] : b.metrics)
    for (const auto& blk : blocks) k = std::max(k, blk.subset);
  svg::canvas c("Overall F1 per frequency bin", "bin (1 = rarest)", "F1", {0.5, k + 0.5}, {0, 100});
  c.numeric_ticks(false);
  const auto systems = b.metrics.size();
  const double group = 0.8, w = group / static_cast<double>(std::max<std::size_t>(systems, 1));
  std::vector<std::string> names;
  std::size_t si = 0;
  for (const auto& [system, blocks] : b.metrics) {
    names.push_back(system);
    for (const auto& blk : blocks) {
      if (blk.subset < 1 || blk.view != label_view::overall) continue;
      double x0 = blk.subset - group / 2 + w * static_cast<double>(si);
      c.bar(x0, x0 + w, blk.f1, svg::palette(si));
    }
    ++si;
  }
  for (int bin = 1; bin <= k; ++bin) c.x_category(bin, "bin " + std::to_string(bin));
  c.legend(names);
  return c.finish();
}

inline std::string scatter_table(const report_bundle& b) {
  std::string out = "entity\thits\tlog10_hits\tmean_salience\n";
  for (const auto& p : b.scatter)
    out += p.entity + '\t' + std::to_string(p.hits) + '\t' +
           (p.hits ? fmt_g(std::log10(static_cast<double>(p.hits)), 10) : std::string("NA")) + '\t' +
           fmt_g(p.salience, 10) + '\n';
  return out;
}

inline std::string scatter_figure(const report_bundle& b) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& p : b.scatter) {
    if (!p.hits) continue;
    double x = std::log10(static_cast<double>(p.hits));
    xlo = std::min(xlo, x), xhi = std::max(xhi, x);
    ylo = std::min(ylo, p.salience), yhi = std::max(yhi, p.salience);
  }
  if (!(xhi >= xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  svg::canvas c("Search hits vs. mean recovery probability", "log10(hits)", "mean probability", svg::padded(xlo, xhi),
                svg::padded(ylo, yhi));
  c.numeric_ticks(true);
  c.numeric_ticks(false);
  for (const auto& p : b.scatter)
    if (p.hits) c.point(std::log10(static_cast<double>(p.hits)), p.salience, svg::palette(0));
  if (b.rho) c.note("Spearman rho = " + fmt_double(*b.rho, 3));
  return c.finish();
}

inline std::string split_table(const report_bundle& b) {
  std::string out = "model\tsplit_ratio\tmean_probability\tcount\n";
  for (const auto& [model, curve] : b.split_curves)
    for (const auto& s : curve)
      out += model + '\t' + fmt_g(s.bucket, 10) + '\t' + fmt_g(s.mean_probability, 10) + '\t' + std::to_string(s.count) + '\n';
  return out;
}

inline std::string split_figure(const report_bundle& b) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& [model, curve] : b.split_curves)
    for (const auto& s : curve) {
      xlo = std::min(xlo, s.bucket), xhi = std::max(xhi, s.bucket);
      ylo = std::min(ylo, s.mean_probability), yhi = std::max(yhi, s.mean_probability);
    }
  if (!(xhi >= xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  svg::canvas c("Recovery probability by token split ratio", "tokens per word", "mean probability",
                svg::padded(xlo, xhi), svg::padded(ylo, yhi));
  c.numeric_ticks(true);
  c.numeric_ticks(false);
  std::vector<std::string> names;
  std::size_t i = 0;
  for (const auto& [model, curve] : b.split_curves) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& s : curve) pts.emplace_back(s.bucket, s.mean_probability);
    c.polyline(pts, svg::palette(i++));
    names.push_back(model);
  }
  c.legend(names);
  return c.finish();
}

inline std::string bin_distribution_table(const report_bundle& b) {
  std::string out = "bin\texamples\n";
  for (std::size_t i = 0; i < b.bin_counts.size(); ++i)
    out += std::to_string(i + 1) + '\t' + std::to_string(b.bin_counts[i]) + '\n';
  return out;
}

inline std::string bin_distribution_figure(const report_bundle& b) {
  double hi = 1;
  for (auto n : b.bin_counts) hi = std::max(hi, static_cast<double>(n));
  const auto k = static_cast<double>(b.bin_counts.size());
  svg::canvas c("Examples per frequency bin", "bin (1 = rarest)", "examples", {0.5, k + 0.5}, {0, hi * 1.05});
  c.numeric_ticks(false);
  for (std::size_t i = 0; i < b.bin_counts.size(); ++i) {
    double x = static_cast<double>(i + 1);
    c.bar(x - 0.35, x + 0.35, static_cast<double>(b.bin_counts[i]), svg::palette(0));
    c.x_category(x, "bin " + std::to_string(i + 1));
  }
  return c.finish();
}

}  // namespace detail

// Writes figures (SVG) with sibling TSV data tables, metric tables, and manifest.tsv.
// Output bytes depend only on the bundle.
inline report_files emit_report(const report_bundle& bundle, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw input_error("cannot create report directory '" + out_dir + "'");

  report_files files;
  std::string manifest = "kind\tfile\tdata\n";
  auto put = [&](const std::string& name, const std::string& content) {
    write_file((fs::path(out_dir) / name).string(), content);
  };
  auto figure = [&](const std::string& stem, const std::string& svg_text, const std::string& table) {
    put(stem + ".svg", svg_text);
    put(stem + ".tsv", table);
    files.figures.push_back(stem + ".svg");
    files.tables.push_back(stem + ".tsv");
    manifest += "figure\t" + stem + ".svg\t" + stem + ".tsv\n";
    manifest += "table\t" + stem + ".tsv\t-\n";
  };

  for (const auto& [system, blocks] : bundle.metrics) {
    auto stem = "metrics_" + file_stem(system);
    auto missing = bundle.missing_predictions.count(system) ? bundle.missing_predictions.at(system) : 0;
    put(stem + ".tsv", metric_table(blocks));
    put(stem + ".txt", metric_table_text(blocks, missing));
    files.metric_tables.push_back(stem + ".tsv");
    manifest += "metrics\t" + stem + ".tsv\t" + stem + ".txt\n";
  }
  bool has_bins = false;
  for (const auto& [system, blocks] : bundle.metrics)
    for (const auto& blk : blocks) has_bins = has_bins || blk.subset > 0;
  if (has_bins) figure("bin_f1", detail::bin_f1_figure(bundle), detail::bin_f1_table(bundle));
  if (!bundle.scatter.empty()) figure("hits_vs_salience", detail::scatter_figure(bundle), detail::scatter_table(bundle));
  if (!bundle.split_curves.empty()) figure("split_ratio", detail::split_figure(bundle), detail::split_table(bundle));
  if (!bundle.bin_counts.empty())
    figure("bin_distribution", detail::bin_distribution_figure(bundle), detail::bin_distribution_table(bundle));
  if (bundle.rho) manifest += "stat\tspearman_rho\t" + fmt_g(*bundle.rho, 17) + "\n";
  put("manifest.tsv", manifest);
  return files;
}

}  // namespace tailtype
