#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"

namespace tailtype {

enum class label_view { overall, coarse, fine, ultrafine };

inline constexpr label_view all_views[] = {label_view::overall, label_view::coarse, label_view::fine,
                                           label_view::ultrafine};

inline std::string to_string(label_view v) {
  switch (v) {
    case label_view::overall: return "overall";
    case label_view::coarse: return "coarse";
    case label_view::fine: return "fine";
    case label_view::ultrafine: return "ultrafine";
  }
  return "?";
}

inline std::optional<label_view> parse_label_view(std::string_view s) {
  if (s == "overall") return label_view::overall;
  if (auto g = parse_granularity(s)) return static_cast<label_view>(static_cast<int>(*g) + 1);
  return std::nullopt;
}

inline std::optional<granularity> view_class(label_view v) {
  if (v == label_view::overall) return std::nullopt;
  return static_cast<granularity>(static_cast<int>(v) - 1);
}

// Subset 0 is the full test set, subsets 1..k are frequency bins.
inline std::string subset_name(int subset) {
  return subset == 0 ? std::string("full-test") : "bin-" + std::to_string(subset);
}

inline std::optional<int> parse_subset(std::string_view s) {
  if (s == "full-test") return 0;
  if (s.substr(0, 4) == "bin-") {
    try {
      return std::stoi(std::string(s.substr(4)));
    } catch (...) {
    }
  }
  return std::nullopt;
}

// Precision, recall and F1 on a 0-100 scale. An empty optional marks an undefined metric
// (no example contributed to its mean).
struct metric_block {
  int subset = 0;
  label_view view = label_view::overall;
  std::optional<double> precision;
  std::optional<double> recall;
  double f1 = 0;
  std::optional<double> sigma_precision;
  std::optional<double> sigma_recall;
  std::optional<double> sigma_f1;
  std::size_t n_precision = 0;
  std::size_t n_recall = 0;

  bool operator==(const metric_block&) const = default;
};

inline double f1_score(std::optional<double> p, std::optional<double> r) {
  if (!p || !r || *p + *r <= 0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

namespace detail {
inline std::string opt_cell(const std::optional<double>& v) {
  return v ? fmt_double(*v, 4) : std::string("NA");
}
}  // namespace detail

inline std::string metric_table_header() {
  return "subset\tgranularity\tP\tR\tF1\tsigmaP\tsigmaR\tsigmaF1\tnP\tnR\n";
}

inline std::string metric_table_row(const metric_block& b) {
  return subset_name(b.subset) + '\t' + to_string(b.view) + '\t' + detail::opt_cell(b.precision) + '\t' +
         detail::opt_cell(b.recall) + '\t' + fmt_double(b.f1, 4) + '\t' + detail::opt_cell(b.sigma_precision) +
         '\t' + detail::opt_cell(b.sigma_recall) + '\t' + detail::opt_cell(b.sigma_f1) + '\t' +
         std::to_string(b.n_precision) + '\t' + std::to_string(b.n_recall) + '\n';
}

inline std::string metric_table(const std::vector<metric_block>& blocks) {
  std::string out = metric_table_header();
  for (const auto& b : blocks) out += metric_table_row(b);
  return out;
}

inline std::vector<metric_block> parse_metric_table(const std::string& text) {
  std::vector<metric_block> out;
  auto lines = str::split(text, '\n');
  auto cell = [](const std::string& s, const char* what) -> std::optional<double> {
    if (s == "NA") return std::nullopt;
    return parse_double(s, what);
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto f = str::split(lines[i], '\t');
    if (f.size() != 10) throw input_error("metric table line " + std::to_string(i + 1) + ": expected 10 fields");
    metric_block b;
    auto subset = parse_subset(f[0]);
    auto view = parse_label_view(f[1]);
    if (!subset || !view) throw input_error("metric table line " + std::to_string(i + 1) + ": bad key");
    b.subset = *subset;
    b.view = *view;
    b.precision = cell(f[2], "P");
    b.recall = cell(f[3], "R");
    b.f1 = parse_double(f[4], "F1");
    b.sigma_precision = cell(f[5], "sigmaP");
    b.sigma_recall = cell(f[6], "sigmaR");
    b.sigma_f1 = cell(f[7], "sigmaF1");
    b.n_precision = parse_u64(f[8], "nP");
    b.n_recall = parse_u64(f[9], "nR");
    out.push_back(b);
  }
  return out;
}

}  // namespace tailtype
