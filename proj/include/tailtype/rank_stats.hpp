#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/metrics.hpp"

namespace tailtype {

// Bin index per entity (1 = rarest ... k = most frequent) plus the k-1 cut points.
struct bin_assignment {
  int k = 4;
  std::map<std::string, int> bins;
  std::vector<double> thresholds;

  std::optional<int> bin_of(const std::string& entity) const {
    auto it = bins.find(entity);
    if (it == bins.end()) return std::nullopt;
    return it->second;
  }
};

// Cut points sit at the j/k empirical quantiles (linear interpolation) of the unique-entity
// hit distribution. An entity lands in bin 1 + #{cuts strictly below its hits}, so a tie group
// sitting exactly on a cut goes to the lower bin and equal hits always share a bin. The
// comparison is done against the lower order statistic of each cut, which makes the assignment
// depend on ranks only.
inline bin_assignment assign_bins(const std::vector<frequency_record>& records, int k = 4) {
  if (k < 2) throw input_error("bin count must be at least 2");
  std::map<std::string, std::uint64_t> hits;
  for (const auto& r : records)
    if (!hits.emplace(r.entity, r.hits).second) throw input_error("duplicate entity in frequency records: '" + r.entity + "'");
  const auto n = hits.size();
  if (n < static_cast<std::size_t>(k))
    throw input_error("need at least " + std::to_string(k) + " unique entities to bin, got " + std::to_string(n));

  std::vector<std::uint64_t> sorted;
  sorted.reserve(n);
  for (const auto& [e, h] : hits) sorted.push_back(h);
  std::sort(sorted.begin(), sorted.end());

  bin_assignment out;
  out.k = k;
  std::vector<std::uint64_t> lower;
  for (int j = 1; j < k; ++j) {
    auto num = static_cast<std::uint64_t>(j) * (n - 1);
    auto lo = num / static_cast<std::uint64_t>(k);
    auto frac = static_cast<double>(num % static_cast<std::uint64_t>(k)) / k;
    auto a = static_cast<double>(sorted[lo]);
    auto b = static_cast<double>(sorted[std::min<std::size_t>(lo + 1, n - 1)]);
    out.thresholds.push_back(a + frac * (b - a));
    lower.push_back(sorted[lo]);
  }
  for (const auto& [e, h] : hits) {
    int bin = 1;
    for (auto cut : lower)
      if (h > cut) ++bin;
    out.bins.emplace(e, bin);
  }
  return out;
}

// Examples inherit the bin of their normalized mention. Throws when an entity is unbinned.
inline std::vector<std::size_t> example_counts_per_bin(const bin_assignment& bins,
                                                      const std::vector<typing_example>& examples) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins.k), 0);
  for (const auto& ex : examples) {
    auto b = bins.bin_of(ex.entity());
    if (!b) throw input_error("bin assignment has no entry for '" + ex.entity() + "'");
    ++counts[static_cast<std::size_t>(*b - 1)];
  }
  return counts;
}

inline std::string serialize_bins(const bin_assignment& bins) {
  std::string out;
  for (const auto& [e, b] : bins.bins) out += e + '\t' + std::to_string(b) + '\n';
  return out;
}

// Sidecar record: `k<TAB>cut1<TAB>cut2...`.
inline std::string serialize_bin_thresholds(const bin_assignment& bins) {
  std::string out = "k\t" + std::to_string(bins.k);
  for (double t : bins.thresholds) out += '\t' + fmt_g(t);
  return out + '\n';
}

inline bin_assignment load_bins(const std::string& path) {
  bin_assignment out;
  int max_bin = 0;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto f = str::split(lines[i], '\t');
    auto where = path + ":" + std::to_string(i + 1);
    if (f.size() != 2) throw input_error(where + ": expected entity<TAB>bin");
    auto b = static_cast<int>(parse_u64(f[1], where));
    if (b < 1) throw input_error(where + ": bin must be >= 1");
    if (!out.bins.emplace(str::normalize_ws(f[0]), b).second) throw input_error(where + ": duplicate entity");
    max_bin = std::max(max_bin, b);
  }
  out.k = std::max(max_bin, 1);
  return out;
}

// Average (fractional) ranks, 1-based. Tie groups get the mean of the positions they span,
// computed as (first + last) / 2 so the value is exact.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const auto n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    double r = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

// Spearman's rho as the Pearson correlation of average-rank vectors. Returns nullopt when
// either rank vector has zero variance.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw input_error("spearman: length mismatch");
  if (x.size() < 2) throw input_error("spearman: need at least 2 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isnan(x[i]) || std::isnan(y[i])) throw input_error("spearman: missing value at index " + std::to_string(i));
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  const double center = (static_cast<double>(x.size()) + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double a = rx[i] - center;
    double b = ry[i] - center;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  double rho = sxy / std::sqrt(sxx * syy);
  return std::clamp(rho, -1.0, 1.0);
}

inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return spearman(std::span<const double>(x), std::span<const double>(y));
}

// Tokens per whitespace word.
inline double split_ratio(std::string_view entity, std::size_t token_count) {
  auto words = str::split_ws(entity).size();
  if (words == 0) throw input_error("split_ratio: entity has no words");
  if (token_count < 1) throw input_error("split_ratio: token count must be >= 1");
  if (token_count < words)
    throw input_error("split_ratio: " + std::to_string(token_count) + " tokens for " + std::to_string(words) +
                      " words in '" + std::string(entity) + "'");
  return static_cast<double>(token_count) / static_cast<double>(words);
}

struct split_ratio_sample {
  double ratio = 1;
  double probability = 0;
};

struct split_ratio_stat {
  double bucket = 1;  // ratio rounded to the nearest multiple of the bucket width
  double mean_probability = 0;
  std::size_t count = 0;
};

inline std::vector<split_ratio_stat> split_ratio_curve(const std::vector<split_ratio_sample>& samples,
                                                       double bucket_width = 0.5) {
  if (!(bucket_width > 0)) throw input_error("bucket width must be positive");
  std::map<long long, std::pair<double, std::size_t>> acc;
  for (const auto& s : samples) {
    auto key = std::llround(s.ratio / bucket_width);
    auto& [sum, n] = acc[key];
    sum += s.probability;
    ++n;
  }
  std::vector<split_ratio_stat> out;
  for (const auto& [key, v] : acc)
    out.push_back({static_cast<double>(key) * bucket_width, v.first / static_cast<double>(v.second), v.second});
  return out;
}

struct mean_sd {
  double mean = 0;
  double sd = 0;
};

// Two-pass mean and sample standard deviation; sd is 0 for a single value.
inline mean_sd mean_and_sample_sd(std::span<const double> values) {
  if (values.empty()) throw input_error("mean of empty set");
  double sum = 0;
  for (double v : values) sum += v;
  double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

// Per-metric mean and sample sigma across runs. Every run must carry the same
// (subset, granularity) keys in the same order. Precision/recall means skip runs where the
// metric is undefined; counts come from the first run.
inline std::vector<metric_block> aggregate_runs(const std::vector<std::vector<metric_block>>& runs) {
  if (runs.empty()) throw input_error("aggregate_runs: no runs");
  const auto& first = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != first.size()) throw input_error("aggregate_runs: run " + std::to_string(r) + " has a different block count");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (runs[r][i].subset != first[i].subset || runs[r][i].view != first[i].view)
        throw input_error("aggregate_runs: key mismatch in run " + std::to_string(r) + " at " +
                          subset_name(first[i].subset) + "/" + to_string(first[i].view));
  }
  std::vector<metric_block> out;
  for (std::size_t i = 0; i < first.size(); ++i) {
    std::vector<double> ps, rs, fs;
    for (const auto& run : runs) {
      if (run[i].precision) ps.push_back(*run[i].precision);
      if (run[i].recall) rs.push_back(*run[i].recall);
      fs.push_back(run[i].f1);
    }
    metric_block b = first[i];
    if (!ps.empty()) {
      auto m = mean_and_sample_sd(ps);
      b.precision = m.mean;
      b.sigma_precision = m.sd;
    }
    if (!rs.empty()) {
      auto m = mean_and_sample_sd(rs);
      b.recall = m.mean;
      b.sigma_recall = m.sd;
    }
    auto m = mean_and_sample_sd(fs);
    b.f1 = m.mean;
    b.sigma_f1 = m.sd;
    out.push_back(b);
  }
  return out;
}

}  // namespace tailtype
