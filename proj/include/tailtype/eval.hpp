#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tailtype/baselines.hpp"
#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/metrics.hpp"
#include "tailtype/rank_stats.hpp"
#include "tailtype/scorer.hpp"

namespace tailtype {

struct example_score {
  std::optional<double> p;  // undefined when the prediction set is empty
  double r = 0;
};

// Per-example precision and recall on a 0-1 scale.
inline example_score example_prf(const label_set& pred, const label_set& gold) {
  if (gold.empty()) throw input_error("example_prf: empty gold set");
  std::size_t hit = 0;
  for (const auto& l : pred)
    if (gold.count(l)) ++hit;
  example_score out;
  if (!pred.empty()) out.p = static_cast<double>(hit) / static_cast<double>(pred.size());
  out.r = static_cast<double>(hit) / static_cast<double>(gold.size());
  return out;
}

// How examples with an empty prediction set enter the precision mean.
enum class empty_prediction_policy { exclude, count_as_zero };

// One example's contribution to a block. `p` absent: not in the P pool. `r` absent: not in the R pool.
struct prf_sample {
  std::optional<double> p;
  std::optional<double> r;
};

inline metric_block aggregate_prf(const std::vector<prf_sample>& samples, int subset = 0,
                                  label_view view = label_view::overall) {
  metric_block b;
  b.subset = subset;
  b.view = view;
  double ps = 0, rs = 0;
  for (const auto& s : samples) {
    if (s.p) {
      ps += *s.p;
      ++b.n_precision;
    }
    if (s.r) {
      rs += *s.r;
      ++b.n_recall;
    }
  }
  if (b.n_precision) b.precision = 100.0 * ps / static_cast<double>(b.n_precision);
  if (b.n_recall) b.recall = 100.0 * rs / static_cast<double>(b.n_recall);
  b.f1 = f1_score(b.precision, b.recall);
  return b;
}

// Restricts labels to one granularity class; the overall view is the identity.
inline label_set granularity_view(const label_set& labels, const type_vocabulary& vocab, label_view view) {
  auto cls = view_class(view);
  if (!cls) return labels;
  label_set out;
  for (const auto& l : labels)
    if (vocab.class_of(l) == cls) out.insert(l);
  return out;
}

// Sample for one example under one view. Overall: every example is in the R pool and in the P
// pool when its prediction is non-empty (or always, under count_as_zero). Class views: the R
// pool needs non-empty filtered gold and the P pool needs non-empty filtered predictions.
inline prf_sample view_sample(const label_set& pred, const label_set& gold, const type_vocabulary& vocab,
                              label_view view, empty_prediction_policy policy = empty_prediction_policy::exclude) {
  auto fp = granularity_view(pred, vocab, view);
  auto fg = granularity_view(gold, vocab, view);
  std::size_t hit = 0;
  for (const auto& l : fp)
    if (fg.count(l)) ++hit;
  prf_sample s;
  bool class_view = view != label_view::overall;
  if (!fg.empty()) s.r = static_cast<double>(hit) / static_cast<double>(fg.size());
  else if (!class_view) throw input_error("example has empty gold set");
  if (!fp.empty())
    s.p = static_cast<double>(hit) / static_cast<double>(fp.size());
  else if (policy == empty_prediction_policy::count_as_zero && (!class_view || !fg.empty()))
    s.p = 0.0;
  return s;
}

struct stratified_result {
  std::vector<metric_block> blocks;  // subset-major: full-test, bin-1..bin-k; views in all_views order
  std::vector<std::size_t> subset_sizes;
  std::size_t missing_predictions = 0;
};

// Scores one run. Examples without a prediction record count as empty predictions.
inline stratified_result stratified_eval(const std::vector<typing_example>& dataset,
                                         const std::map<std::string, label_set>& predictions,
                                         const bin_assignment& bins, const type_vocabulary& vocab,
                                         empty_prediction_policy policy = empty_prediction_policy::exclude) {
  if (dataset.empty()) throw input_error("stratified_eval: empty dataset");
  const auto k = static_cast<std::size_t>(bins.k);
  stratified_result out;
  out.subset_sizes.assign(k + 1, 0);
  // samples[subset][view]
  std::vector<std::vector<std::vector<prf_sample>>> samples(k + 1, std::vector<std::vector<prf_sample>>(4));
  static const label_set no_labels;
  for (const auto& ex : dataset) {
    auto bin = bins.bin_of(ex.entity());
    if (!bin) throw input_error("bin assignment has no entry for '" + ex.entity() + "'");
    if (*bin < 1 || static_cast<std::size_t>(*bin) > k)
      throw invariant_error("bin " + std::to_string(*bin) + " out of range for '" + ex.entity() + "'");
    auto it = predictions.find(ex.example_id);
    if (it == predictions.end()) ++out.missing_predictions;
    const auto& pred = it == predictions.end() ? no_labels : it->second;
    ++out.subset_sizes[0];
    ++out.subset_sizes[static_cast<std::size_t>(*bin)];
    for (std::size_t v = 0; v < 4; ++v) {
      auto s = view_sample(pred, ex.gold_types, vocab, all_views[v], policy);
      samples[0][v].push_back(s);
      samples[static_cast<std::size_t>(*bin)][v].push_back(s);
    }
  }
  for (std::size_t subset = 0; subset <= k; ++subset)
    for (std::size_t v = 0; v < 4; ++v)
      out.blocks.push_back(aggregate_prf(samples[subset][v], static_cast<int>(subset), all_views[v]));
  return out;
}

// Predictions grouped by run id (in run-id order), then by example id.
inline std::map<std::string, std::map<std::string, label_set>> group_by_run(const std::vector<prediction_record>& records) {
  std::map<std::string, std::map<std::string, label_set>> out;
  for (const auto& r : records) {
    auto& run = out[r.run_id];
    if (run.count(r.example_id))
      throw input_error("duplicate prediction for '" + r.example_id + "' in run '" + r.run_id + "'");
    run.emplace(r.example_id, r.predicted_types);
  }
  return out;
}

struct multi_run_result {
  std::vector<std::string> run_ids;
  std::vector<stratified_result> runs;
  std::vector<metric_block> aggregate;  // mean and sample sigma across runs
};

inline multi_run_result evaluate_runs(const std::vector<typing_example>& dataset,
                                      const std::vector<prediction_record>& records, const bin_assignment& bins,
                                      const type_vocabulary& vocab,
                                      empty_prediction_policy policy = empty_prediction_policy::exclude) {
  multi_run_result out;
  auto grouped = group_by_run(records);
  if (grouped.empty()) grouped.emplace("0", std::map<std::string, label_set>{});
  std::vector<std::vector<metric_block>> blocks;
  for (const auto& [run_id, preds] : grouped) {
    out.run_ids.push_back(run_id);
    out.runs.push_back(stratified_eval(dataset, preds, bins, vocab, policy));
    blocks.push_back(out.runs.back().blocks);
  }
  out.aggregate = aggregate_runs(blocks);
  return out;
}

// Self-check on emitted blocks; a violation means a bug, not bad input.
inline void check_metric_invariants(const stratified_result& r) {
  auto bad = [](const metric_block& b, const std::string& what) {
    throw invariant_error(subset_name(b.subset) + "/" + to_string(b.view) + ": " + what);
  };
  for (const auto& b : r.blocks) {
    for (const auto& v : {b.precision, b.recall})
      if (v && (*v < 0 || *v > 100)) bad(b, "metric outside [0,100]");
    if (b.f1 < 0 || b.f1 > 100) bad(b, "F1 outside [0,100]");
    if (b.precision && b.recall) {
      const double eps = 1e-9;
      if (b.f1 > std::max(*b.precision, *b.recall) + eps || (b.f1 + eps < std::min(*b.precision, *b.recall)))
        bad(b, "F1 not between P and R");
    }
  }
  std::size_t sum = 0;
  for (std::size_t i = 1; i < r.subset_sizes.size(); ++i) sum += r.subset_sizes[i];
  if (!r.subset_sizes.empty() && sum != r.subset_sizes[0]) throw invariant_error("bin sizes do not sum to the full test set");
}

struct tuning_cell {
  std::size_t template_index = 0;
  std::size_t n = 0;
  metric_block overall;
};

struct tuning_result {
  std::vector<tuning_cell> grid;  // template-major, n ascending
  tuning_cell best;
  std::vector<hearst_template> templates;

  hearst_template best_template() const {
    auto t = templates.at(best.template_index);
    t.n = best.n;
    return t;
  }
};

// Exhaustive grid over templates x n on a dev split, scored by overall F1. Ties go to the
// smaller n, then to the earlier template.
inline tuning_result tune_hearst(const std::vector<typing_example>& dev, const std::vector<hearst_template>& templates,
                                 const std::vector<std::size_t>& n_values, scorer& mlm, const type_vocabulary& vocab) {
  if (templates.empty() || n_values.empty()) throw input_error("tune_hearst: empty grid");
  if (dev.empty()) throw input_error("tune_hearst: empty dev set");
  auto ns = n_values;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (ns.front() < 1) throw input_error("tune_hearst: n must be >= 1");

  tuning_result out;
  out.templates = templates;
  const auto pool = hearst_pool_size(ns.back());
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    std::vector<std::vector<candidate>> ranked;
    ranked.reserve(dev.size());
    for (const auto& ex : dev) ranked.push_back(hearst_candidates(ex, templates[ti], mlm, pool));
    for (auto n : ns) {
      std::vector<prf_sample> samples;
      for (std::size_t i = 0; i < dev.size(); ++i) {
        auto pred = select_hearst_labels(ranked[i], vocab, n).labels;
        samples.push_back(view_sample(pred, dev[i].gold_types, vocab, label_view::overall));
      }
      out.grid.push_back({ti, n, aggregate_prf(samples)});
    }
  }
  out.best = out.grid.front();
  for (const auto& cell : out.grid) {
    const auto& b = out.best;
    if (cell.overall.f1 > b.overall.f1 ||
        (cell.overall.f1 == b.overall.f1 &&
         (cell.n < b.n || (cell.n == b.n && cell.template_index < b.template_index))))
      out.best = cell;
  }
  return out;
}

inline std::string tuning_table(const tuning_result& r) {
  std::string out = "template\tplacement\tn\tP\tR\tF1\n";
  for (const auto& c : r.grid) {
    const auto& t = r.templates[c.template_index];
    out += t.name + '\t' + to_string(t.placement) + '\t' + std::to_string(c.n) + '\t' +
           detail::opt_cell(c.overall.precision) + '\t' + detail::opt_cell(c.overall.recall) + '\t' +
           fmt_double(c.overall.f1, 4) + '\n';
  }
  return out;
}

}  // namespace tailtype
