#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/rank_stats.hpp"
#include "tailtype/scorer.hpp"

namespace tailtype {

enum class scoring_strategy { mlm_equal_masks, mlm_progressive_single_mask, causal_fill_in_blank };

inline std::string to_string(scoring_strategy s) {
  switch (s) {
    case scoring_strategy::mlm_equal_masks: return "mlm-equal-masks";
    case scoring_strategy::mlm_progressive_single_mask: return "mlm-progressive-single-mask";
    case scoring_strategy::causal_fill_in_blank: return "causal-fill-in-blank";
  }
  return "?";
}

inline std::optional<scoring_strategy> parse_strategy(std::string_view s) {
  if (s == "mlm-equal-masks") return scoring_strategy::mlm_equal_masks;
  if (s == "mlm-progressive-single-mask") return scoring_strategy::mlm_progressive_single_mask;
  if (s == "causal-fill-in-blank") return scoring_strategy::causal_fill_in_blank;
  return std::nullopt;
}

inline scorer_capability required_capability(scoring_strategy s) {
  return s == scoring_strategy::causal_fill_in_blank ? scorer_capability::causal : scorer_capability::mlm;
}

// Byte range [begin, end) of the entity inside a context sentence.
struct char_span {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Span of the first verbatim occurrence of `entity` in `context`.
inline std::optional<char_span> find_entity(std::string_view context, std::string_view entity) {
  if (entity.empty()) return std::nullopt;
  auto pos = context.find(entity);
  if (pos == std::string_view::npos) return std::nullopt;
  return char_span{pos, pos + entity.size()};
}

// Chain-rule recovery of one entity in one context. The product is kept in log space;
// probability() exponentiates once.
struct recovery_estimate {
  std::string entity;
  std::string context_id;
  std::vector<double> token_logprobs;
  double log_prob = 0;

  std::size_t n_tokens() const { return token_logprobs.size(); }
  double probability() const { return std::exp(log_prob); }
  double token_probability(std::size_t i) const { return std::exp(token_logprobs.at(i)); }
};

struct salience_record {
  std::string entity;
  double mean_probability = 0;
  std::vector<recovery_estimate> estimates;

  std::size_t context_count() const { return estimates.size(); }
};

enum class context_averaging { arithmetic, geometric };

inline constexpr std::string_view blank_token = "[blank]";

// Fill-in-the-blank prompt for causal scorers: instruction, the context with the mention
// replaced by [blank], and the response cue.
inline std::string build_causal_prompt(std::string_view context, char_span span) {
  if (span.begin > span.end || span.end > context.size()) throw input_error("entity span out of range");
  if (str::contains(context, blank_token)) throw input_error("context already contains the literal [blank]");
  std::string masked;
  masked.append(context.substr(0, span.begin));
  masked.append(blank_token);
  masked.append(context.substr(span.end));
  std::string out;
  out += "Instruction: Fill in the appropriate entity that completes the sentence below.\n";
  out += "Context: " + masked + "\n";
  out += "Response: [blank] can be replaced with:";
  return out;
}

enum class mask_mode { equal, single };

struct token_range {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Replaces the entity tokens at `range` with n mask tokens (equal) or one mask token (single).
inline std::vector<token_id> mask_entity(std::span<const token_id> context_tokens, token_range range, std::size_t n,
                                         mask_mode mode, token_id mask_id) {
  if (n == 0) throw input_error("mask_entity: entity token count must be >= 1");
  if (range.begin > range.end || range.end > context_tokens.size()) throw input_error("mask_entity: range out of bounds");
  std::vector<token_id> out(context_tokens.begin(), context_tokens.begin() + static_cast<std::ptrdiff_t>(range.begin));
  out.insert(out.end(), mode == mask_mode::equal ? n : 1, mask_id);
  out.insert(out.end(), context_tokens.begin() + static_cast<std::ptrdiff_t>(range.end), context_tokens.end());
  return out;
}

// Inverse of mask_entity: writes the entity tokens back over the masks starting at `at`.
inline std::vector<token_id> fill_masks(std::span<const token_id> masked, std::size_t at, std::size_t mask_count,
                                        std::span<const token_id> entity_tokens) {
  if (at + mask_count > masked.size()) throw input_error("fill_masks: range out of bounds");
  std::vector<token_id> out(masked.begin(), masked.begin() + static_cast<std::ptrdiff_t>(at));
  out.insert(out.end(), entity_tokens.begin(), entity_tokens.end());
  out.insert(out.end(), masked.begin() + static_cast<std::ptrdiff_t>(at + mask_count), masked.end());
  return out;
}

namespace detail {

inline void check_logprob(double lp) {
  if (!std::isfinite(lp) || lp > 0) throw protocol_error("scorer returned invalid logprob " + fmt_g(lp));
}

}  // namespace detail

// Scores the entity at `span` token by token, left to right: token i is conditioned on the
// context plus the already revealed tokens 1..i-1.
//   mlm-equal-masks              n masks; one mask is replaced by its true token per step
//   mlm-progressive-single-mask  one mask after the revealed prefix, re-expanded each step
//   causal-fill-in-blank         fill-in-the-blank prompt, then conditional continuation
inline recovery_estimate recover_probability(std::string_view context, char_span span, scorer& model,
                                             scoring_strategy strategy, std::string context_id = "0") {
  if (span.begin >= span.end || span.end > context.size()) throw input_error("entity span out of range");
  if (!model.supports(required_capability(strategy)))
    throw input_error("strategy " + to_string(strategy) + " needs a " + to_string(required_capability(strategy)) +
                      " scorer, '" + model.model_id() + "' does not provide it");

  recovery_estimate est;
  est.entity = std::string(context.substr(span.begin, span.end - span.begin));
  est.context_id = std::move(context_id);

  try {
    if (strategy == scoring_strategy::causal_fill_in_blank) {
      auto prompt = model.tokenize(build_causal_prompt(context, span));
      auto entity = model.tokenize(" " + est.entity).ids;
      if (entity.empty()) throw input_error("entity '" + est.entity + "' tokenizes to zero tokens");
      std::vector<token_id> prefix = prompt.ids;
      for (auto t : entity) {
        double lp = model.score_causal(prefix, t);
        detail::check_logprob(lp);
        est.token_logprobs.push_back(lp);
        prefix.push_back(t);
      }
    } else {
      auto left = model.tokenize(str::trim(context.substr(0, span.begin))).ids;
      auto entity = model.tokenize(est.entity).ids;
      auto right = model.tokenize(str::trim(context.substr(span.end))).ids;
      if (entity.empty()) throw input_error("entity '" + est.entity + "' tokenizes to zero tokens");
      const auto n = entity.size();
      const auto p = left.size();
      auto mask = model.mask_token_id();

      std::vector<token_id> seq = left;
      if (strategy == scoring_strategy::mlm_equal_masks) {
        if (!mask && n > 1) throw input_error("mlm-equal-masks needs a scorer that reports its mask token id");
        seq.insert(seq.end(), n, mask.value_or(entity[0]));
        seq.insert(seq.end(), right.begin(), right.end());
        for (std::size_t i = 0; i < n; ++i) {
          double lp = model.score_mlm(seq, p + i, entity[i]);
          detail::check_logprob(lp);
          est.token_logprobs.push_back(lp);
          seq[p + i] = entity[i];
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<token_id> step(left);
          step.insert(step.end(), entity.begin(), entity.begin() + static_cast<std::ptrdiff_t>(i));
          step.push_back(mask.value_or(entity[i]));
          step.insert(step.end(), right.begin(), right.end());
          double lp = model.score_mlm(step, p + i, entity[i]);
          detail::check_logprob(lp);
          est.token_logprobs.push_back(lp);
        }
      }
    }
  } catch (const protocol_error& e) {
    throw protocol_error("context " + est.context_id + ": " + e.what());
  }

  for (double lp : est.token_logprobs) est.log_prob += lp;
  return est;
}

// Mean recovery probability over an entity's contexts (arithmetic over probabilities by
// default; geometric = exp of the mean log probability).
inline salience_record average_salience(const std::string& entity, const std::vector<std::string>& contexts,
                                        scorer& model, scoring_strategy strategy,
                                        context_averaging averaging = context_averaging::arithmetic) {
  if (contexts.empty()) throw input_error("no contexts for entity '" + entity + "'");
  salience_record out;
  out.entity = entity;
  double sum = 0;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    auto span = find_entity(contexts[i], entity);
    if (!span) throw input_error("context " + std::to_string(i) + " does not contain '" + entity + "'");
    auto est = recover_probability(contexts[i], *span, model, strategy, std::to_string(i));
    sum += averaging == context_averaging::arithmetic ? est.probability() : est.log_prob;
    out.estimates.push_back(std::move(est));
  }
  double mean = sum / static_cast<double>(contexts.size());
  out.mean_probability = averaging == context_averaging::arithmetic ? mean : std::exp(mean);
  return out;
}

// Scores many entities with a pool of scorers, one worker per scorer. Output order follows
// the input order regardless of scheduling.
inline std::vector<salience_record> score_salience(const std::vector<context_set>& sets,
                                                   const std::vector<scorer*>& pool, scoring_strategy strategy,
                                                   context_averaging averaging = context_averaging::arithmetic) {
  if (pool.empty()) throw input_error("scorer pool is empty");
  std::vector<salience_record> out(sets.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto work = [&](scorer* model) {
    for (;;) {
      auto i = next.fetch_add(1);
      if (i >= sets.size()) return;
      try {
        out[i] = average_salience(sets[i].entity, sets[i].sentences, *model, strategy, averaging);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(sets.size());
        return;
      }
    }
  };
  if (pool.size() == 1) {
    work(pool[0]);
  } else {
    std::vector<std::thread> threads;
    for (auto* m : pool) threads.emplace_back(work, m);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// Spearman over (hits, mean probability) pairs joined by entity.
inline std::optional<double> correlate_salience_with_hits(const std::vector<salience_record>& salience,
                                                          const std::vector<frequency_record>& freq) {
  std::map<std::string, double> prob;
  for (const auto& s : salience)
    if (!prob.emplace(s.entity, s.mean_probability).second) throw input_error("duplicate salience entity '" + s.entity + "'");
  std::map<std::string, std::uint64_t> hits;
  for (const auto& f : freq)
    if (!hits.emplace(f.entity, f.hits).second) throw input_error("duplicate frequency entity '" + f.entity + "'");
  if (prob.size() != hits.size()) throw input_error("salience and frequency records cover different entity sets");
  std::vector<double> x, y;
  for (const auto& [e, p] : prob) {
    auto it = hits.find(e);
    if (it == hits.end()) throw input_error("entity '" + e + "' has salience but no frequency record");
    x.push_back(static_cast<double>(it->second));
    y.push_back(p);
  }
  return spearman(x, y);
}

// `entity<TAB>context_id<TAB>n_tokens<TAB>log_prob` per estimate.
inline std::string serialize_salience_estimates(const std::vector<salience_record>& records) {
  std::string out;
  for (const auto& r : records)
    for (const auto& e : r.estimates)
      out += r.entity + '\t' + e.context_id + '\t' + std::to_string(e.n_tokens()) + '\t' + fmt_g(e.log_prob) + '\n';
  return out;
}

// `entity<TAB>mean_probability<TAB>n_contexts` per entity.
inline std::string serialize_salience_means(const std::vector<salience_record>& records) {
  std::string out;
  for (const auto& r : records)
    out += r.entity + '\t' + fmt_g(r.mean_probability) + '\t' + std::to_string(r.context_count()) + '\n';
  return out;
}

inline std::vector<salience_record> load_salience_means(const std::string& path) {
  std::vector<salience_record> out;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto f = str::split(lines[i], '\t');
    auto where = path + ":" + std::to_string(i + 1);
    if (f.size() != 3) throw input_error(where + ": expected entity<TAB>mean_probability<TAB>n_contexts");
    salience_record r;
    r.entity = f[0];
    r.mean_probability = parse_double(f[1], where);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tailtype
