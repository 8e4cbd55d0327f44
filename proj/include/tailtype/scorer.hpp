#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tailtype/common.hpp"

namespace tailtype {

using token_id = std::int64_t;

enum class scorer_capability { mlm, causal };

inline std::string to_string(scorer_capability c) { return c == scorer_capability::mlm ? "mlm" : "causal"; }

inline std::optional<scorer_capability> parse_capability(std::string_view s) {
  if (s == "mlm") return scorer_capability::mlm;
  if (s == "causal") return scorer_capability::causal;
  return std::nullopt;
}

struct tokenization {
  std::vector<token_id> ids;
  std::vector<std::string> strings;
};

struct candidate {
  token_id id = 0;
  std::string token;
  double logprob = 0;
};

// A language model seen through tokenization and conditional token log-probabilities.
// Implementations need not be thread-safe; callers use one scorer per worker.
class scorer {
 public:
  virtual ~scorer() = default;

  virtual std::set<scorer_capability> capabilities() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::string model_id() const = 0;
  virtual std::optional<token_id> mask_token_id() const { return std::nullopt; }

  virtual tokenization tokenize(std::string_view text) = 0;

  // log P(target at mask_position | ids with that position masked).
  virtual double score_mlm(std::span<const token_id> ids, std::size_t mask_position, token_id target) = 0;

  // log P(target | prefix).
  virtual double score_causal(std::span<const token_id> prefix, token_id target) = 0;

  // Highest-probability fills for the masked position, best first.
  virtual bool has_distribution() const { return false; }
  virtual std::vector<candidate> top_candidates(std::span<const token_id> /*ids*/, std::size_t /*mask_position*/,
                                                std::size_t /*m*/) {
    throw input_error("scorer '" + model_id() + "' does not expose a mask-fill distribution");
  }

  virtual bool can_generate_contexts() const { return false; }
  virtual std::vector<std::string> generate_contexts(const std::string& /*entity*/, std::size_t /*count*/) {
    throw input_error("scorer '" + model_id() + "' cannot generate contexts");
  }

  virtual bool can_generate() const { return false; }
  virtual std::string generate(const std::string& /*system*/, const std::string& /*prompt*/) {
    throw input_error("scorer '" + model_id() + "' cannot generate text");
  }

  bool supports(scorer_capability c) const { return capabilities().count(c) != 0; }
};

// Whitespace tokenizer with an interned, growable vocabulary. Id 0 is the mask token.
class whitespace_vocab {
 public:
  static constexpr token_id mask_id = 0;
  static constexpr std::string_view mask_token = "[MASK]";

  whitespace_vocab() { intern(std::string(mask_token)); }

  token_id intern(const std::string& tok) {
    std::lock_guard lock(mu_);
    auto [it, fresh] = ids_.emplace(tok, static_cast<token_id>(strings_.size()));
    if (fresh) strings_.push_back(tok);
    return it->second;
  }

  std::optional<token_id> find(const std::string& tok) const {
    std::lock_guard lock(mu_);
    auto it = ids_.find(tok);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  std::string string_of(token_id id) const {
    std::lock_guard lock(mu_);
    if (id < 0 || static_cast<std::size_t>(id) >= strings_.size()) return "<id:" + std::to_string(id) + ">";
    return strings_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return strings_.size();
  }

  tokenization tokenize(std::string_view text) {
    tokenization out;
    for (auto& w : str::split_ws(text)) {
      out.ids.push_back(intern(w));
      out.strings.push_back(std::move(w));
    }
    return out;
  }

  std::string detokenize(std::span<const token_id> ids) const {
    std::vector<std::string> parts;
    for (auto id : ids) parts.push_back(string_of(id));
    return str::join(parts, " ");
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, token_id> ids_;
  std::vector<std::string> strings_;
};

// Every target has probability 1/V regardless of context.
class uniform_scorer : public scorer {
 public:
  explicit uniform_scorer(std::size_t vocab_size) : v_(vocab_size) {
    if (vocab_size < 1) throw input_error("uniform scorer needs a positive vocabulary size");
  }

  std::set<scorer_capability> capabilities() const override { return {scorer_capability::mlm, scorer_capability::causal}; }
  std::size_t vocab_size() const override { return v_; }
  std::string model_id() const override { return "uniform:" + std::to_string(v_); }
  std::optional<token_id> mask_token_id() const override { return whitespace_vocab::mask_id; }
  tokenization tokenize(std::string_view text) override { return vocab_.tokenize(text); }
  std::string detokenize(std::span<const token_id> ids) const { return vocab_.detokenize(ids); }

  double score_mlm(std::span<const token_id>, std::size_t, token_id) override { return logp(); }
  double score_causal(std::span<const token_id>, token_id) override { return logp(); }

  bool has_distribution() const override { return true; }
  std::vector<candidate> top_candidates(std::span<const token_id>, std::size_t, std::size_t m) override {
    std::vector<candidate> out;
    for (std::size_t id = 1; id < vocab_.size() && out.size() < m; ++id)
      out.push_back({static_cast<token_id>(id), vocab_.string_of(static_cast<token_id>(id)), logp()});
    return out;
  }

 private:
  double logp() const { return -std::log(static_cast<double>(v_)); }

  std::size_t v_;
  whitespace_vocab vocab_;
};

// Explicit probabilities keyed by (entity prefix, token). A lookup for a target uses the entry
// whose prefix is the longest suffix of the tokens visible before the target; entries with an
// empty prefix match everywhere. Unmatched targets fall back to `default_probability`.
class table_scorer : public scorer {
 public:
  struct entry {
    std::vector<std::string> prefix;
    std::string token;
    double probability = 0;
  };

  explicit table_scorer(std::vector<entry> entries, std::optional<double> default_probability = std::nullopt,
                        std::size_t vocab_size = 100)
      : entries_(std::move(entries)), default_(default_probability), v_(vocab_size) {
    for (const auto& e : entries_) {
      if (!(e.probability > 0 && e.probability <= 1))
        throw input_error("table scorer probability out of (0, 1] for token '" + e.token + "'");
      vocab_.intern(e.token);
      for (const auto& p : e.prefix) vocab_.intern(p);
    }
    if (default_ && !(*default_ > 0 && *default_ <= 1)) throw input_error("table scorer default probability out of (0, 1]");
  }

  std::set<scorer_capability> capabilities() const override { return {scorer_capability::mlm, scorer_capability::causal}; }
  std::size_t vocab_size() const override { return v_; }
  std::string model_id() const override { return "table"; }
  std::optional<token_id> mask_token_id() const override { return whitespace_vocab::mask_id; }
  tokenization tokenize(std::string_view text) override { return vocab_.tokenize(text); }

  double score_mlm(std::span<const token_id> ids, std::size_t mask_position, token_id target) override {
    if (mask_position >= ids.size()) throw input_error("mask position out of range");
    return std::log(lookup(visible(ids.first(mask_position)), vocab_.string_of(target)));
  }

  double score_causal(std::span<const token_id> prefix, token_id target) override {
    return std::log(lookup(visible(prefix), vocab_.string_of(target)));
  }

  bool has_distribution() const override { return true; }
  std::vector<candidate> top_candidates(std::span<const token_id> ids, std::size_t mask_position, std::size_t m) override {
    auto before = visible(ids.first(std::min(mask_position, ids.size())));
    std::map<std::string, double> best;
    for (const auto& e : entries_) {
      if (!is_suffix(e.prefix, before)) continue;
      best.emplace(e.token, lookup(before, e.token));
    }
    std::vector<candidate> out;
    for (const auto& [tok, p] : best) out.push_back({*vocab_.find(tok), tok, std::log(p)});
    std::stable_sort(out.begin(), out.end(), [](const candidate& a, const candidate& b) { return a.logprob > b.logprob; });
    if (out.size() > m) out.resize(m);
    return out;
  }

 private:
  std::vector<std::string> visible(std::span<const token_id> ids) const {
    std::vector<std::string> out;
    for (auto id : ids) out.push_back(vocab_.string_of(id));
    return out;
  }

  static bool is_suffix(const std::vector<std::string>& prefix, const std::vector<std::string>& seen) {
    if (prefix.size() > seen.size()) return false;
    return std::equal(prefix.rbegin(), prefix.rend(), seen.rbegin());
  }

  double lookup(const std::vector<std::string>& seen, const std::string& token) const {
    const entry* best = nullptr;
    for (const auto& e : entries_)
      if (e.token == token && is_suffix(e.prefix, seen) && (!best || e.prefix.size() > best->prefix.size())) best = &e;
    if (best) return best->probability;
    if (default_) return *default_;
    throw input_error("table scorer has no entry for token '" + token + "'");
  }

  std::vector<entry> entries_;
  std::optional<double> default_;
  std::size_t v_;
  whitespace_vocab vocab_;
};

// Add-one smoothed bigram model estimated from a small corpus (one sentence per line).
// P(t | prev) = (c(prev, t) + 1) / (c(prev) + V), with V = distinct corpus tokens + <unk>.
// The first token of a sequence is conditioned on <s>.
class bigram_scorer : public scorer {
 public:
  static constexpr std::string_view unk = "<unk>";
  static constexpr std::string_view bos = "<s>";

  explicit bigram_scorer(const std::vector<std::string>& corpus_lines) {
    std::set<std::string> distinct;
    std::vector<std::vector<std::string>> sentences;
    for (const auto& line : corpus_lines) {
      auto toks = str::split_ws(line);
      if (toks.empty()) continue;
      distinct.insert(toks.begin(), toks.end());
      sentences.push_back(std::move(toks));
    }
    for (const auto& t : distinct) vocab_.intern(t);
    unk_id_ = vocab_.intern(std::string(unk));
    bos_id_ = vocab_.intern(std::string(bos));
    v_ = distinct.size() + 1;
    for (const auto& s : sentences) {
      token_id prev = bos_id_;
      for (const auto& t : s) {
        auto id = *vocab_.find(t);
        ++pair_counts_[{prev, id}];
        ++left_counts_[prev];
        prev = id;
      }
    }
  }

  std::set<scorer_capability> capabilities() const override { return {scorer_capability::mlm, scorer_capability::causal}; }
  std::size_t vocab_size() const override { return v_; }
  std::string model_id() const override { return "bigram:" + std::to_string(v_); }
  std::optional<token_id> mask_token_id() const override { return whitespace_vocab::mask_id; }

  tokenization tokenize(std::string_view text) override {
    tokenization out;
    for (auto& w : str::split_ws(text)) {
      auto id = vocab_.find(w);
      bool known = id && *id != whitespace_vocab::mask_id && *id != bos_id_;
      if (w == whitespace_vocab::mask_token) {
        out.ids.push_back(whitespace_vocab::mask_id);
        out.strings.push_back(std::move(w));
      } else {
        out.ids.push_back(known ? *id : unk_id_);
        out.strings.push_back(known ? std::move(w) : std::string(unk));
      }
    }
    return out;
  }

  std::string detokenize(std::span<const token_id> ids) const { return vocab_.detokenize(ids); }

  double score_mlm(std::span<const token_id> ids, std::size_t mask_position, token_id target) override {
    if (mask_position >= ids.size()) throw input_error("mask position out of range");
    token_id prev = mask_position == 0 ? bos_id_ : ids[mask_position - 1];
    return logp(prev, target);
  }

  double score_causal(std::span<const token_id> prefix, token_id target) override {
    return logp(prefix.empty() ? bos_id_ : prefix.back(), target);
  }

  bool has_distribution() const override { return true; }
  std::vector<candidate> top_candidates(std::span<const token_id> ids, std::size_t mask_position, std::size_t m) override {
    token_id prev = (mask_position == 0 || mask_position > ids.size()) ? bos_id_ : ids[mask_position - 1];
    std::vector<candidate> out;
    for (std::size_t id = 1; id < vocab_.size(); ++id) {
      auto t = static_cast<token_id>(id);
      if (t == bos_id_) continue;
      out.push_back({t, vocab_.string_of(t), logp(prev, t)});
    }
    std::stable_sort(out.begin(), out.end(), [](const candidate& a, const candidate& b) { return a.logprob > b.logprob; });
    if (out.size() > m) out.resize(m);
    return out;
  }

 private:
  double logp(token_id prev, token_id target) const {
    if (target == whitespace_vocab::mask_id || target == bos_id_) throw input_error("bigram scorer: invalid target id");
    if (prev == whitespace_vocab::mask_id) prev = unk_id_;
    auto pc = pair_counts_.find({prev, target});
    auto lc = left_counts_.find(prev);
    double num = (pc == pair_counts_.end() ? 0.0 : static_cast<double>(pc->second)) + 1.0;
    double den = (lc == left_counts_.end() ? 0.0 : static_cast<double>(lc->second)) + static_cast<double>(v_);
    return std::log(num / den);
  }

  whitespace_vocab vocab_;
  token_id unk_id_ = 0;
  token_id bos_id_ = 0;
  std::size_t v_ = 0;
  std::map<std::pair<token_id, token_id>, std::uint64_t> pair_counts_;
  std::map<token_id, std::uint64_t> left_counts_;
};

}  // namespace tailtype
