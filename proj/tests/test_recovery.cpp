#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tailtype/recovery.hpp"

using namespace tailtype;

namespace {

const scoring_strategy all_strategies[] = {scoring_strategy::mlm_equal_masks, scoring_strategy::mlm_progressive_single_mask,
                                           scoring_strategy::causal_fill_in_blank};

recovery_estimate recover(const std::string& context, const std::string& entity, scorer& s, scoring_strategy st) {
  auto span = find_entity(context, entity);
  EXPECT_TRUE(span);
  return recover_probability(context, *span, s, st);
}

// Records every scoring call so the conditioning can be inspected.
class recording_scorer : public scorer {
 public:
  struct call {
    std::vector<token_id> ids;
    std::size_t position;
    token_id target;
  };
  std::vector<call> calls;
  whitespace_vocab vocab;

  std::set<scorer_capability> capabilities() const override { return {scorer_capability::mlm, scorer_capability::causal}; }
  std::size_t vocab_size() const override { return 50; }
  std::string model_id() const override { return "recording"; }
  std::optional<token_id> mask_token_id() const override { return whitespace_vocab::mask_id; }
  tokenization tokenize(std::string_view text) override { return vocab.tokenize(text); }
  double score_mlm(std::span<const token_id> ids, std::size_t pos, token_id target) override {
    calls.push_back({{ids.begin(), ids.end()}, pos, target});
    return std::log(0.5);
  }
  double score_causal(std::span<const token_id> prefix, token_id target) override {
    calls.push_back({{prefix.begin(), prefix.end()}, prefix.size(), target});
    return std::log(0.5);
  }
  std::string words(const std::vector<token_id>& ids) const { return vocab.detokenize(ids); }
};

}  // namespace

TEST(recover_probability, uniform_three_tokens_is_one_in_a_million) {
  for (auto st : all_strategies) {
    uniform_scorer s(100);
    auto est = recover("yesterday alpha beta gamma left town", "alpha beta gamma", s, st);
    EXPECT_EQ(est.n_tokens(), 3u);
    EXPECT_NEAR(est.probability(), 1e-6, 1e-6 * 1e-12) << to_string(st);
  }
}

TEST(recover_probability, table_product) {
  std::vector<table_scorer::entry> table = {{{}, "New", 0.5}, {{"New"}, "York", 0.25}};
  for (auto st : all_strategies) {
    table_scorer s(table, 0.01);
    auto est = recover("I love New York today", "New York", s, st);
    ASSERT_EQ(est.n_tokens(), 2u);
    EXPECT_NEAR(est.token_probability(0), 0.5, 1e-15);
    EXPECT_NEAR(est.token_probability(1), 0.25, 1e-15);
    EXPECT_NEAR(est.probability(), 0.125, 1e-15) << to_string(st);
  }
}

TEST(recover_probability, strategies_agree_for_single_token_entities) {
  std::vector<table_scorer::entry> table = {{{}, "Paris", 0.37}, {{"in"}, "Paris", 0.61}};
  table_scorer s(table, 0.01);
  std::vector<double> ps;
  for (auto st : all_strategies) ps.push_back(recover("We met Paris there", "Paris", s, st).log_prob);
  EXPECT_EQ(ps[0], ps[1]);
  EXPECT_EQ(ps[1], ps[2]);
  EXPECT_NEAR(std::exp(ps[0]), 0.37, 1e-15);
}

TEST(recover_probability, equal_masks_keep_later_masks_masked) {
  recording_scorer s;
  recover("a b X Y Z c", "X Y Z", s, scoring_strategy::mlm_equal_masks);
  ASSERT_EQ(s.calls.size(), 3u);
  EXPECT_EQ(s.words(s.calls[0].ids), "a b [MASK] [MASK] [MASK] c");
  EXPECT_EQ(s.words(s.calls[1].ids), "a b X [MASK] [MASK] c");
  EXPECT_EQ(s.words(s.calls[2].ids), "a b X Y [MASK] c");
  EXPECT_EQ(s.calls[0].position, 2u);
  EXPECT_EQ(s.calls[2].position, 4u);
}

TEST(recover_probability, progressive_uses_one_mask) {
  recording_scorer s;
  recover("a b X Y Z c", "X Y Z", s, scoring_strategy::mlm_progressive_single_mask);
  ASSERT_EQ(s.calls.size(), 3u);
  EXPECT_EQ(s.words(s.calls[0].ids), "a b [MASK] c");
  EXPECT_EQ(s.words(s.calls[1].ids), "a b X [MASK] c");
  EXPECT_EQ(s.words(s.calls[2].ids), "a b X Y [MASK] c");
}

TEST(recover_probability, causal_conditions_on_prompt_and_prefix) {
  recording_scorer s;
  recover("X Y attended Z.", "X Y", s, scoring_strategy::causal_fill_in_blank);
  ASSERT_EQ(s.calls.size(), 2u);
  auto prompt = s.words(s.calls[0].ids);
  EXPECT_EQ(prompt, s.vocab.detokenize(s.vocab.tokenize(build_causal_prompt("X Y attended Z.", {0, 3})).ids));
  EXPECT_EQ(s.words(s.calls[1].ids), prompt + " X");
}

TEST(recover_probability, capability_and_input_errors) {
  class causal_only : public uniform_scorer {
   public:
    causal_only() : uniform_scorer(10) {}
    std::set<scorer_capability> capabilities() const override { return {scorer_capability::causal}; }
  } c;
  EXPECT_THROW(recover_probability("a X b", {2, 3}, c, scoring_strategy::mlm_equal_masks), input_error);
  EXPECT_NO_THROW(recover_probability("a X b", {2, 3}, c, scoring_strategy::causal_fill_in_blank));
  uniform_scorer u(10);
  EXPECT_THROW(recover_probability("a X b", {2, 9}, u, scoring_strategy::mlm_equal_masks), input_error);
  EXPECT_THROW(recover_probability("a   b", {1, 4}, u, scoring_strategy::mlm_equal_masks), input_error);
}

TEST(recover_probability, transport_errors_carry_context_id) {
  class failing : public uniform_scorer {
   public:
    failing() : uniform_scorer(10) {}
    double score_mlm(std::span<const token_id>, std::size_t, token_id) override { throw protocol_error("pipe closed"); }
  } f;
  try {
    recover_probability("a X b", {2, 3}, f, scoring_strategy::mlm_equal_masks, "ctx-7");
    FAIL();
  } catch (const protocol_error& e) {
    EXPECT_NE(std::string(e.what()).find("ctx-7"), std::string::npos);
  }
}

TEST(recover_probability, product_bound) {
  bigram_scorer s({"the red fox ran", "the red car stopped", "a red fox slept", "the fox ran fast"});
  std::mt19937_64 rng(2);
  const char* words[] = {"the", "red", "fox", "ran", "car", "zebra", "a", "slept"};
  for (int t = 0; t < 200; ++t) {
    std::string entity = words[rng() % 8];
    for (int len = 1; len <= 5; ++len) {
      for (auto st : all_strategies) {
        auto e = recover("x y " + entity + " z", entity, s, st);
        ASSERT_EQ(e.n_tokens(), static_cast<std::size_t>(len));
        double sum = 0;
        for (double lp : e.token_logprobs) {
          EXPECT_LE(e.log_prob, lp);
          sum += lp;
        }
        EXPECT_NEAR(e.log_prob, sum, 1e-12);
        EXPECT_GT(e.probability(), 0.0);
        EXPECT_LE(e.probability(), 1.0);
      }
      entity += std::string(" ") + words[rng() % 8];
    }
  }
}

TEST(recover_probability, appending_a_token_never_increases_probability) {
  bigram_scorer s({"one two three four", "two three one"});
  auto prompt = s.tokenize("Response: [blank] can be replaced with:").ids;
  std::vector<token_id> entity = s.tokenize("one two three four two").ids;
  double lp = 0, prev = 0;
  std::vector<token_id> prefix = prompt;
  for (auto t : entity) {
    lp += s.score_causal(prefix, t);
    EXPECT_LE(lp, prev);
    prev = lp;
    prefix.push_back(t);
  }
}

TEST(recover_probability, deterministic) {
  bigram_scorer s({"the red fox ran", "a fox"});
  for (auto st : all_strategies) {
    auto a = recover("we saw the red fox", "red fox", s, st);
    auto b = recover("we saw the red fox", "red fox", s, st);
    EXPECT_EQ(a.log_prob, b.log_prob);
  }
}

TEST(build_causal_prompt, three_line_shape) {
  auto p = build_causal_prompt("X attended Y.", {0, 1});
  EXPECT_EQ(p,
            "Instruction: Fill in the appropriate entity that completes the sentence below.\n"
            "Context: [blank] attended Y.\n"
            "Response: [blank] can be replaced with:");
  auto end = build_causal_prompt("We met X", {7, 8});
  EXPECT_NE(end.find("Context: We met [blank]\n"), std::string::npos);
  EXPECT_THROW(build_causal_prompt("[blank] and X", {12, 13}), input_error);
}

TEST(mask_entity, counts_and_round_trip) {
  std::vector<token_id> ctx = {5, 6, 7, 8, 9, 10};
  auto eq = mask_entity(ctx, {1, 4}, 3, mask_mode::equal, 0);
  EXPECT_EQ(eq, (std::vector<token_id>{5, 0, 0, 0, 9, 10}));
  auto single = mask_entity(ctx, {1, 4}, 3, mask_mode::single, 0);
  EXPECT_EQ(single, (std::vector<token_id>{5, 0, 9, 10}));
  std::vector<token_id> entity = {6, 7, 8};
  EXPECT_EQ(fill_masks(eq, 1, 3, entity), ctx);
  EXPECT_EQ(fill_masks(single, 1, 1, entity), ctx);
  EXPECT_THROW(mask_entity(ctx, {1, 4}, 0, mask_mode::equal, 0), input_error);
}

TEST(average_salience, arithmetic_mean_of_probabilities) {
  std::vector<table_scorer::entry> table = {{{"one"}, "E", 0.2}, {{"two"}, "E", 0.4}};
  table_scorer s(table, 0.01);
  auto rec = average_salience("E", {"one E", "two E"}, s, scoring_strategy::mlm_equal_masks);
  EXPECT_NEAR(rec.mean_probability, 0.3, 1e-15);
  EXPECT_EQ(rec.context_count(), 2u);
  auto single = average_salience("E", {"two E"}, s, scoring_strategy::mlm_equal_masks);
  EXPECT_NEAR(single.mean_probability, 0.4, 1e-15);
  auto geo = average_salience("E", {"one E", "two E"}, s, scoring_strategy::mlm_equal_masks, context_averaging::geometric);
  EXPECT_NEAR(geo.mean_probability, std::sqrt(0.08), 1e-15);
  EXPECT_THROW(average_salience("E", {}, s, scoring_strategy::mlm_equal_masks), input_error);
  EXPECT_THROW(average_salience("E", {"no entity here"}, s, scoring_strategy::mlm_equal_masks), input_error);
}

TEST(average_salience, ten_contexts) {
  uniform_scorer s(10);
  std::vector<std::string> contexts;
  for (int i = 0; i < 10; ++i) contexts.push_back("sentence " + std::to_string(i) + " mentions Big Apple here");
  auto rec = average_salience("Big Apple", contexts, s, scoring_strategy::mlm_progressive_single_mask);
  EXPECT_EQ(rec.context_count(), 10u);
  EXPECT_NEAR(rec.mean_probability, 0.01, 1e-15);
}

TEST(score_salience, pool_preserves_order) {
  std::vector<context_set> sets;
  for (int i = 0; i < 30; ++i) {
    std::string e;
    for (int j = 0; j <= i % 4; ++j) e += (j ? " w" : "w") + std::to_string(j);
    sets.push_back({e, {"before " + e + " after", "start " + e}});
  }
  uniform_scorer a(10), b(10), c(10);
  auto one = score_salience(sets, {&a}, scoring_strategy::mlm_equal_masks);
  auto three = score_salience(sets, {&a, &b, &c}, scoring_strategy::mlm_equal_masks);
  ASSERT_EQ(one.size(), three.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].entity, sets[i].entity);
    EXPECT_EQ(one[i].entity, three[i].entity);
    EXPECT_EQ(one[i].mean_probability, three[i].mean_probability);
    // Uniform scorer: P depends only on token count.
    EXPECT_NEAR(one[i].mean_probability, std::pow(10.0, -static_cast<double>(i % 4 + 1)), 1e-15);
  }
  EXPECT_THROW(score_salience(sets, {}, scoring_strategy::mlm_equal_masks), input_error);
}

TEST(correlate_salience_with_hits, identical_order_and_oracle) {
  std::vector<salience_record> sal;
  std::vector<frequency_record> freq;
  std::vector<double> x, y;
  double probs[] = {0.1, 0.5, 0.3, 0.3, 0.9};
  std::uint64_t hits[] = {10, 20, 30, 30, 40};
  for (int i = 0; i < 5; ++i) {
    std::string e = "e" + std::to_string(i);
    sal.push_back({e, probs[i], {}});
    freq.push_back({e, "s", "v", hits[i]});
    x.push_back(static_cast<double>(hits[i]));
    y.push_back(probs[i]);
  }
  EXPECT_NEAR(*correlate_salience_with_hits(sal, freq), *oracle::spearman(x, y), 1e-15);
  auto ordered = sal;
  for (int i = 0; i < 5; ++i) ordered[i].mean_probability = static_cast<double>(hits[i]) / 100;
  EXPECT_DOUBLE_EQ(*correlate_salience_with_hits(ordered, freq), 1.0);
  freq.pop_back();
  EXPECT_THROW(correlate_salience_with_hits(sal, freq), input_error);
}

TEST(salience_files, means_round_trip) {
  std::vector<salience_record> recs = {{"New York", 0.125, {}}, {"Paris", 1e-300, {}}};
  auto text = serialize_salience_means(recs);
  auto path = std::filesystem::temp_directory_path() / "tailtype_means.tsv";
  write_file(path.string(), text);
  auto back = load_salience_means(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].mean_probability, 0.125);
  EXPECT_EQ(back[1].mean_probability, 1e-300);
}

TEST(scorers, whitespace_round_trip) {
  uniform_scorer s(100);
  auto t = s.tokenize("the  quick brown");
  EXPECT_EQ(t.strings, (std::vector<std::string>{"the", "quick", "brown"}));
  EXPECT_EQ(s.tokenize(s.detokenize(t.ids)).ids, t.ids);
}

TEST(scorers, bigram_probabilities) {
  bigram_scorer s({"a b", "a c"});
  // V = {a, b, c} + <unk> = 4. P(b | a) = (1 + 1) / (2 + 4).
  auto ids = s.tokenize("a b").ids;
  EXPECT_NEAR(std::exp(s.score_causal(std::span<const token_id>(ids).first(1), ids[1])), 2.0 / 6.0, 1e-15);
  // First token conditions on <s>: P(a | <s>) = (2 + 1) / (2 + 4).
  EXPECT_NEAR(std::exp(s.score_causal({}, ids[0])), 3.0 / 6.0, 1e-15);
  // Distribution over all targets sums to one.
  double total = 0;
  for (const auto& c : s.top_candidates(ids, 1, 100)) total += std::exp(c.logprob);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(s.tokenize("zzz").strings[0], "<unk>");
}
