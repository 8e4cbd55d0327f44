#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "tailtype/protocol.hpp"
#include "tailtype/recovery.hpp"

using namespace tailtype;
using nlohmann::json;

namespace {

std::unique_ptr<line_channel> loopback(scorer& s) {
  return std::make_unique<function_channel>([&s](const std::string& line) { return handle_request(s, line); });
}

const scoring_strategy all_strategies[] = {scoring_strategy::mlm_equal_masks, scoring_strategy::mlm_progressive_single_mask,
                                           scoring_strategy::causal_fill_in_blank};

}  // namespace

TEST(handle_request, hello_shape) {
  uniform_scorer s(42);
  auto r = json::parse(handle_request(s, R"({"op":"hello","req_id":9})"));
  EXPECT_EQ(r["req_id"], 9);
  EXPECT_EQ(r["vocab_size"], 42);
  EXPECT_EQ(r["model_id"], "uniform:42");
  EXPECT_EQ(r["mask_token_id"], 0);
  EXPECT_EQ(r["capabilities"], json({"mlm", "causal"}));
  EXPECT_NE(std::find(r["ops"].begin(), r["ops"].end(), "score_mlm_topk"), r["ops"].end());
}

TEST(handle_request, echoes_req_id_and_scores) {
  uniform_scorer s(100);
  auto r = json::parse(handle_request(s, R"({"op":"score_causal","req_id":"abc","prefix_ids":[1,2],"target_id":3})"));
  EXPECT_EQ(r["req_id"], "abc");
  EXPECT_NEAR(r["logprob"].get<double>(), -std::log(100.0), 1e-15);
  auto t = json::parse(handle_request(s, R"({"op":"tokenize","req_id":1,"text":"New York"})"));
  EXPECT_EQ(t["token_strings"], json({"New", "York"}));
  EXPECT_EQ(t["token_ids"].size(), 2u);
  auto c = json::parse(handle_request(s, R"({"op":"score_mlm","req_id":2,"token_ids":[0,1],"mask_position":0,"top_m":3})"));
  EXPECT_EQ(c["candidates"].size(), 2u);  // only interned tokens are candidates
}

TEST(handle_request, errors_never_throw) {
  uniform_scorer s(10);
  auto bad = json::parse(handle_request(s, "{not json"));
  EXPECT_TRUE(bad["req_id"].is_null());
  EXPECT_TRUE(bad.contains("error"));
  auto unknown = json::parse(handle_request(s, R"({"op":"frobnicate","req_id":4})"));
  EXPECT_EQ(unknown["req_id"], 4);
  EXPECT_NE(unknown["error"].get<std::string>().find("frobnicate"), std::string::npos);
  auto missing = json::parse(handle_request(s, R"({"req_id":5})"));
  EXPECT_TRUE(missing.contains("error"));
  auto range = json::parse(handle_request(s, R"({"op":"score_mlm","req_id":6,"token_ids":[1],"mask_position":3,"target_id":1})"));
  EXPECT_TRUE(range.contains("error"));
  auto no_field = json::parse(handle_request(s, R"({"op":"score_causal","req_id":7})"));
  EXPECT_TRUE(no_field.contains("error"));
  auto no_gen = json::parse(handle_request(s, R"({"op":"generate","req_id":8,"prompt":"x"})"));
  EXPECT_TRUE(no_gen.contains("error"));
}

TEST(serve_stream, one_response_per_line) {
  uniform_scorer s(10);
  std::istringstream in("{\"op\":\"hello\",\"req_id\":1}\n\n{\"op\":\"tokenize\",\"req_id\":2,\"text\":\"a\"}\r\n");
  std::ostringstream out;
  serve_stream(s, in, out);
  std::istringstream lines(out.str());
  std::string l;
  std::vector<json> got;
  while (std::getline(lines, l)) got.push_back(json::parse(l));
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0]["req_id"], 1);
  EXPECT_EQ(got[1]["req_id"], 2);
}

TEST(remote_scorer, matches_local_scorer_exactly) {
  std::vector<table_scorer::entry> table = {{{}, "New", 0.5}, {{"New"}, "York", 0.25}};
  table_scorer local(table, 0.01);
  table_scorer served(table, 0.01);
  remote_scorer remote(loopback(served));
  EXPECT_EQ(remote.vocab_size(), 100u);
  EXPECT_EQ(remote.mask_token_id(), std::optional<token_id>(0));
  EXPECT_TRUE(remote.supports(scorer_capability::mlm));
  EXPECT_TRUE(remote.has_distribution());
  for (auto st : all_strategies) {
    auto a = recover_probability("I love New York today", {7, 15}, local, st);
    auto b = recover_probability("I love New York today", {7, 15}, remote, st);
    EXPECT_EQ(a.log_prob, b.log_prob);
    EXPECT_NEAR(b.probability(), 0.125, 1e-15);
  }
  auto ids = remote.tokenize("I love [MASK]").ids;
  auto c = remote.top_candidates(ids, 2, 5);
  ASSERT_FALSE(c.empty());
  EXPECT_EQ(c[0].token, "New");
}

TEST(remote_scorer, rejects_invalid_logprob) {
  uniform_scorer s(10);
  for (const char* lp : {"0.5", "null", "\"x\""}) {
    remote_scorer remote(std::make_unique<function_channel>([&s, lp](const std::string& line) {
      auto req = json::parse(line);
      if (req["op"] == "score_causal")
        return std::string(R"({"req_id":)") + req["req_id"].dump() + R"(,"logprob":)" + lp + "}";
      return handle_request(s, line);
    }));
    EXPECT_THROW(remote.score_causal(std::vector<token_id>{1}, 2), protocol_error) << lp;
  }
}

TEST(remote_scorer, rejects_mismatched_or_malformed_responses) {
  uniform_scorer s(10);
  int mode = 0;
  auto fn = [&](const std::string& line) -> std::string {
    auto req = json::parse(line);
    if (req["op"] == "hello") return handle_request(s, line);
    if (mode == 0) return R"({"req_id":999,"logprob":-1})";
    if (mode == 1) return "garbage";
    if (mode == 2) return R"({"req_id":)" + req["req_id"].dump() + R"(,"error":"model exploded"})";
    return R"({"req_id":)" + req["req_id"].dump() + "}";
  };
  remote_scorer remote(std::make_unique<function_channel>(fn));
  for (mode = 0; mode < 4; ++mode) EXPECT_THROW(remote.score_causal(std::vector<token_id>{1}, 2), protocol_error) << mode;
  EXPECT_THROW(remote_scorer(std::make_unique<function_channel>([](const std::string&) { return std::string("{}"); })),
               protocol_error);
}

TEST(remote_scorer, generate_sends_schema) {
  class generating : public uniform_scorer {
   public:
    generating() : uniform_scorer(10) {}
    bool can_generate() const override { return true; }
    std::string generate(const std::string& system, const std::string& prompt) override { return system + "|" + prompt; }
  } g;
  json seen;
  remote_scorer remote(std::make_unique<function_channel>([&](const std::string& line) {
    auto req = json::parse(line);
    if (req["op"] == "generate") seen = req;
    return handle_request(g, line);
  }));
  ASSERT_TRUE(remote.can_generate());
  EXPECT_EQ(remote.generate("sys", "p"), "sys|p");
  EXPECT_EQ(seen["json_schema"]["required"], json({"predicted_types"}));
}

TEST(subprocess_channel, serve_stub_round_trip) {
  remote_scorer remote(std::make_unique<subprocess_channel>(std::string(TAILTYPE_CLI) + " serve-stub --scorer uniform:100"));
  EXPECT_EQ(remote.vocab_size(), 100u);
  for (auto st : all_strategies) {
    auto est = recover_probability("yesterday alpha beta gamma left", {10, 26}, remote, st);
    EXPECT_NEAR(est.probability(), 1e-6, 1e-18);
  }
}

TEST(subprocess_channel, dead_child_is_protocol_error) {
  EXPECT_THROW(remote_scorer(std::make_unique<subprocess_channel>("exit 0")), protocol_error);
  EXPECT_THROW(remote_scorer(std::make_unique<subprocess_channel>("echo not-json")), protocol_error);
}
