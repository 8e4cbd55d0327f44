#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tailtype/baselines.hpp"

using namespace tailtype;

namespace {

typing_example make_example(std::string id, std::string mention, std::string left, std::string right, label_set gold) {
  typing_example ex;
  ex.example_id = std::move(id);
  ex.mention_span = std::move(mention);
  ex.left_context = str::split_ws(left);
  ex.right_context = str::split_ws(right);
  ex.gold_types = std::move(gold);
  return ex;
}

type_vocabulary small_vocab() {
  return type_vocabulary({{"person", granularity::coarse},
                          {"politician", granularity::fine},
                          {"dog", granularity::ultrafine},
                          {"party", granularity::ultrafine}});
}

std::vector<typing_example> pool(std::size_t n) {
  std::vector<typing_example> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_example("p" + std::to_string(i), "Entity " + std::to_string(i), "We saw", "today .",
                               {"person", "politician"}));
  return out;
}

}  // namespace

TEST(singularize, examples) {
  EXPECT_EQ(singularize("politicians"), "politician");
  EXPECT_EQ(singularize("person"), "person");
  EXPECT_EQ(singularize("parties"), "party");
  EXPECT_EQ(singularize("people"), "person");
  EXPECT_EQ(singularize("boxes"), "box");
  EXPECT_EQ(singularize("churches"), "church");
  EXPECT_EQ(singularize("wolves"), "wolf");
  EXPECT_EQ(singularize("days"), "day");
  EXPECT_EQ(singularize("news"), "news");
  EXPECT_EQ(singularize("class"), "class");
  EXPECT_EQ(singularize("political parties"), "political party");
  EXPECT_EQ(singularize("sports_teams"), "sports_team");
  EXPECT_EQ(singularize(""), "");
}

TEST(singularize, idempotent) {
  for (const char* w : {"politicians", "parties", "boxes", "buses", "analyses", "glasses", "houses", "bosses", "wolves",
                        "cities", "heroes", "companies", "athletes", "women", "species", "toys"}) {
    auto once = singularize(w);
    EXPECT_EQ(singularize(once), once) << w;
  }
}

TEST(hearst_template, validation_and_placement_names) {
  hearst_template ok{"t", "[MASK] such as {entity}", hearst_placement::standalone, 3};
  EXPECT_NO_THROW(ok.validate());
  hearst_template two{"t", "[MASK] [MASK] such as {entity}", hearst_placement::standalone, 3};
  EXPECT_THROW(two.validate(), input_error);
  hearst_template none{"t", "such as {entity}", hearst_placement::standalone, 3};
  EXPECT_THROW(none.validate(), input_error);
  hearst_template zero{"t", "[MASK] such as {entity}", hearst_placement::standalone, 0};
  EXPECT_THROW(zero.validate(), input_error);
  for (auto p : {hearst_placement::standalone, hearst_placement::after_period, hearst_placement::after_separator,
                 hearst_placement::inserted})
    EXPECT_EQ(parse_placement(to_string(p)), p);
  EXPECT_FALSE(parse_placement("sideways"));
}

TEST(hearst_template, preset_file_round_trip) {
  testing_util::temp_dir dir;
  auto presets = hearst_presets();
  ASSERT_EQ(presets.size(), 4u);
  auto path = dir.file("presets.tsv", "# comment\n" + serialize_hearst_presets(presets));
  auto back = load_hearst_presets(path);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].name, presets[i].name);
    EXPECT_EQ(back[i].pattern, presets[i].pattern);
    EXPECT_EQ(back[i].placement, presets[i].placement);
    EXPECT_EQ(back[i].n, presets[i].n);
  }
  EXPECT_THROW(load_hearst_presets(dir.file("bad.tsv", "x\t[MASK] {entity}\tsideways\t3\n")), input_error);
  EXPECT_THROW(load_hearst_presets(dir.file("bad2.tsv", "x\tno placeholders\tstandalone\t3\n")), input_error);
}

TEST(render_hearst, placements) {
  auto ex = make_example("e", "Obama", "Yesterday", "spoke .", {"person"});
  hearst_template t{"t", "[MASK] such as {entity}", hearst_placement::standalone, 1};
  auto r = render_hearst(ex, t);
  EXPECT_EQ(r.before_mask, "");
  EXPECT_EQ(r.after_mask, "such as Obama");
  t.placement = hearst_placement::after_period;
  r = render_hearst(ex, t);
  EXPECT_EQ(r.before_mask, "Yesterday Obama spoke . .");
  t.placement = hearst_placement::after_separator;
  EXPECT_EQ(render_hearst(ex, t).before_mask, "Yesterday Obama spoke . [SEP]");
  t.placement = hearst_placement::inserted;
  r = render_hearst(ex, t);
  EXPECT_EQ(r.before_mask, "Yesterday Obama");
  EXPECT_EQ(r.after_mask, "such as Obama spoke .");
}

TEST(hearst_predict, singularizes_filters_and_stops_at_n) {
  table_scorer s({{{}, "politicians", 0.5}, {{}, "dogs", 0.3}, {{}, "qqq", 0.15}, {{}, "Politician", 0.05}});
  auto ex = make_example("e", "Obama", "", "spoke", {"person"});
  hearst_template t{"t", "[MASK] such as {entity}", hearst_placement::standalone, 3};
  auto r = hearst_predict(ex, t, s, small_vocab());
  EXPECT_EQ(r.labels, (label_set{"politician", "dog"}));
  EXPECT_EQ(r.ranked, (std::vector<std::string>{"politician", "dog"}));
  EXPECT_TRUE(r.short_of_n);
  t.n = 1;
  r = hearst_predict(ex, t, s, small_vocab());
  EXPECT_EQ(r.labels, (label_set{"politician"}));
  EXPECT_FALSE(r.short_of_n);
  EXPECT_EQ(hearst_pool_size(1), 50u);
  EXPECT_EQ(hearst_pool_size(12), 120u);
}

TEST(hearst_predict, needs_a_distribution) {
  class blind : public uniform_scorer {
   public:
    blind() : uniform_scorer(10) {}
    bool has_distribution() const override { return false; }
  } b;
  auto ex = make_example("e", "Obama", "", "", {"person"});
  EXPECT_THROW(hearst_predict(ex, hearst_presets()[0], b, small_vocab()), input_error);
}

TEST(fewshot, prompt_is_deterministic_and_shaped) {
  auto p = pool(40);
  auto target = make_example("t", "Obama", "Yesterday", "spoke .", {"person"});
  auto a = build_fewshot_prompt(p, 15, target, 123);
  auto b = build_fewshot_prompt(p, 15, target, 123);
  EXPECT_EQ(a.render(), b.render());
  EXPECT_EQ(a.example_ids, b.example_ids);
  std::size_t headers = 0;
  auto text = a.user_text();
  for (auto pos = text.find("# Example #"); pos != std::string::npos; pos = text.find("# Example #", pos + 1)) ++headers;
  EXPECT_EQ(headers, 15u);
  std::set<std::string> distinct(a.example_ids.begin(), a.example_ids.end());
  EXPECT_EQ(distinct.size(), 15u);
  EXPECT_EQ(a.system, fewshot_system_text);
  EXPECT_NE(build_fewshot_prompt(p, 15, target, 124).example_ids, a.example_ids);
  auto tb = a.target_block;
  EXPECT_EQ(tb, "- INPUT:\n- SENTENCE: 'Yesterday <ENT> Obama </ENT> spoke .'\n- ENTITY_MENTION: 'Obama'\n\n- OUTPUT:\n");
}

TEST(fewshot, example_block_format) {
  auto ex = make_example("x", "Obama", "Yesterday", "spoke .", {"politician", "person"});
  EXPECT_EQ(fewshot_example_block(3, ex),
            "# Example #3:\n- INPUT:\n- SENTENCE: 'Yesterday <ENT> Obama </ENT> spoke .'\n- ENTITY_MENTION: 'Obama'\n\n"
            "- OUTPUT:\n{\"predicted_types\": [\"person\", \"politician\"]}\n");
}

TEST(fewshot, edge_cases) {
  auto p = pool(5);
  auto target = make_example("t", "Obama", "", "", {"person"});
  auto zero = build_fewshot_prompt(p, 0, target, 1);
  EXPECT_TRUE(zero.example_blocks.empty());
  EXPECT_EQ(zero.user_text(), zero.target_block);
  EXPECT_THROW(build_fewshot_prompt(p, 6, target, 1), input_error);
  auto leaky = p;
  leaky.push_back(target);
  EXPECT_THROW(build_fewshot_prompt(leaky, 2, target, 1), input_error);
  auto all = build_fewshot_prompt(p, 5, target, 9);
  std::set<std::string> ids(all.example_ids.begin(), all.example_ids.end());
  EXPECT_EQ(ids.size(), 5u);
}

TEST(parse_typing_response, cases) {
  auto v = small_vocab();
  auto clean = parse_typing_response(R"({"predicted_types": ["Person", " politician ", "person", "astronaut"]})", v);
  EXPECT_FALSE(clean.parse_failed);
  EXPECT_EQ(clean.labels, (label_set{"person", "politician"}));
  EXPECT_EQ(clean.dropped_out_of_vocab, 1u);

  auto fenced = parse_typing_response("Sure!\n```json\n{ \"predicted_types\": [\"dog\"] }\n```\nHope that helps.", v);
  EXPECT_EQ(fenced.labels, (label_set{"dog"}));

  auto braces_in_string = parse_typing_response(R"(note {"x": "}{"} then {"predicted_types": ["party"]})", v);
  EXPECT_EQ(braces_in_string.labels, (label_set{"party"}));

  auto empty = parse_typing_response(R"({"predicted_types": []})", v);
  EXPECT_FALSE(empty.parse_failed);
  EXPECT_TRUE(empty.labels.empty());

  for (const char* bad : {"", "no json here", "{\"predicted_types\": \"person\"}", "{\"predicted_types\": [\"person\"",
                          "{\"types\": [\"person\"]}", "[\"person\"]"}) {
    auto r = parse_typing_response(bad, v);
    EXPECT_TRUE(r.parse_failed) << bad;
    EXPECT_TRUE(r.labels.empty()) << bad;
  }

  auto mixed = parse_typing_response(R"({"predicted_types": [1, null, "dog", ["person"]]})", v);
  EXPECT_EQ(mixed.labels, (label_set{"dog"}));
}
