#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/scorer.hpp"

namespace tailtype {

// ---------------------------------------------------------------------------------------
// Singularization

namespace detail {

inline const std::unordered_map<std::string, std::string>& irregular_plurals() {
  static const std::unordered_map<std::string, std::string> table = {
      {"men", "man"},         {"women", "woman"},     {"children", "child"},   {"people", "person"},
      {"feet", "foot"},       {"teeth", "tooth"},     {"geese", "goose"},      {"mice", "mouse"},
      {"lice", "louse"},      {"oxen", "ox"},         {"dice", "die"},         {"criteria", "criterion"},
      {"phenomena", "phenomenon"}, {"data", "datum"}, {"media", "medium"},     {"alumni", "alumnus"},
      {"cacti", "cactus"},    {"fungi", "fungus"},    {"nuclei", "nucleus"},   {"stimuli", "stimulus"},
      {"analyses", "analysis"}, {"crises", "crisis"}, {"theses", "thesis"},    {"hypotheses", "hypothesis"},
      {"diagnoses", "diagnosis"}, {"bases", "base"},  {"buses", "bus"},        {"gases", "gas"},
      {"lenses", "lens"},     {"atlases", "atlas"},   {"aliases", "alias"},    {"canvases", "canvas"},
      {"statuses", "status"}, {"viruses", "virus"},   {"campuses", "campus"},  {"bonuses", "bonus"},
      {"choruses", "chorus"}, {"circuses", "circus"}, {"geniuses", "genius"},  {"apparatuses", "apparatus"},
      {"movies", "movie"},    {"cookies", "cookie"},  {"zombies", "zombie"},   {"rookies", "rookie"},
      {"hippies", "hippie"},  {"calories", "calorie"}, {"lies", "lie"},        {"ties", "tie"},
      {"pies", "pie"},        {"species", "species"}, {"series", "series"},    {"indices", "index"},
      {"matrices", "matrix"}, {"vertices", "vertex"}, {"appendices", "appendix"}, {"quizzes", "quiz"},
      {"heroes", "hero"},     {"potatoes", "potato"}, {"tomatoes", "tomato"},  {"echoes", "echo"},
      {"vetoes", "veto"},     {"torpedoes", "torpedo"}, {"volcanoes", "volcano"}, {"mosquitoes", "mosquito"},
      {"dominoes", "domino"}, {"shoes", "shoe"},      {"toes", "toe"},         {"foes", "foe"},
      {"horses", "horse"},    {"houses", "house"},    {"nurses", "nurse"},     {"courses", "course"},
      {"causes", "cause"},    {"purses", "purse"},    {"verses", "verse"},     {"warehouses", "warehouse"},
      {"licenses", "license"}, {"responses", "response"}, {"expenses", "expense"}, {"enterprises", "enterprise"},
  };
  return table;
}

// -ves plurals that take -f or -fe.
inline const std::unordered_map<std::string, std::string>& ves_plurals() {
  static const std::unordered_map<std::string, std::string> table = {
      {"wolves", "wolf"},   {"knives", "knife"},   {"wives", "wife"},     {"lives", "life"},
      {"leaves", "leaf"},   {"halves", "half"},    {"thieves", "thief"},  {"shelves", "shelf"},
      {"loaves", "loaf"},   {"calves", "calf"},    {"elves", "elf"},      {"selves", "self"},
      {"housewives", "housewife"}, {"midwives", "midwife"}, {"sheaves", "sheaf"}, {"scarves", "scarf"},
      {"wharves", "wharf"}, {"hooves", "hoof"},
  };
  return table;
}

// Words that end in s but are already singular (or have no distinct singular).
inline const std::unordered_set<std::string>& uninflected() {
  static const std::unordered_set<std::string> words = {
      "news",      "series",    "species",   "means",     "politics",  "physics",   "economics", "mathematics",
      "athletics", "ethics",    "linguistics", "statistics", "electronics", "gymnastics", "aerobics", "logistics",
      "sheep",     "fish",      "deer",      "aircraft",  "police",    "headquarters", "crossroads", "barracks",
      "gas",       "bus",       "lens",      "atlas",     "alias",     "canvas",    "bias",      "chaos",
      "iris",      "status",    "virus",     "campus",    "bonus",     "chorus",    "circus",    "genius",
      "apparatus", "corps",     "jeans",     "pants",     "scissors",  "glasses",   "clothes",   "thanks",
      "analysis",  "crisis",    "thesis",    "basis",     "diagnosis", "hypothesis", "axis",     "texas",
      "always",    "perhaps",   "whereas",   "this",      "yes",       "plus",      "versus",    "us",
      "his",       "hers",      "its",       "ours",      "yours",     "theirs",    "mars",      "venus",
      "christmas", "arkansas",  "kansas",    "paris",     "brussels",  "athens",    "wales",     "vegas",
      "diabetes",  "measles",   "mumps",     "rabies",    "herpes",    "billiards", "checkers",  "darts",
      "dominoes",  "innings",   "lyrics",
  };
  return words;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

inline std::string singularize_word(const std::string& w) {
  if (w.size() <= 2) return w;
  if (uninflected().count(w)) return w;
  if (auto it = irregular_plurals().find(w); it != irregular_plurals().end()) return it->second;
  if (auto it = ves_plurals().find(w); it != ves_plurals().end()) return it->second;
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is") || ends_with(w, "'s")) return w;
  if (ends_with(w, "ies") && w.size() > 4 && !is_vowel(w[w.size() - 4])) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "sses") || ends_with(w, "shes") || ends_with(w, "ches") || ends_with(w, "xes") ||
      ends_with(w, "zzes"))
    return w.substr(0, w.size() - 2);
  if (ends_with(w, "s") && !ends_with(w, "ss")) return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace detail

// Rule-based English singularization of the last word of a label. Unknown shapes and
// already-singular words come back unchanged.
inline std::string singularize(std::string_view label) {
  std::string s(label);
  auto cut = s.find_last_of(" _-");
  if (cut == std::string::npos) return detail::singularize_word(s);
  return s.substr(0, cut + 1) + detail::singularize_word(s.substr(cut + 1));
}

// ---------------------------------------------------------------------------------------
// Hearst-template mask prediction

enum class hearst_placement { standalone, after_period, after_separator, inserted };

inline std::string to_string(hearst_placement p) {
  switch (p) {
    case hearst_placement::standalone: return "standalone";
    case hearst_placement::after_period: return "appended-after-period";
    case hearst_placement::after_separator: return "appended-after-separator";
    case hearst_placement::inserted: return "inserted-in-sentence";
  }
  return "?";
}

inline std::optional<hearst_placement> parse_placement(std::string_view s) {
  if (s == "standalone") return hearst_placement::standalone;
  if (s == "appended-after-period") return hearst_placement::after_period;
  if (s == "appended-after-separator") return hearst_placement::after_separator;
  if (s == "inserted-in-sentence") return hearst_placement::inserted;
  return std::nullopt;
}

inline constexpr std::string_view entity_placeholder = "{entity}";
inline constexpr std::string_view mask_placeholder = "[MASK]";

struct hearst_template {
  std::string name;
  std::string pattern;  // contains {entity} and [MASK] exactly once each
  hearst_placement placement = hearst_placement::standalone;
  std::size_t n = 1;

  void validate() const {
    auto count = [&](std::string_view needle) {
      std::size_t c = 0;
      for (auto pos = pattern.find(needle); pos != std::string::npos; pos = pattern.find(needle, pos + 1)) ++c;
      return c;
    };
    if (count(entity_placeholder) != 1 || count(mask_placeholder) != 1)
      throw input_error("template '" + name + "' must contain {entity} and [MASK] exactly once");
    if (n < 1) throw input_error("template '" + name + "' needs n >= 1");
  }
};

// The four placements with their dev-tuned candidate counts.
inline std::vector<hearst_template> hearst_presets() {
  const std::string pattern = "[MASK] such as {entity}";
  return {
      {"standalone", pattern, hearst_placement::standalone, 12},
      {"period", pattern, hearst_placement::after_period, 5},
      {"separator", pattern, hearst_placement::after_separator, 5},
      {"inserted", pattern, hearst_placement::inserted, 6},
  };
}

// Preset file: `name<TAB>pattern<TAB>placement<TAB>n`.
inline std::vector<hearst_template> load_hearst_presets(const std::string& path) {
  std::vector<hearst_template> out;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty() || lines[i][0] == '#') continue;
    auto f = str::split(lines[i], '\t');
    auto where = path + ":" + std::to_string(i + 1);
    if (f.size() != 4) throw input_error(where + ": expected name<TAB>pattern<TAB>placement<TAB>n");
    auto placement = parse_placement(f[2]);
    if (!placement) throw input_error(where + ": unknown placement '" + f[2] + "'");
    hearst_template t{f[0], f[1], *placement, static_cast<std::size_t>(parse_u64(f[3], where))};
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

inline std::string serialize_hearst_presets(const std::vector<hearst_template>& templates) {
  std::string out;
  for (const auto& t : templates)
    out += t.name + '\t' + t.pattern + '\t' + to_string(t.placement) + '\t' + std::to_string(t.n) + '\n';
  return out;
}

// Text on either side of the [MASK] once the template is placed around the example.
struct rendered_template {
  std::string before_mask;
  std::string after_mask;
};

inline rendered_template render_hearst(const typing_example& ex, const hearst_template& t) {
  t.validate();
  std::string hearst = t.pattern;
  hearst.replace(hearst.find(entity_placeholder), entity_placeholder.size(), ex.mention_span);
  auto mask_at = hearst.find(mask_placeholder);
  auto hearst_before = hearst.substr(0, mask_at);
  auto hearst_after = hearst.substr(mask_at + mask_placeholder.size());

  auto left = str::join(ex.left_context, " ");
  auto right = str::join(ex.right_context, " ");
  auto sentence = ex.sentence();
  auto glue = [](std::initializer_list<std::string> parts) {
    std::vector<std::string> kept;
    for (const auto& p : parts) {
      auto trimmed = std::string(str::trim(p));
      if (!trimmed.empty()) kept.push_back(trimmed);
    }
    return str::join(kept, " ");
  };

  switch (t.placement) {
    case hearst_placement::standalone: return {glue({hearst_before}), glue({hearst_after})};
    case hearst_placement::after_period: return {glue({sentence, ".", hearst_before}), glue({hearst_after})};
    case hearst_placement::after_separator: return {glue({sentence, "[SEP]", hearst_before}), glue({hearst_after})};
    case hearst_placement::inserted:
      // Hearst phrase goes immediately after the mention.
      return {glue({left, ex.mention_span, hearst_before}), glue({hearst_after, right})};
  }
  return {};
}

struct hearst_result {
  label_set labels;
  std::vector<std::string> ranked;  // surviving labels in rank order, at most n
  bool short_of_n = false;
};

// Ranked mask fills for one example; shared by prediction and dev tuning.
inline std::vector<candidate> hearst_candidates(const typing_example& ex, const hearst_template& t, scorer& mlm,
                                                std::size_t pool_size) {
  if (!mlm.supports(scorer_capability::mlm)) throw input_error("Hearst prediction needs an mlm scorer");
  if (!mlm.has_distribution()) throw input_error("scorer '" + mlm.model_id() + "' does not expose a mask-fill distribution");
  auto parts = render_hearst(ex, t);
  auto before = mlm.tokenize(parts.before_mask).ids;
  auto after = mlm.tokenize(parts.after_mask).ids;
  auto mask = mlm.mask_token_id();
  std::vector<token_id> seq = before;
  seq.push_back(mask.value_or(0));
  seq.insert(seq.end(), after.begin(), after.end());
  return mlm.top_candidates(seq, before.size(), pool_size);
}

// Walks ranked candidates, singularizes, keeps vocabulary labels, stops at n distinct.
inline hearst_result select_hearst_labels(const std::vector<candidate>& ranked, const type_vocabulary& vocab, std::size_t n) {
  hearst_result out;
  for (const auto& c : ranked) {
    if (out.ranked.size() >= n) break;
    auto label = singularize(str::to_lower_ascii(str::trim(c.token)));
    if (!vocab.contains(label) || out.labels.count(label)) continue;
    out.labels.insert(label);
    out.ranked.push_back(label);
  }
  out.short_of_n = out.ranked.size() < n;
  return out;
}

inline std::size_t hearst_pool_size(std::size_t n) { return std::max<std::size_t>(50, 10 * n); }

inline hearst_result hearst_predict(const typing_example& ex, const hearst_template& t, scorer& mlm,
                                    const type_vocabulary& vocab) {
  return select_hearst_labels(hearst_candidates(ex, t, mlm, hearst_pool_size(t.n)), vocab, t.n);
}

// ---------------------------------------------------------------------------------------
// Few-shot prompting

inline constexpr std::string_view fewshot_system_text =
    "# Entity-Typing Assistant\n"
    "You are a precise entity-typing assistant.  \n"
    "Given a sentence in which **one entity mention is wrapped in `<ENT> ... </ENT>` tags**, produce **only** a "
    "JSON object whose single key is **\"predicted_types\"**.\n"
    "\n"
    "## Guidelines\n"
    "- The value must be a JSON array of strings. \n"
    "- Include all the type labels that are relevant.\n"
    "- Remove duplicates and keep each type concise (ideally a short noun phrase).  \n"
    "- Do not output any keys other than `\"predicted_types\"`.\n"
    "\n"
    "## Input Format\n"
    "- SENTENCE: The complete sentence with the target entity clearly marked with `<ENT>` tags\n"
    "- ENTITY_MENTION: The target entity mention from the sentence\n"
    "\n"
    "## Output Format\n"
    "```json\n"
    "{ \n"
    "    \"predicted_types\": [\"TypeA\", \"TypeB\", \"TypeC\", ...] \n"
    "}\n"
    "```\n";

struct few_shot_prompt {
  std::string system;
  std::vector<std::string> example_blocks;
  std::string target_block;
  std::vector<std::string> example_ids;

  std::string user_text() const {
    std::string out;
    for (const auto& b : example_blocks) out += b + "\n";
    out += target_block;
    return out;
  }

  std::string render() const { return system + "\n" + user_text(); }
};

inline std::string tagged_sentence(const typing_example& ex) {
  std::vector<std::string> parts = ex.left_context;
  parts.push_back("<ENT> " + ex.mention_span + " </ENT>");
  parts.insert(parts.end(), ex.right_context.begin(), ex.right_context.end());
  return str::join(parts, " ");
}

inline std::string fewshot_example_block(std::size_t index, const typing_example& ex) {
  std::string types;
  std::size_t i = 0;
  for (const auto& t : ex.gold_types) types += (i++ ? ", " : "") + nlohmann::json(t).dump();
  return "# Example #" + std::to_string(index) + ":\n" + "- INPUT:\n" + "- SENTENCE: '" + tagged_sentence(ex) + "'\n" +
         "- ENTITY_MENTION: '" + ex.mention_span + "'\n\n" + "- OUTPUT:\n" + "{\"predicted_types\": [" + types + "]}\n";
}

inline std::string fewshot_target_block(const typing_example& ex) {
  return "- INPUT:\n- SENTENCE: '" + tagged_sentence(ex) + "'\n- ENTITY_MENTION: '" + ex.mention_span + "'\n\n- OUTPUT:\n";
}

namespace detail {

// Uniform integer in [0, bound) from raw mt19937_64 output by rejection, so prompts are
// byte-identical across standard library implementations.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const auto limit = UINT64_MAX - UINT64_MAX % bound;
  for (;;) {
    auto v = rng();
    if (v < limit) return v % bound;
  }
}

}  // namespace detail

// k distinct pool examples chosen uniformly under `seed` (partial Fisher-Yates), followed by
// the target's input block.
inline few_shot_prompt build_fewshot_prompt(const std::vector<typing_example>& pool, std::size_t k,
                                            const typing_example& target, std::uint64_t seed) {
  for (const auto& ex : pool)
    if (ex.example_id == target.example_id) throw input_error("target '" + target.example_id + "' is in the example pool");
  if (pool.size() < k)
    throw input_error("example pool has " + std::to_string(pool.size()) + " examples, need " + std::to_string(k));
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    auto j = i + detail::bounded(rng, idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  few_shot_prompt out;
  out.system = std::string(fewshot_system_text);
  for (std::size_t i = 0; i < k; ++i) {
    out.example_blocks.push_back(fewshot_example_block(i + 1, pool[idx[i]]));
    out.example_ids.push_back(pool[idx[i]].example_id);
  }
  out.target_block = fewshot_target_block(target);
  return out;
}

struct parsed_types {
  label_set labels;
  bool parse_failed = false;
  std::size_t dropped_out_of_vocab = 0;
};

namespace detail {

// End index (inclusive) of the balanced {...} starting at `open`, honoring JSON strings.
inline std::optional<std::size_t> balanced_object_end(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Extracts the first balanced object whose `predicted_types` is an array; its string items
// are lowercased, trimmed, deduplicated and filtered to the vocabulary. Never throws.
inline parsed_types parse_typing_response(std::string_view raw, const type_vocabulary& vocab) noexcept {
  parsed_types out;
  try {
    for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
      auto close = detail::balanced_object_end(raw, open);
      if (!close) continue;
      auto obj = nlohmann::json::parse(raw.substr(open, *close - open + 1), nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) continue;
      auto it = obj.find("predicted_types");
      if (it == obj.end() || !it->is_array()) continue;
      for (const auto& v : *it) {
        if (!v.is_string()) continue;
        auto label = str::to_lower_ascii(str::trim(v.get<std::string>()));
        if (label.empty()) continue;
        if (vocab.contains(label))
          out.labels.insert(label);
        else
          ++out.dropped_out_of_vocab;
      }
      return out;
    }
  } catch (...) {
  }
  out.labels.clear();
  out.parse_failed = true;
  return out;
}

}  // namespace tailtype
