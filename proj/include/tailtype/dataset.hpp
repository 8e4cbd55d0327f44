#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tailtype/common.hpp"

namespace tailtype {

using label_set = std::set<std::string>;

struct typing_example {
  std::string example_id;
  std::string mention_span;
  std::vector<std::string> left_context;
  std::vector<std::string> right_context;
  label_set gold_types;

  bool operator==(const typing_example&) const = default;

  // Surface form used for every frequency lookup.
  std::string entity() const { return str::normalize_ws(mention_span); }

  std::string sentence() const {
    std::vector<std::string> parts = left_context;
    parts.push_back(mention_span);
    parts.insert(parts.end(), right_context.begin(), right_context.end());
    return str::join(parts, " ");
  }
};

enum class granularity { coarse, fine, ultrafine };

inline constexpr granularity all_granularities[] = {granularity::coarse, granularity::fine,
                                                    granularity::ultrafine};

inline std::string to_string(granularity g) {
  switch (g) {
    case granularity::coarse: return "coarse";
    case granularity::fine: return "fine";
    case granularity::ultrafine: return "ultrafine";
  }
  return "?";
}

inline std::optional<granularity> parse_granularity(std::string_view s) {
  if (s == "coarse") return granularity::coarse;
  if (s == "fine") return granularity::fine;
  if (s == "ultrafine") return granularity::ultrafine;
  return std::nullopt;
}

class type_vocabulary {
 public:
  type_vocabulary() = default;

  explicit type_vocabulary(std::map<std::string, granularity> classes) : classes_(std::move(classes)) {}

  bool contains(const std::string& label) const { return classes_.count(label) != 0; }

  std::optional<granularity> class_of(const std::string& label) const {
    auto it = classes_.find(label);
    if (it == classes_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return classes_.size(); }

  std::size_t class_size(granularity g) const {
    std::size_t n = 0;
    for (const auto& [label, c] : classes_)
      if (c == g) ++n;
    return n;
  }

  label_set labels() const {
    label_set out;
    for (const auto& [label, c] : classes_) out.insert(label);
    return out;
  }

  const std::map<std::string, granularity>& classes() const { return classes_; }

 private:
  std::map<std::string, granularity> classes_;
};

struct frequency_record {
  std::string entity;
  std::string source;
  std::string snapshot;
  std::uint64_t hits = 0;

  bool operator==(const frequency_record&) const = default;
};

struct prediction_record {
  std::string example_id;
  std::string run_id;
  label_set predicted_types;

  bool operator==(const prediction_record&) const = default;
};

struct context_set {
  std::string entity;
  std::vector<std::string> sentences;
};

struct line_error {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct dataset_load {
  std::vector<typing_example> examples;
  std::vector<line_error> errors;
};

enum class dataset_format { ufet_jsonl, ontonotes_jsonl };

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::runtime_error(std::string("missing field '") + key + "'");
  if (!it->is_array()) throw std::runtime_error(std::string("field '") + key + "' is not an array");
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_string()) throw std::runtime_error(std::string("field '") + key + "' has a non-string element");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::string string_field(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::runtime_error(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw std::runtime_error(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

}  // namespace detail

// Parses one dataset record. Ontonotes-style files may carry `annot_id` instead of `ex_id`;
// when neither is present the 1-based line number becomes the id.
inline typing_example parse_example(const std::string& line, dataset_format format, std::size_t line_no) {
  auto obj = nlohmann::json::parse(line);
  if (!obj.is_object()) throw std::runtime_error("record is not an object");
  typing_example ex;
  if (obj.contains("ex_id")) {
    const auto& id = obj["ex_id"];
    ex.example_id = id.is_string() ? id.get<std::string>() : id.dump();
  } else if (format == dataset_format::ontonotes_jsonl && obj.contains("annot_id")) {
    const auto& id = obj["annot_id"];
    ex.example_id = id.is_string() ? id.get<std::string>() : id.dump();
  } else if (format == dataset_format::ontonotes_jsonl) {
    ex.example_id = std::to_string(line_no);
  } else {
    throw std::runtime_error("missing field 'ex_id'");
  }
  ex.mention_span = detail::string_field(obj, "mention_span");
  if (str::trim(ex.mention_span).empty()) throw std::runtime_error("empty mention_span");
  ex.left_context = detail::string_array(obj, "left_context_token");
  ex.right_context = detail::string_array(obj, "right_context_token");
  for (auto& t : detail::string_array(obj, "y_str")) ex.gold_types.insert(std::move(t));
  if (ex.gold_types.empty()) throw std::runtime_error("empty y_str");
  return ex;
}

// Loads a line-delimited dataset. Malformed lines and duplicate ids are collected into
// `errors` with their line numbers; blank lines are skipped.
inline dataset_load load_dataset(const std::string& path, dataset_format format = dataset_format::ufet_jsonl) {
  auto lines = read_lines(path);
  dataset_load out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    try {
      auto ex = parse_example(lines[i], format, i + 1);
      if (!seen.insert(ex.example_id).second) {
        out.errors.push_back({i + 1, "duplicate example id '" + ex.example_id + "'"});
        continue;
      }
      out.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      out.errors.push_back({i + 1, e.what()});
    }
  }
  return out;
}

inline std::string serialize_example(const typing_example& ex) {
  nlohmann::json obj;
  obj["ex_id"] = ex.example_id;
  obj["mention_span"] = ex.mention_span;
  obj["left_context_token"] = ex.left_context;
  obj["right_context_token"] = ex.right_context;
  obj["y_str"] = std::vector<std::string>(ex.gold_types.begin(), ex.gold_types.end());
  return obj.dump();
}

inline std::string serialize_dataset(const std::vector<typing_example>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += serialize_example(ex);
    out += '\n';
  }
  return out;
}

// Label file: one label per line. Granularity map: `label<TAB>class`.
inline type_vocabulary load_type_vocabulary(const std::string& labels_path, const std::string& granularity_path) {
  std::vector<std::string> labels;
  std::set<std::string> seen;
  auto label_lines = read_lines(labels_path);
  for (std::size_t i = 0; i < label_lines.size(); ++i) {
    auto label = std::string(str::trim(label_lines[i]));
    if (label.empty()) continue;
    if (!seen.insert(label).second)
      throw input_error(labels_path + ":" + std::to_string(i + 1) + ": duplicate label '" + label + "'");
    labels.push_back(std::move(label));
  }

  std::map<std::string, granularity> mapped;
  auto map_lines = read_lines(granularity_path);
  for (std::size_t i = 0; i < map_lines.size(); ++i) {
    if (str::trim(map_lines[i]).empty()) continue;
    auto fields = str::split(map_lines[i], '\t');
    auto where = granularity_path + ":" + std::to_string(i + 1);
    if (fields.size() != 2) throw input_error(where + ": expected label<TAB>class");
    auto label = std::string(str::trim(fields[0]));
    auto cls = parse_granularity(str::trim(fields[1]));
    if (!cls) throw input_error(where + ": unknown granularity class '" + fields[1] + "'");
    if (!seen.count(label)) throw input_error(where + ": label '" + label + "' is not in the label file");
    if (!mapped.emplace(label, *cls).second) throw input_error(where + ": label '" + label + "' mapped twice");
  }
  for (const auto& label : labels)
    if (!mapped.count(label)) throw input_error("label '" + label + "' has no granularity class");
  return type_vocabulary(std::move(mapped));
}

struct dropped_label {
  std::size_t line = 0;
  std::string label;
};

struct prediction_load {
  std::vector<prediction_record> records;
  std::vector<dropped_label> dropped;
  std::vector<line_error> warnings;

  std::size_t drop_count() const { return dropped.size(); }
};

// Loads `{"ex_id", "run_id", "predicted_types"}` lines. Labels outside `vocab` are dropped and
// reported. When `known_ids` is supplied, ids missing from it produce warnings.
inline prediction_load load_predictions(const std::string& path, const type_vocabulary& vocab,
                                        const std::unordered_set<std::string>* known_ids = nullptr) {
  auto lines = read_lines(path);
  prediction_load out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    prediction_record rec;
    std::vector<std::string> labels;
    try {
      auto obj = nlohmann::json::parse(lines[i]);
      if (!obj.is_object()) throw std::runtime_error("record is not an object");
      rec.example_id = detail::string_field(obj, "ex_id");
      if (obj.contains("run_id")) {
        const auto& r = obj["run_id"];
        rec.run_id = r.is_string() ? r.get<std::string>() : r.dump();
      } else {
        rec.run_id = "0";
      }
      labels = detail::string_array(obj, "predicted_types");
    } catch (const std::exception& e) {
      throw input_error(path + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    for (auto& label : labels) {
      if (vocab.contains(label))
        rec.predicted_types.insert(std::move(label));
      else
        out.dropped.push_back({i + 1, std::move(label)});
    }
    if (known_ids && !known_ids->count(rec.example_id))
      out.warnings.push_back({i + 1, "unknown example id '" + rec.example_id + "'"});
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline std::string serialize_prediction(const prediction_record& rec) {
  nlohmann::json obj;
  obj["ex_id"] = rec.example_id;
  obj["run_id"] = rec.run_id;
  obj["predicted_types"] = std::vector<std::string>(rec.predicted_types.begin(), rec.predicted_types.end());
  return obj.dump();
}

// Snapshot file: `entity<TAB>source<TAB>snapshot<TAB>hits` per line.
inline std::vector<frequency_record> load_frequency_records(const std::string& path) {
  auto lines = read_lines(path);
  std::vector<frequency_record> out;
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto where = path + ":" + std::to_string(i + 1);
    auto fields = str::split(lines[i], '\t');
    if (fields.size() != 4) throw input_error(where + ": expected entity<TAB>source<TAB>snapshot<TAB>hits");
    frequency_record rec{str::normalize_ws(fields[0]), fields[1], fields[2], parse_u64(fields[3], where)};
    if (rec.entity.empty()) throw input_error(where + ": empty entity");
    if (!keys.emplace(rec.entity, rec.source, rec.snapshot).second)
      throw input_error(where + ": duplicate record for '" + rec.entity + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string serialize_frequency_records(const std::vector<frequency_record>& records) {
  std::string out;
  for (const auto& r : records)
    out += r.entity + '\t' + r.source + '\t' + r.snapshot + '\t' + std::to_string(r.hits) + '\n';
  return out;
}

// Context file: `{"entity": S, "sentences": [...]}` per line; every sentence must contain the entity.
inline std::vector<context_set> load_context_sets(const std::string& path) {
  auto lines = read_lines(path);
  std::vector<context_set> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto where = path + ":" + std::to_string(i + 1);
    context_set cs;
    try {
      auto obj = nlohmann::json::parse(lines[i]);
      cs.entity = detail::string_field(obj, "entity");
      cs.sentences = detail::string_array(obj, "sentences");
    } catch (const std::exception& e) {
      throw input_error(where + ": " + e.what());
    }
    if (cs.entity.empty()) throw input_error(where + ": empty entity");
    for (const auto& s : cs.sentences)
      if (!str::contains(s, cs.entity))
        throw input_error(where + ": sentence does not contain '" + cs.entity + "': " + s);
    out.push_back(std::move(cs));
  }
  return out;
}

inline std::unordered_set<std::string> example_ids(const std::vector<typing_example>& examples) {
  std::unordered_set<std::string> ids;
  for (const auto& ex : examples) ids.insert(ex.example_id);
  return ids;
}

}  // namespace tailtype
