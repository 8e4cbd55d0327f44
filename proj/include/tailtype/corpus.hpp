#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "tailtype/common.hpp"

namespace tailtype {

enum class match_mode { word_boundary, substring };

inline std::optional<match_mode> parse_match_mode(std::string_view s) {
  if (s == "word-boundary") return match_mode::word_boundary;
  if (s == "substring") return match_mode::substring;
  return std::nullopt;
}

// ASCII letters, digits, '_' and every byte of a multi-byte UTF-8 sequence count as word bytes.
inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

inline unsigned char fold_byte(unsigned char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<unsigned char>(c - 'A' + 'a') : c;
}

// A corpus is the concatenation of its shards' bytes, in shard order.
class corpus_stream {
 public:
  struct shard {
    std::string id;
    std::uint64_t offset = 0;
    std::uint64_t size = 0;
    std::variant<std::filesystem::path, std::string> source;
  };

  static corpus_stream from_strings(const std::vector<std::string>& pieces) {
    corpus_stream cs;
    for (std::size_t i = 0; i < pieces.size(); ++i) cs.add({"mem:" + std::to_string(i), 0, pieces[i].size(), pieces[i]});
    return cs;
  }

  static corpus_stream from_files(const std::vector<std::filesystem::path>& files) {
    corpus_stream cs;
    for (const auto& f : files) {
      std::error_code ec;
      auto size = std::filesystem::file_size(f, ec);
      if (ec) throw input_error("unreadable shard " + f.string() + ": " + ec.message());
      cs.add({f.string(), 0, size, f});
    }
    return cs;
  }

  // Every regular file below `dir`, sorted by path.
  static corpus_stream from_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw input_error("corpus directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return from_files(files);
  }

  std::uint64_t total_bytes() const { return total_; }
  const std::vector<shard>& shards() const { return shards_; }

  // Reads the global byte range [begin, end), crossing shard boundaries as needed.
  std::string read(std::uint64_t begin, std::uint64_t end) const {
    end = std::min(end, total_);
    std::string out;
    if (begin >= end) return out;
    out.reserve(end - begin);
    auto it = std::upper_bound(shards_.begin(), shards_.end(), begin,
                               [](std::uint64_t v, const shard& s) { return v < s.offset; });
    if (it != shards_.begin()) --it;
    for (; it != shards_.end() && it->offset < end; ++it) {
      auto lo = std::max(begin, it->offset);
      auto hi = std::min(end, it->offset + it->size);
      if (lo >= hi) continue;
      append_range(*it, lo - it->offset, hi - lo, out);
    }
    return out;
  }

 private:
  void add(shard s) {
    s.offset = total_;
    total_ += s.size;
    shards_.push_back(std::move(s));
  }

  static void append_range(const shard& s, std::uint64_t local, std::uint64_t len, std::string& out) {
    if (const auto* mem = std::get_if<std::string>(&s.source)) {
      out.append(*mem, local, len);
      return;
    }
    const auto& path = std::get<std::filesystem::path>(s.source);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("unreadable shard " + s.id);
    in.seekg(static_cast<std::streamoff>(local));
    auto old = out.size();
    out.resize(old + len);
    in.read(out.data() + old, static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw input_error("short read on shard " + s.id);
  }

  std::vector<shard> shards_;
  std::uint64_t total_ = 0;
};

// Dense Aho-Corasick automaton over a compressed byte alphabet. Bytes that appear in no
// pattern share class 0, so the transition table stays at nodes x (distinct bytes + 1).
class phrase_matcher {
 public:
  // Estimated table size for a pattern set, used for the memory-budget check before building.
  static std::uint64_t estimate_bytes(const std::vector<std::string>& patterns, bool fold_case) {
    std::array<bool, 256> used{};
    std::uint64_t nodes = 1;
    for (const auto& p : patterns) {
      nodes += p.size();
      for (unsigned char c : p) used[fold_case ? fold_byte(c) : c] = true;
    }
    auto classes = static_cast<std::uint64_t>(std::count(used.begin(), used.end(), true)) + 1;
    return nodes * (classes * sizeof(std::int32_t) + 3 * sizeof(std::int32_t));
  }

  phrase_matcher(const std::vector<std::string>& patterns, bool fold_case) : fold_case_(fold_case) {
    for (int c = 0; c < 256; ++c) byte_map_[c] = fold_case ? fold_byte(static_cast<unsigned char>(c)) : static_cast<unsigned char>(c);
    std::array<bool, 256> used{};
    for (const auto& p : patterns)
      for (unsigned char c : p) used[byte_map_[c]] = true;
    class_count_ = 1;
    std::array<std::int32_t, 256> cls{};
    for (int c = 0; c < 256; ++c)
      if (used[c]) cls[c] = class_count_++;
    for (int c = 0; c < 256; ++c) class_of_[c] = cls[byte_map_[c]];

    lengths_.reserve(patterns.size());
    new_node();
    for (std::size_t i = 0; i < patterns.size(); ++i) insert(patterns[i], static_cast<std::int32_t>(i));
    build_links();
  }

  std::size_t pattern_count() const { return lengths_.size(); }
  std::size_t max_length() const { return max_len_; }
  std::size_t node_count() const { return terminal_.size(); }

  // Adds the number of occurrences starting in [begin_off, end_off) of `buf` to `counts`.
  // Buffer edges are treated as corpus edges by the word-boundary check, so callers must
  // include one byte of left context and max_length() bytes of right context where they exist.
  void count(std::string_view buf, std::size_t begin_off, std::size_t end_off, match_mode mode,
             std::vector<std::uint64_t>& counts) const {
    std::int32_t state = 0;
    const auto* data = reinterpret_cast<const unsigned char*>(buf.data());
    for (std::size_t pos = 0; pos < buf.size(); ++pos) {
      state = next_[static_cast<std::size_t>(state) * class_count_ + class_of_[data[pos]]];
      for (std::int32_t node = terminal_[state] >= 0 ? state : dict_[state]; node > 0; node = dict_[node]) {
        auto pat = terminal_[node];
        auto len = lengths_[pat];
        std::size_t start = pos + 1 - len;
        if (start < begin_off || start >= end_off) continue;
        if (mode == match_mode::word_boundary) {
          if (start > 0 && is_word_byte(data[start - 1])) continue;
          if (pos + 1 < buf.size() && is_word_byte(data[pos + 1])) continue;
        }
        ++counts[pat];
      }
    }
  }

 private:
  std::int32_t new_node() {
    next_.resize(next_.size() + class_count_, -1);
    fail_.push_back(0);
    dict_.push_back(0);
    terminal_.push_back(-1);
    return static_cast<std::int32_t>(terminal_.size() - 1);
  }

  void insert(const std::string& p, std::int32_t id) {
    std::int32_t node = 0;
    for (unsigned char c : p) {
      auto& slot = next_[static_cast<std::size_t>(node) * class_count_ + class_of_[c]];
      if (slot < 0) {
        auto fresh = new_node();
        next_[static_cast<std::size_t>(node) * class_count_ + class_of_[c]] = fresh;
        node = fresh;
      } else {
        node = slot;
      }
    }
    terminal_[node] = id;
    lengths_.push_back(p.size());
    max_len_ = std::max(max_len_, p.size());
  }

  void build_links() {
    std::queue<std::int32_t> q;
    for (std::int32_t c = 0; c < class_count_; ++c) {
      auto& t = next_[c];
      if (t < 0) {
        t = 0;
      } else {
        fail_[t] = 0;
        dict_[t] = 0;
        q.push(t);
      }
    }
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (std::int32_t c = 0; c < class_count_; ++c) {
        auto idx = static_cast<std::size_t>(u) * class_count_ + c;
        auto v = next_[idx];
        auto via_fail = next_[static_cast<std::size_t>(fail_[u]) * class_count_ + c];
        if (v < 0) {
          next_[idx] = via_fail;
        } else {
          fail_[v] = via_fail;
          dict_[v] = terminal_[via_fail] >= 0 ? via_fail : dict_[via_fail];
          q.push(v);
        }
      }
    }
  }

  bool fold_case_;
  std::array<unsigned char, 256> byte_map_{};
  std::array<std::int32_t, 256> class_of_{};
  std::int32_t class_count_ = 1;
  std::vector<std::int32_t> next_;
  std::vector<std::int32_t> fail_;
  std::vector<std::int32_t> dict_;
  std::vector<std::int32_t> terminal_;
  std::vector<std::size_t> lengths_;
  std::size_t max_len_ = 0;
};

struct count_options {
  match_mode mode = match_mode::word_boundary;
  bool fold_case = false;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::uint64_t chunk_bytes = 16ull << 20;
  std::uint64_t memory_budget_bytes = 1ull << 30;
};

// Counts every entity in one pass over the corpus. Work is split into fixed-size chunks of
// the concatenated stream; each chunk reads one byte of left context and max_len bytes of
// right context, and keeps only matches that start inside it, so no occurrence is lost or
// double-counted at a chunk or shard boundary.
inline std::map<std::string, std::uint64_t> count_corpus_hits(const corpus_stream& corpus,
                                                             const std::vector<std::string>& entities,
                                                             const count_options& opts = {}) {
  if (entities.empty()) throw input_error("entity set is empty");
  std::vector<std::string> patterns;
  std::unordered_map<std::string, std::size_t> pattern_index;
  std::vector<std::pair<std::string, std::size_t>> entity_to_pattern;
  for (const auto& raw : entities) {
    auto e = str::normalize_ws(raw);
    if (e.empty()) throw input_error("entity is empty after whitespace normalization: '" + raw + "'");
    auto key = opts.fold_case ? str::to_lower_ascii(e) : e;
    auto [it, fresh] = pattern_index.emplace(key, patterns.size());
    if (fresh) patterns.push_back(key);
    entity_to_pattern.emplace_back(e, it->second);
  }

  auto estimate = phrase_matcher::estimate_bytes(patterns, opts.fold_case);
  if (estimate > opts.memory_budget_bytes)
    throw input_error("pattern set needs ~" + std::to_string(estimate) + " bytes of automaton, budget is " +
                      std::to_string(opts.memory_budget_bytes) + " bytes (" + std::to_string(patterns.size()) +
                      " patterns)");
  phrase_matcher matcher(patterns, opts.fold_case);

  const auto total = corpus.total_bytes();
  const auto chunk = std::max<std::uint64_t>(opts.chunk_bytes, 1);
  const auto units = (total + chunk - 1) / chunk;
  const auto margin = static_cast<std::uint64_t>(matcher.max_length());

  auto threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::max<std::size_t>(1, std::min<std::uint64_t>(threads, std::max<std::uint64_t>(units, 1)));

  std::vector<std::vector<std::uint64_t>> partial(threads, std::vector<std::uint64_t>(patterns.size(), 0));
  std::atomic<std::uint64_t> next_unit{0};
  std::mutex err_mu;
  std::exception_ptr first_error;

  auto worker = [&](std::size_t slot) {
    try {
      for (;;) {
        auto u = next_unit.fetch_add(1);
        if (u >= units) return;
        auto begin = u * chunk;
        auto end = std::min(total, begin + chunk);
        auto read_begin = begin > 0 ? begin - 1 : 0;
        auto buf = corpus.read(read_begin, end + margin);
        matcher.count(buf, begin - read_begin, end - read_begin, opts.mode, partial[slot]);
      }
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = std::current_exception();
      next_unit.store(units);
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::uint64_t> merged(patterns.size(), 0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < p.size(); ++i) merged[i] += p[i];

  std::map<std::string, std::uint64_t> out;
  for (const auto& [entity, idx] : entity_to_pattern) out[entity] = merged[idx];
  return out;
}

}  // namespace tailtype
