#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tailtype {

// Error kinds map one-to-one onto the CLI exit codes.
enum class exit_code : int {
  ok = 0,
  input_format = 2,
  protocol = 3,
  invariant = 4,
};

class error : public std::runtime_error {
 public:
  error(exit_code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  exit_code code() const noexcept { return code_; }

 private:
  exit_code code_;
};

class input_error : public error {
 public:
  explicit input_error(const std::string& what) : error(exit_code::input_format, what) {}
};

class protocol_error : public error {
 public:
  explicit protocol_error(const std::string& what) : error(exit_code::protocol, what) {}
};

class invariant_error : public error {
 public:
  explicit invariant_error(const std::string& what) : error(exit_code::invariant, what) {}
};

namespace str {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Splits on runs of whitespace; no empty fields.
inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Splits on a single delimiter, keeping empty fields.
inline std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Collapses internal whitespace runs to one space and trims the ends. Case is preserved.
inline std::string normalize_ws(std::string_view s) {
  return join(split_ws(s), " ");
}

inline bool contains(std::string_view hay, std::string_view needle) {
  return hay.find(needle) != std::string_view::npos;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace str

// Reads every line of a text file; throws input_error naming the path when unreadable.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    str::strip_cr(line);
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw input_error("write failed: " + path);
}

inline std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  s = str::trim(s);
  if (s.empty() || s.front() == '-') throw input_error(std::string(what) + ": expected non-negative integer, got '" + std::string(s) + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw input_error(std::string(what) + ": expected non-negative integer, got '" + std::string(s) + "'");
    auto d = static_cast<std::uint64_t>(c - '0');
    if (v > (UINT64_MAX - d) / 10) throw input_error(std::string(what) + ": integer overflow");
    v = v * 10 + d;
  }
  return v;
}

inline double parse_double(std::string_view s, std::string_view what) {
  std::string tmp(str::trim(s));
  if (tmp.empty()) throw input_error(std::string(what) + ": empty number");
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tmp, &used);
  } catch (const std::exception&) {
    throw input_error(std::string(what) + ": bad number '" + tmp + "'");
  }
  if (used != tmp.size()) throw input_error(std::string(what) + ": bad number '" + tmp + "'");
  return v;
}

// Locale-independent shortest-ish formatting used for every emitted table.
inline std::string fmt_double(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline std::string fmt_g(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

}  // namespace tailtype
