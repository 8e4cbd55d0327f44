#pragma once

#include <cerrno>
#include <csignal>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "tailtype/common.hpp"
#include "tailtype/scorer.hpp"

// Line-delimited JSON messages between the toolkit and a scorer process. Every request
// carries a client `req_id` that the response echoes; failures come back as {"error": ...}.
//
//   hello              -> capabilities, vocab_size, model_id [, mask_token_id, ops]
//   tokenize           text -> token_ids, token_strings
//   score_mlm          token_ids, mask_position, target_id -> logprob
//   score_mlm          token_ids, mask_position, top_m     -> candidates
//   score_causal       prefix_ids, target_id -> logprob
//   generate_contexts  entity, count -> sentences
//   generate           system, prompt [, json_schema] -> text

namespace tailtype {

class line_channel {
 public:
  virtual ~line_channel() = default;
  // Sends one request line, returns one response line (no trailing newline).
  virtual std::string exchange(const std::string& request) = 0;
};

class function_channel : public line_channel {
 public:
  explicit function_channel(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string exchange(const std::string& request) override { return fn_(request); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

// Runs `/bin/sh -c command` with its stdin/stdout connected to pipes. The child's stderr is
// inherited. One request is in flight at a time.
class subprocess_channel : public line_channel {
 public:
  explicit subprocess_channel(const std::string& command) {
    // A dead child must surface as a write error, not a SIGPIPE.
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw protocol_error(std::string("pipe: ") + std::strerror(errno));
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw protocol_error(std::string("pipe: ") + std::strerror(errno));
    }
    pid_ = fork();
    if (pid_ < 0) throw protocol_error(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  subprocess_channel(const subprocess_channel&) = delete;
  subprocess_channel& operator=(const subprocess_channel&) = delete;

  ~subprocess_channel() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::string exchange(const std::string& request) override {
    std::string line = request + '\n';
    std::size_t sent = 0;
    while (sent < line.size()) {
      auto n = write(write_fd_, line.data() + sent, line.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw protocol_error(std::string("scorer process write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        auto out = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        str::strip_cr(out);
        return out;
      }
      char chunk[4096];
      auto n = read(read_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw protocol_error("scorer process closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
};

// Scorer backed by a remote process speaking the line protocol.
class remote_scorer : public scorer {
 public:
  explicit remote_scorer(std::unique_ptr<line_channel> channel) : channel_(std::move(channel)) {
    auto r = call({{"op", "hello"}});
    try {
      for (const auto& c : r.at("capabilities")) {
        auto cap = parse_capability(c.get<std::string>());
        if (!cap) throw protocol_error("unknown capability " + c.dump());
        caps_.insert(*cap);
      }
      vocab_size_ = r.at("vocab_size").get<std::size_t>();
      model_id_ = r.at("model_id").get<std::string>();
      if (r.contains("mask_token_id") && !r["mask_token_id"].is_null()) mask_id_ = r["mask_token_id"].get<token_id>();
      if (r.contains("ops"))
        for (const auto& op : r["ops"]) ops_.insert(op.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed hello response: ") + e.what());
    }
  }

  std::set<scorer_capability> capabilities() const override { return caps_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::string model_id() const override { return model_id_; }
  std::optional<token_id> mask_token_id() const override { return mask_id_; }

  tokenization tokenize(std::string_view text) override {
    auto r = call({{"op", "tokenize"}, {"text", std::string(text)}});
    tokenization out;
    try {
      out.ids = r.at("token_ids").get<std::vector<token_id>>();
      if (r.contains("token_strings")) out.strings = r["token_strings"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed tokenize response: ") + e.what());
    }
    return out;
  }

  double score_mlm(std::span<const token_id> ids, std::size_t mask_position, token_id target) override {
    return checked_logprob(call({{"op", "score_mlm"},
                                 {"token_ids", std::vector<token_id>(ids.begin(), ids.end())},
                                 {"mask_position", mask_position},
                                 {"target_id", target}}));
  }

  double score_causal(std::span<const token_id> prefix, token_id target) override {
    return checked_logprob(call({{"op", "score_causal"},
                                 {"prefix_ids", std::vector<token_id>(prefix.begin(), prefix.end())},
                                 {"target_id", target}}));
  }

  bool has_distribution() const override { return ops_.empty() || ops_.count("score_mlm_topk"); }

  std::vector<candidate> top_candidates(std::span<const token_id> ids, std::size_t mask_position, std::size_t m) override {
    auto r = call({{"op", "score_mlm"},
                   {"token_ids", std::vector<token_id>(ids.begin(), ids.end())},
                   {"mask_position", mask_position},
                   {"top_m", m}});
    std::vector<candidate> out;
    try {
      for (const auto& c : r.at("candidates")) {
        candidate cand{c.at("token_id").get<token_id>(), c.at("token").get<std::string>(), c.at("logprob").get<double>()};
        validate_logprob(cand.logprob);
        out.push_back(std::move(cand));
      }
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed candidates response: ") + e.what());
    }
    return out;
  }

  bool can_generate_contexts() const override { return ops_.count("generate_contexts") != 0; }

  std::vector<std::string> generate_contexts(const std::string& entity, std::size_t count) override {
    auto r = call({{"op", "generate_contexts"}, {"entity", entity}, {"count", count}});
    try {
      return r.at("sentences").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed generate_contexts response: ") + e.what());
    }
  }

  bool can_generate() const override { return ops_.count("generate") != 0; }

  std::string generate(const std::string& system, const std::string& prompt) override {
    nlohmann::json schema = {{"type", "object"},
                             {"properties", {{"predicted_types", {{"type", "array"}, {"items", {{"type", "string"}}}}}}},
                             {"required", {"predicted_types"}}};
    auto r = call({{"op", "generate"}, {"system", system}, {"prompt", prompt}, {"json_schema", schema}});
    try {
      return r.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed generate response: ") + e.what());
    }
  }

 private:
  static void validate_logprob(double lp) {
    if (!std::isfinite(lp) || lp > 0) throw protocol_error("scorer returned invalid logprob " + fmt_g(lp));
  }

  static double checked_logprob(const nlohmann::json& r) {
    double lp = 0;
    try {
      lp = r.at("logprob").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw protocol_error(std::string("malformed score response: ") + e.what());
    }
    validate_logprob(lp);
    return lp;
  }

  nlohmann::json call(nlohmann::json request) {
    auto id = next_id_++;
    request["req_id"] = id;
    auto line = channel_->exchange(request.dump());
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw protocol_error(std::string("unparseable response: ") + e.what());
    }
    if (!r.is_object()) throw protocol_error("response is not an object");
    if (!r.contains("req_id") || r["req_id"] != id)
      throw protocol_error("response req_id mismatch for request " + std::to_string(id));
    if (r.contains("error")) throw protocol_error("scorer error: " + r["error"].dump());
    return r;
  }

  std::unique_ptr<line_channel> channel_;
  std::set<scorer_capability> caps_;
  std::set<std::string> ops_;
  std::size_t vocab_size_ = 0;
  std::string model_id_;
  std::optional<token_id> mask_id_;
  std::int64_t next_id_ = 1;
};

// Answers one protocol request against a local scorer. Never throws: malformed input and
// scorer failures come back as error responses.
inline std::string handle_request(scorer& s, const std::string& line) {
  nlohmann::json req;
  nlohmann::json resp = nlohmann::json::object();
  try {
    req = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    resp["req_id"] = nullptr;
    resp["error"] = std::string("malformed message: ") + e.what();
    return resp.dump();
  }
  resp["req_id"] = req.is_object() && req.contains("req_id") ? req["req_id"] : nlohmann::json(nullptr);
  try {
    if (!req.is_object() || !req.contains("op") || !req["op"].is_string()) throw input_error("missing op");
    auto op = req["op"].get<std::string>();
    if (op == "hello") {
      std::vector<std::string> caps;
      for (auto c : s.capabilities()) caps.push_back(to_string(c));
      resp["capabilities"] = caps;
      resp["vocab_size"] = s.vocab_size();
      resp["model_id"] = s.model_id();
      if (auto m = s.mask_token_id()) resp["mask_token_id"] = *m;
      std::vector<std::string> ops = {"hello", "tokenize", "score_mlm", "score_causal"};
      if (s.has_distribution()) ops.push_back("score_mlm_topk");
      if (s.can_generate_contexts()) ops.push_back("generate_contexts");
      if (s.can_generate()) ops.push_back("generate");
      resp["ops"] = ops;
    } else if (op == "tokenize") {
      auto t = s.tokenize(req.at("text").get<std::string>());
      resp["token_ids"] = t.ids;
      resp["token_strings"] = t.strings;
    } else if (op == "score_mlm") {
      auto ids = req.at("token_ids").get<std::vector<token_id>>();
      auto pos = req.at("mask_position").get<std::size_t>();
      if (pos >= ids.size()) throw input_error("mask_position out of range");
      if (req.contains("target_id")) {
        resp["logprob"] = s.score_mlm(ids, pos, req["target_id"].get<token_id>());
      } else {
        auto m = req.value("top_m", std::size_t{10});
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : s.top_candidates(ids, pos, m))
          cands.push_back({{"token_id", c.id}, {"token", c.token}, {"logprob", c.logprob}});
        resp["candidates"] = cands;
      }
    } else if (op == "score_causal") {
      auto prefix = req.at("prefix_ids").get<std::vector<token_id>>();
      resp["logprob"] = s.score_causal(prefix, req.at("target_id").get<token_id>());
    } else if (op == "generate_contexts") {
      resp["sentences"] = s.generate_contexts(req.at("entity").get<std::string>(), req.value("count", std::size_t{10}));
    } else if (op == "generate") {
      resp["text"] = s.generate(req.value("system", std::string()), req.at("prompt").get<std::string>());
    } else {
      throw input_error("unknown op '" + op + "'");
    }
  } catch (const std::exception& e) {
    nlohmann::json err = nlohmann::json::object();
    err["req_id"] = resp["req_id"];
    err["error"] = e.what();
    return err.dump();
  }
  return resp.dump();
}

// Request loop over a pair of streams until end of input.
inline void serve_stream(scorer& s, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    str::strip_cr(line);
    if (str::trim(line).empty()) continue;
    out << handle_request(s, line) << '\n';
    out.flush();
  }
}

}  // namespace tailtype
