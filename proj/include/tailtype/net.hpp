#pragma once

// HTTP transports: the scorer protocol over POST /rpc, and the web-search hit source.
// Define TAILTYPE_WITH_OPENSSL (and link OpenSSL) for HTTPS.

#ifdef TAILTYPE_WITH_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>

#include "tailtype/common.hpp"
#include "tailtype/protocol.hpp"
#include "tailtype/search.hpp"

namespace tailtype {

inline constexpr const char* rpc_path = "/rpc";

// One protocol line per POST body.
class http_channel : public line_channel {
 public:
  explicit http_channel(const std::string& base_url, int timeout_seconds = 300) : client_(base_url) {
    if (!client_.is_valid()) throw input_error("invalid bridge url '" + base_url + "'");
    client_.set_read_timeout(timeout_seconds, 0);
    client_.set_write_timeout(timeout_seconds, 0);
    client_.set_keep_alive(true);
  }

  std::string exchange(const std::string& request) override {
    auto res = client_.Post(rpc_path, request, "application/json");
    if (!res) throw protocol_error("bridge http request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw protocol_error("bridge http status " + std::to_string(res->status) + ": " + res->body);
    auto body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return body;
  }

 private:
  httplib::Client client_;
};

// Serves `s` over HTTP until stop() or process exit. Requests are answered one at a time.
class http_scorer_server {
 public:
  explicit http_scorer_server(scorer& s) : scorer_(s) {
    server_.Post(rpc_path, [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      res.set_content(handle_request(scorer_, req.body) + "\n", "application/json");
    });
  }

  int bind_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  scorer& scorer_;
  std::mutex mu_;
  httplib::Server server_;
};

// Custom-search JSON API. Credentials come from the environment, never from flags.
inline constexpr const char* search_key_env = "TAILTYPE_SEARCH_KEY";
inline constexpr const char* search_engine_env = "TAILTYPE_SEARCH_ENGINE";
inline constexpr const char* search_base_env = "TAILTYPE_SEARCH_URL";

class custom_search_transport : public search_transport {
 public:
  custom_search_transport(std::string base_url, std::string key, std::string engine)
      : base_url_(std::move(base_url)), key_(std::move(key)), engine_(std::move(engine)) {
    if (key_.empty() || engine_.empty())
      throw input_error(std::string("search credentials missing: set ") + search_key_env + " and " + search_engine_env);
  }

  static custom_search_transport from_env() {
    auto get = [](const char* name) {
      const char* v = std::getenv(name);
      return std::string(v ? v : "");
    };
    auto base = get(search_base_env);
    return custom_search_transport(base.empty() ? "https://www.googleapis.com" : base, get(search_key_env),
                                   get(search_engine_env));
  }

  std::uint64_t total_results(const search_query& q) override {
    httplib::Client client(base_url_);
    client.set_read_timeout(30, 0);
    httplib::Params params{{"key", key_},
                           {"cx", engine_},
                           {"q", exact_phrase_query(q.entity)},
                           {"sort", snapshot_date_restrict(q.snapshot)},
                           {"num", "1"}};
    auto res = client.Get("/customsearch/v1", params, httplib::Headers{});
    if (!res) throw transport_failure("search request failed: " + httplib::to_string(res.error()));
    if (res->status == 429) throw quota_exhausted("search quota exhausted (HTTP 429)");
    if (res->status >= 500) throw transport_failure("search server error " + std::to_string(res->status));
    return parse_search_response(res->body);
  }

 private:
  std::string base_url_;
  std::string key_;
  std::string engine_;
};

}  // namespace tailtype
