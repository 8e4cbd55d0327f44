#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tailtype/common.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/rank_stats.hpp"

namespace tailtype {

class transport_failure : public protocol_error {
 public:
  using protocol_error::protocol_error;
};

class quota_exhausted : public protocol_error {
 public:
  using protocol_error::protocol_error;
};

// Snapshot caps are calendar dates, YYYY-MM-DD.
inline bool valid_snapshot(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') return false;
  int month = (s[5] - '0') * 10 + (s[6] - '0');
  int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

// Persistent (entity, snapshot) -> hits map backed by an append-only TSV log:
// `entity<TAB>snapshot<TAB>hits<TAB>unix_time`. Later lines win on reload.
class hit_cache {
 public:
  struct entry {
    std::uint64_t hits = 0;
    std::int64_t inserted_at = 0;
  };

  hit_cache() = default;

  explicit hit_cache(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    if (!std::filesystem::exists(path_, ec)) return;
    auto lines = read_lines(path_.string());
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      auto f = str::split(lines[i], '\t');
      auto where = path_.string() + ":" + std::to_string(i + 1);
      if (f.size() != 4) throw input_error(where + ": malformed cache line");
      entries_[{f[0], f[1]}] = {parse_u64(f[2], where), static_cast<std::int64_t>(parse_u64(f[3], where))};
    }
  }

  std::optional<std::uint64_t> get(const std::string& entity, const std::string& snapshot) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find({entity, snapshot});
    if (it == entries_.end()) return std::nullopt;
    return it->second.hits;
  }

  std::optional<entry> get_entry(const std::string& entity, const std::string& snapshot) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find({entity, snapshot});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& entity, const std::string& snapshot, std::uint64_t hits) {
    std::unique_lock lock(mu_);
    auto now = static_cast<std::int64_t>(std::time(nullptr));
    entries_[{entity, snapshot}] = {hits, now};
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw input_error("cannot write cache: " + path_.string());
    out << entity << '\t' << snapshot << '\t' << hits << '\t' << now << '\n';
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::map<std::pair<std::string, std::string>, entry> entries_;
};

// Minimum spacing between requests. Clock and sleep are injectable for tests.
class rate_limiter {
 public:
  using clock = std::chrono::steady_clock;
  using now_fn = std::function<clock::time_point()>;
  using sleep_fn = std::function<void(clock::duration)>;

  explicit rate_limiter(double per_second, now_fn now = [] { return clock::now(); },
                        sleep_fn sleep = [](clock::duration d) { std::this_thread::sleep_for(d); })
      : now_(std::move(now)), sleep_(std::move(sleep)) {
    if (per_second > 0)
      interval_ = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / per_second));
  }

  void acquire() {
    std::lock_guard lock(mu_);
    auto now = now_();
    if (started_ && now < next_) {
      sleep_(next_ - now);
      now = next_;
    }
    started_ = true;
    next_ = now + interval_;
  }

 private:
  now_fn now_;
  sleep_fn sleep_;
  clock::duration interval_{0};
  clock::time_point next_{};
  bool started_ = false;
  std::mutex mu_;
};

struct search_query {
  std::string entity;
  std::string snapshot;
};

// One exact-phrase, date-capped search. Implementations throw transport_failure for retryable
// errors and quota_exhausted when the daily quota is spent.
class search_transport {
 public:
  virtual ~search_transport() = default;
  virtual std::uint64_t total_results(const search_query& q) = 0;
};

// Query text sent to the engine: the entity as a quoted phrase.
inline std::string exact_phrase_query(std::string_view entity) {
  std::string q = "\"";
  for (char c : entity) q += (c == '"') ? ' ' : c;
  return q + "\"";
}

// Date-range restriction understood by the custom search engine: everything up to the cap.
inline std::string snapshot_date_restrict(std::string_view snapshot) {
  std::string compact;
  for (char c : snapshot)
    if (c != '-') compact += c;
  return "date:r:19000101:" + compact;
}

// Extracts the engine's reported (estimated) result count from a response body.
inline std::uint64_t parse_search_response(const std::string& body) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(body);
  } catch (const std::exception& e) {
    throw transport_failure(std::string("unparseable search response: ") + e.what());
  }
  if (obj.contains("error")) {
    const auto& err = obj["error"];
    std::string reason = err.dump();
    int code = err.value("code", 0);
    if (code == 429 || str::contains(reason, "dailyLimitExceeded") || str::contains(reason, "quotaExceeded") ||
        str::contains(reason, "rateLimitExceeded"))
      throw quota_exhausted("search quota exhausted: " + reason);
    throw transport_failure("search error: " + reason);
  }
  auto info = obj.find("searchInformation");
  if (info == obj.end() || !info->contains("totalResults")) return 0;
  const auto& total = (*info)["totalResults"];
  if (total.is_string()) return parse_u64(total.get<std::string>(), "totalResults");
  if (total.is_number_unsigned()) return total.get<std::uint64_t>();
  throw transport_failure("totalResults has unexpected type");
}

struct search_options {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
  double requests_per_second = 1.0;
  std::string source = "search-api";
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

enum class batch_stop { completed, quota_exhausted, transport_failed };

struct batch_result {
  std::vector<frequency_record> records;
  std::vector<std::string> remaining;  // resumable checkpoint, in input order
  batch_stop stop = batch_stop::completed;
  std::string message;
  std::size_t network_calls = 0;
};

class search_client {
 public:
  search_client(search_transport& transport, hit_cache& cache, search_options opts = {},
                rate_limiter* limiter = nullptr)
      : transport_(transport), cache_(cache), opts_(std::move(opts)), limiter_(limiter) {}

  // Cached values short-circuit the transport. Transport failures retry with exponential
  // backoff up to max_attempts; quota exhaustion propagates immediately.
  frequency_record fetch(const std::string& raw_entity, const std::string& snapshot) {
    auto entity = str::normalize_ws(raw_entity);
    if (entity.empty()) throw input_error("fetch: empty entity");
    if (!valid_snapshot(snapshot)) throw input_error("fetch: snapshot must be YYYY-MM-DD, got '" + snapshot + "'");
    if (auto hit = cache_.get(entity, snapshot)) return {entity, opts_.source, snapshot, *hit};

    auto backoff = opts_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      if (limiter_) limiter_->acquire();
      try {
        ++network_calls_;
        auto hits = transport_.total_results({entity, snapshot});
        cache_.put(entity, snapshot, hits);
        return {entity, opts_.source, snapshot, hits};
      } catch (const quota_exhausted&) {
        throw;
      } catch (const transport_failure& e) {
        if (attempt >= opts_.max_attempts)
          throw transport_failure("giving up on '" + entity + "' after " + std::to_string(attempt) + " attempts: " + e.what());
        opts_.sleep(backoff);
        backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * opts_.backoff_multiplier));
      }
    }
  }

  batch_result fetch_batch(const std::vector<std::string>& entities, const std::string& snapshot) {
    batch_result out;
    auto calls_before = network_calls_;
    for (std::size_t i = 0; i < entities.size(); ++i) {
      try {
        out.records.push_back(fetch(entities[i], snapshot));
      } catch (const quota_exhausted& e) {
        out.stop = batch_stop::quota_exhausted;
        out.message = e.what();
      } catch (const transport_failure& e) {
        out.stop = batch_stop::transport_failed;
        out.message = e.what();
      }
      if (out.stop != batch_stop::completed) {
        out.remaining.assign(entities.begin() + static_cast<std::ptrdiff_t>(i), entities.end());
        break;
      }
    }
    out.network_calls = network_calls_ - calls_before;
    return out;
  }

  std::size_t network_calls() const { return network_calls_; }

 private:
  search_transport& transport_;
  hit_cache& cache_;
  search_options opts_;
  rate_limiter* limiter_;
  std::size_t network_calls_ = 0;
};

struct bin_change {
  std::string entity;
  int bin_a = 0;
  int bin_b = 0;
};

struct drift_report {
  std::vector<bin_change> changes;
  std::size_t count() const { return changes.size(); }
};

using binning_fn = std::function<bin_assignment(const std::vector<frequency_record>&)>;

// Entities whose bin differs between two snapshots of the same entity set.
inline drift_report compare_snapshots(const std::vector<frequency_record>& a, const std::vector<frequency_record>& b,
                                      const binning_fn& bins_fn = [](const std::vector<frequency_record>& r) {
                                        return assign_bins(r, 4);
                                      }) {
  std::set<std::string> ea, eb;
  for (const auto& r : a) ea.insert(r.entity);
  for (const auto& r : b) eb.insert(r.entity);
  if (ea != eb) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(ea.begin(), ea.end(), eb.begin(), eb.end(), std::back_inserter(diff));
    std::string listed;
    for (std::size_t i = 0; i < diff.size() && i < 20; ++i) listed += (i ? ", '" : "'") + diff[i] + "'";
    if (diff.size() > 20) listed += ", ...";
    throw input_error("snapshots cover different entity sets (" + std::to_string(diff.size()) +
                      " entities in the symmetric difference: " + listed + ")");
  }
  auto ba = bins_fn(a);
  auto bb = bins_fn(b);
  drift_report out;
  for (const auto& e : ea) {
    int x = ba.bins.at(e), y = bb.bins.at(e);
    if (x != y) out.changes.push_back({e, x, y});
  }
  return out;
}

}  // namespace tailtype
