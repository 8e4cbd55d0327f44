#include <gtest/gtest.h>

#include "tailtype/search.hpp"
#include "test_util.hpp"

using namespace tailtype;
using testing_util::temp_dir;

namespace {

class stub_transport : public search_transport {
 public:
  std::uint64_t value = 12345;
  std::size_t calls = 0;
  std::size_t quota_after = SIZE_MAX;  // quota error on call index >= quota_after
  int transient_failures = 0;          // fail this many calls before succeeding
  std::vector<search_query> seen;

  std::uint64_t total_results(const search_query& q) override {
    auto idx = calls++;
    seen.push_back(q);
    if (idx >= quota_after) throw quota_exhausted("daily limit");
    if (transient_failures > 0) {
      --transient_failures;
      throw transport_failure("connection reset");
    }
    return value;
  }
};

search_options fast_options() {
  search_options o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

}  // namespace

TEST(search_client, stub_value_passes_through) {
  stub_transport t;
  hit_cache cache;
  search_client client(t, cache, fast_options());
  auto r = client.fetch("Barack  Obama", "2024-12-31");
  EXPECT_EQ(r.hits, 12345u);
  EXPECT_EQ(r.entity, "Barack Obama");
  EXPECT_EQ(r.snapshot, "2024-12-31");
  EXPECT_EQ(r.source, "search-api");
  EXPECT_EQ(t.seen.at(0).entity, "Barack Obama");
}

TEST(search_client, cache_hit_makes_no_network_call) {
  stub_transport t;
  hit_cache cache;
  search_client client(t, cache, fast_options());
  client.fetch("Paris", "2024-12-31");
  t.value = 1;
  auto again = client.fetch("Paris", "2024-12-31");
  EXPECT_EQ(again.hits, 12345u);
  EXPECT_EQ(t.calls, 1u);
  // Different snapshot is never served from the cache.
  EXPECT_EQ(client.fetch("Paris", "2018-12-31").hits, 1u);
  EXPECT_EQ(t.calls, 2u);
}

TEST(search_client, cache_persists_across_instances) {
  temp_dir tmp;
  {
    hit_cache cache(tmp / "cache.tsv");
    stub_transport t;
    search_client client(t, cache, fast_options());
    client.fetch("Paris", "2024-12-31");
  }
  hit_cache reloaded(tmp / "cache.tsv");
  EXPECT_EQ(reloaded.get("Paris", "2024-12-31"), 12345u);
  EXPECT_FALSE(reloaded.get("Paris", "2018-12-31"));
  stub_transport t;
  search_client client(t, reloaded, fast_options());
  EXPECT_EQ(client.fetch("Paris", "2024-12-31").hits, 12345u);
  EXPECT_EQ(t.calls, 0u);
}

TEST(search_client, transient_failures_retry_with_backoff) {
  stub_transport t;
  t.transient_failures = 2;
  hit_cache cache;
  std::vector<long long> sleeps;
  auto opts = fast_options();
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  search_client client(t, cache, opts);
  EXPECT_EQ(client.fetch("Paris", "2024-12-31").hits, 12345u);
  EXPECT_EQ(t.calls, 3u);
  EXPECT_EQ(sleeps, (std::vector<long long>{500, 1000}));
}

TEST(search_client, retries_are_bounded) {
  stub_transport t;
  t.transient_failures = 100;
  hit_cache cache;
  search_client client(t, cache, fast_options());
  EXPECT_THROW(client.fetch("Paris", "2024-12-31"), transport_failure);
  EXPECT_EQ(t.calls, 5u);
}

TEST(search_client, quota_mid_batch_leaves_checkpoint) {
  stub_transport t;
  t.quota_after = 40;
  hit_cache cache;
  search_client client(t, cache, fast_options());
  std::vector<std::string> entities;
  for (int i = 0; i < 100; ++i) entities.push_back("entity " + std::to_string(i));
  auto r = client.fetch_batch(entities, "2024-12-31");
  EXPECT_EQ(r.stop, batch_stop::quota_exhausted);
  EXPECT_EQ(r.records.size(), 40u);
  ASSERT_EQ(r.remaining.size(), 60u);
  EXPECT_EQ(r.remaining.front(), "entity 40");
  EXPECT_EQ(r.remaining.back(), "entity 99");
  EXPECT_EQ(t.calls, 41u);
}

TEST(search_client, rejects_bad_inputs) {
  stub_transport t;
  hit_cache cache;
  search_client client(t, cache, fast_options());
  EXPECT_THROW(client.fetch("", "2024-12-31"), input_error);
  EXPECT_THROW(client.fetch("Paris", "2024-13-01"), input_error);
  EXPECT_THROW(client.fetch("Paris", "last year"), input_error);
}

TEST(search_request, query_and_response_shapes) {
  EXPECT_EQ(exact_phrase_query("New York"), "\"New York\"");
  EXPECT_EQ(exact_phrase_query("say \"hi\""), "\"say  hi \"");
  EXPECT_EQ(snapshot_date_restrict("2024-12-31"), "date:r:19000101:20241231");
  EXPECT_EQ(parse_search_response(R"({"searchInformation":{"totalResults":"4210000"}})"), 4210000u);
  EXPECT_EQ(parse_search_response(R"({"searchInformation":{"totalResults":"0"}})"), 0u);
  EXPECT_EQ(parse_search_response(R"({"kind":"customsearch#search"})"), 0u);
  EXPECT_THROW(parse_search_response(R"({"error":{"code":429,"message":"Quota exceeded"}})"), quota_exhausted);
  EXPECT_THROW(parse_search_response(R"({"error":{"code":403,"errors":[{"reason":"dailyLimitExceeded"}]}})"), quota_exhausted);
  EXPECT_THROW(parse_search_response(R"({"error":{"code":500}})"), transport_failure);
  EXPECT_THROW(parse_search_response("<html>"), transport_failure);
}

TEST(rate_limiter, spaces_requests) {
  using clock = rate_limiter::clock;
  clock::time_point now{};
  clock::duration slept{0};
  rate_limiter limiter(
      2.0, [&] { return now; }, [&](clock::duration d) { slept += d, now += d; });
  limiter.acquire();
  limiter.acquire();
  limiter.acquire();
  EXPECT_EQ(std::chrono::duration_cast<std::chrono::milliseconds>(slept).count(), 1000);
}

TEST(compare_snapshots, drift_cases) {
  std::vector<frequency_record> a = {{"w", "s", "2018", 1}, {"x", "s", "2018", 2}, {"y", "s", "2018", 3}, {"z", "s", "2018", 4}};
  EXPECT_EQ(compare_snapshots(a, a).count(), 0u);
  auto b = a;
  b[0].hits = 10;  // w jumps above everyone else
  auto drift = compare_snapshots(a, b);
  // Before: w1 x2 y3 z4. After: x1 y2 z3 w4.
  EXPECT_EQ(drift.count(), 4u);
  auto e = a;
  e[3].hits = 400;  // already the top entity: no change
  EXPECT_EQ(compare_snapshots(a, e).count(), 0u);
}

TEST(compare_snapshots, four_entities_one_crossing) {
  // Hits 1,1,2,3 put w,x in bin 1, y in bin 3, z in bin 4. Dropping y to 1 joins the bin-1 tie.
  std::vector<frequency_record> a = {{"w", "s", "v", 1}, {"x", "s", "v", 1}, {"y", "s", "v", 2}, {"z", "s", "v", 3}};
  auto b = a;
  b[2].hits = 1;
  auto drift = compare_snapshots(a, b);
  ASSERT_EQ(drift.count(), 1u);
  EXPECT_EQ(drift.changes[0].entity, "y");
  EXPECT_EQ(drift.changes[0].bin_a, 3);
  EXPECT_EQ(drift.changes[0].bin_b, 1);
}

TEST(compare_snapshots, one_boundary_crossing) {
  // 8 entities; bins {1,2},{3,4},{5,6},{7,8}. Lifting the 4 to 4.5 cannot cross; lifting it past 5 swaps two bins.
  std::vector<frequency_record> a;
  for (int i = 1; i <= 8; ++i) a.push_back({"e" + std::to_string(i), "s", "v", static_cast<std::uint64_t>(i * 10)});
  auto b = a;
  b[3].hits = 45;  // e4 stays below e5
  EXPECT_EQ(compare_snapshots(a, b).count(), 0u);
  auto c = a;
  c[2].hits = 41;  // e3 overtakes e4 inside bin 2
  EXPECT_EQ(compare_snapshots(a, c).count(), 0u);
  auto d = a;
  d[3].hits = 55;  // e4 overtakes e5: e4 -> bin 3, e5 -> bin 2
  EXPECT_EQ(compare_snapshots(a, d).count(), 2u);
}

TEST(compare_snapshots, mismatched_sets_list_difference) {
  std::vector<frequency_record> a = {{"x", "s", "v", 1}, {"y", "s", "v", 2}, {"q", "s", "v", 1}, {"r", "s", "v", 1}};
  auto b = a;
  b[0].entity = "x2";
  try {
    compare_snapshots(a, b);
    FAIL();
  } catch (const input_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("'x'"), std::string::npos);
    EXPECT_NE(msg.find("'x2'"), std::string::npos);
  }
}
