#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/rank_stats.hpp"

using namespace tailtype;
namespace fs = std::filesystem;

namespace {

const std::string demo = TAILTYPE_DEMO_DIR;

struct run_result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded.
run_result cli(const std::string& args) {
  run_result r;
  std::string cmd = std::string(TAILTYPE_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string vocab_args() { return " --vocab " + demo + "/labels.txt --granularity " + demo + "/granularity.tsv"; }

}  // namespace

TEST(cli, usage_errors_exit_2) {
  EXPECT_EQ(cli("--no-such-flag").code, 2);
  EXPECT_EQ(cli("stats spearman --x 1,2").code, 2);
  EXPECT_EQ(cli("eval --dataset /nonexistent --preds x --bins y" + vocab_args()).code, 2);
}

TEST(cli, spearman) {
  testing_util::temp_dir d;
  auto x = d.file("x.txt", "1\n2\n2\n4\n");
  auto y = d.file("y.txt", "1\n3\n2\n4\n");
  auto r = cli("stats spearman --x " + x + " --y " + y);
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), 4.5 / std::sqrt(22.5), 1e-12);
  auto flat = d.file("flat.txt", "3\n3\n3\n3\n");
  r = cli("stats spearman --x " + x + " --y " + flat);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "NA\n");
  auto short_y = d.file("short.txt", "1\n2\n");
  EXPECT_EQ(cli("stats spearman --x " + x + " --y " + short_y).code, 2);
}

TEST(cli, dead_scorer_exits_3) {
  testing_util::temp_dir d;
  auto r = cli("salience --contexts " + demo + "/contexts.jsonl --scorer 'cmd:exit 0' --out " + (d / "s"));
  EXPECT_EQ(r.code, 3);
}

TEST(cli, demo_pipeline) {
  testing_util::temp_dir d;
  auto freq = d / "freq.tsv";
  ASSERT_EQ(cli("freq count --corpus " + demo + "/corpus --entities " + demo + "/entities.txt --out " + freq).code, 0);
  auto records = load_frequency_records(freq);
  EXPECT_EQ(records.size(), 16u);

  auto bins = d / "bins.tsv";
  ASSERT_EQ(cli("bins assign --freq " + freq + " --k 4 --out " + bins + " --dataset " + demo + "/test.jsonl").code, 0);
  EXPECT_TRUE(fs::exists(bins + ".meta"));
  auto loaded = load_bins(bins);
  EXPECT_EQ(loaded.k, 4);
  EXPECT_EQ(loaded.bins.size(), 16u);

  auto scorer = " --scorer bigram:" + demo + "/bigram_corpus.txt";
  auto sal = d / "sal";
  ASSERT_EQ(cli("salience --contexts " + demo + "/contexts.jsonl" + scorer + " --out " + sal).code, 0);
  EXPECT_TRUE(fs::exists(sal + ".estimates.tsv"));
  auto corr = cli("correlate --salience " + sal + ".means.tsv --freq " + freq);
  ASSERT_EQ(corr.code, 0);
  EXPECT_FALSE(corr.out.empty());

  auto preds = d / "hearst.jsonl";
  ASSERT_EQ(cli("baseline hearst --dataset " + demo + "/test.jsonl --presets " + demo + "/presets.tsv --template period" +
                vocab_args() + scorer + " --out " + preds)
                .code,
            0);
  auto ev = d / "eval";
  ASSERT_EQ(cli("eval --dataset " + demo + "/test.jsonl --preds " + preds + " --bins " + bins + vocab_args() +
                " --system hearst --out " + ev)
                .code,
            0);
  auto rep = d / "report";
  ASSERT_EQ(cli("report --metrics hearst=" + ev + "/metrics_hearst.tsv --salience " + sal + ".means.tsv --estimates " +
                sal + ".estimates.tsv --freq " + freq + " --bins " + bins + " --dataset " + demo + "/test.jsonl --out " +
                rep)
                .code,
            0);
  auto manifest = slurp(rep + "/manifest.tsv");
  for (const char* f : {"bin_f1.svg", "hits_vs_salience.svg", "split_ratio.svg", "bin_distribution.svg"})
    EXPECT_NE(manifest.find(f), std::string::npos) << f;
  EXPECT_NE(manifest.find("spearman_rho"), std::string::npos);
}

TEST(cli, fewshot_prompts_are_reproducible) {
  testing_util::temp_dir a, b;
  auto args = "baseline fewshot --train " + demo + "/train.jsonl --dataset " + demo + "/test.jsonl --k 5 --seed 11 --emit-prompts ";
  ASSERT_EQ(cli(args + a.path().string()).code, 0);
  ASSERT_EQ(cli(args + b.path().string()).code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a.path())) {
    ++n;
    EXPECT_EQ(slurp(e.path().string()), slurp((b.path() / e.path().filename()).string())) << e.path();
  }
  EXPECT_GT(n, 0u);
}

TEST(cli, fewshot_recorded_responses_and_eval) {
  testing_util::temp_dir d;
  std::string responses;
  for (int i = 0; i < 18; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "t%03d", i);
    for (int run = 0; run < 2; ++run)
      responses += std::string("{\"ex_id\": \"") + id + "\", \"run_id\": \"" + std::to_string(run) +
                   "\", \"text\": \"{\\\"predicted_types\\\": [\\\"person\\\"]}\"}\n";
  }
  auto resp = d.file("responses.jsonl", responses);
  auto preds = d / "fewshot.jsonl";
  ASSERT_EQ(cli("--runs 2 baseline fewshot --train " + demo + "/train.jsonl --dataset " + demo + "/test.jsonl --k 3" + vocab_args() +
                " --responses " + resp + " --out " + preds)
                .code,
            0);
  auto vocab = load_type_vocabulary(demo + "/labels.txt", demo + "/granularity.tsv");
  auto recs = load_predictions(preds, vocab);
  ASSERT_EQ(recs.records.size(), 36u);
  EXPECT_EQ(recs.records.back().run_id, "1");
  EXPECT_EQ(recs.records.back().predicted_types, (label_set{"person"}));
}
