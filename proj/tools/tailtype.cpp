#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tailtype/net.hpp"
#include "tailtype/tailtype.hpp"

namespace fs = std::filesystem;
using namespace tailtype;

namespace {

struct globals {
  std::uint64_t seed = 7;
  int runs = 1;
  bool fold_case = false;
  unsigned threads = 0;
};

void say(const std::string& msg) { std::cerr << msg << '\n'; }

void write_or_print(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-")
    std::cout << content;
  else
    write_file(path, content);
}

std::vector<std::string> read_entity_list(const std::string& path) {
  std::vector<std::string> out;
  for (const auto& line : read_lines(path)) {
    auto e = str::normalize_ws(line);
    if (!e.empty()) out.push_back(e);
  }
  return out;
}

// `prefix tokens<TAB>token<TAB>probability`; the prefix may be empty.
std::unique_ptr<scorer> load_table_scorer(const std::string& path) {
  std::vector<table_scorer::entry> entries;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty() || lines[i][0] == '#') continue;
    auto f = str::split(lines[i], '\t');
    auto where = path + ":" + std::to_string(i + 1);
    if (f.size() != 3) throw input_error(where + ": expected prefix<TAB>token<TAB>probability");
    entries.push_back({str::split_ws(f[0]), std::string(str::trim(f[1])), parse_double(f[2], where)});
  }
  return std::make_unique<table_scorer>(std::move(entries), 1e-3);
}

// uniform:V | bigram:FILE | table:FILE | cmd:COMMAND | http://HOST:PORT
std::unique_ptr<scorer> make_scorer(const std::string& spec) {
  auto colon = spec.find(':');
  auto kind = spec.substr(0, colon);
  auto arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
  if (kind == "uniform") return std::make_unique<uniform_scorer>(parse_u64(arg.empty() ? "100" : arg, "uniform vocabulary size"));
  if (kind == "bigram") return std::make_unique<bigram_scorer>(read_lines(arg));
  if (kind == "table") return load_table_scorer(arg);
  if (kind == "cmd") return std::make_unique<remote_scorer>(std::make_unique<subprocess_channel>(arg));
  if (kind == "http" || kind == "https") return std::make_unique<remote_scorer>(std::make_unique<http_channel>(spec));
  throw input_error("unknown scorer '" + spec + "' (uniform:V, bigram:FILE, table:FILE, cmd:COMMAND, http://HOST:PORT)");
}

std::vector<std::unique_ptr<scorer>> make_pool(const std::string& spec, std::size_t workers) {
  std::vector<std::unique_ptr<scorer>> pool;
  for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) pool.push_back(make_scorer(spec));
  return pool;
}

type_vocabulary load_vocab(const std::string& labels, const std::string& granularity) {
  return load_type_vocabulary(labels, granularity);
}

std::vector<typing_example> load_examples(const std::string& path, const std::string& format) {
  auto fmt = format == "ontonotes" ? dataset_format::ontonotes_jsonl : dataset_format::ufet_jsonl;
  if (format != "ufet" && format != "ontonotes") throw input_error("unknown dataset format '" + format + "'");
  auto load = load_dataset(path, fmt);
  for (const auto& e : load.errors) say(path + ":" + std::to_string(e.line) + ": " + e.message);
  if (!load.errors.empty())
    throw input_error(path + ": " + std::to_string(load.errors.size()) + " malformed record(s)");
  return load.examples;
}

std::map<std::string, std::vector<metric_block>> parse_named_tables(const std::vector<std::string>& specs) {
  std::map<std::string, std::vector<metric_block>> out;
  for (const auto& s : specs) {
    auto eq = s.find('=');
    auto name = eq == std::string::npos ? fs::path(s).stem().string() : s.substr(0, eq);
    auto path = eq == std::string::npos ? s : s.substr(eq + 1);
    out[name] = parse_metric_table(read_file(path));
  }
  return out;
}

// Either `key<TAB>value` lines (joined by key) or one value per line (joined by position).
std::map<std::string, double> read_keyed_values(const std::string& path, bool& keyed) {
  std::map<std::string, double> out;
  auto lines = read_lines(path);
  std::size_t row = 0;
  keyed = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (str::trim(lines[i]).empty()) continue;
    auto f = str::split(lines[i], '\t');
    auto where = path + ":" + std::to_string(i + 1);
    if (f.size() >= 2) {
      keyed = true;
      if (!out.emplace(str::normalize_ws(f[0]), parse_double(f[1], where)).second)
        throw input_error(where + ": duplicate key '" + f[0] + "'");
    } else {
      char key[32];
      std::snprintf(key, sizeof key, "%020zu", row);
      out.emplace(key, parse_double(f[0], where));
    }
    ++row;
  }
  return out;
}

// ---------------------------------------------------------------------------------------

struct freq_count_args {
  std::vector<std::string> corpus;
  std::string entities, mode = "word-boundary", source = "corpus", snapshot = "static", out;
  std::size_t chunk_mb = 16, budget_mb = 1024;
};

int run_freq_count(const globals& g, const freq_count_args& a) {
  auto mode = parse_match_mode(a.mode);
  if (!mode) throw input_error("unknown match mode '" + a.mode + "'");
  corpus_stream corpus;
  if (a.corpus.size() == 1 && fs::is_directory(a.corpus[0]))
    corpus = corpus_stream::from_directory(a.corpus[0]);
  else
    corpus = corpus_stream::from_files(std::vector<fs::path>(a.corpus.begin(), a.corpus.end()));
  count_options opts;
  opts.mode = *mode;
  opts.fold_case = g.fold_case;
  opts.threads = g.threads;
  opts.chunk_bytes = a.chunk_mb << 20;
  opts.memory_budget_bytes = static_cast<std::uint64_t>(a.budget_mb) << 20;
  auto entities = read_entity_list(a.entities);
  auto t0 = std::chrono::steady_clock::now();
  auto counts = count_corpus_hits(corpus, entities, opts);
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<frequency_record> records;
  for (const auto& [e, n] : counts) records.push_back({e, a.source, a.snapshot, n});
  write_or_print(a.out, serialize_frequency_records(records));
  say("counted " + std::to_string(records.size()) + " entities over " + std::to_string(corpus.total_bytes()) +
      " bytes in " + fmt_double(secs, 2) + " s");
  return 0;
}

struct freq_fetch_args {
  std::string entities, snapshot, cache, out, checkpoint;
  double rps = 1.0;
  int max_attempts = 5;
  bool cache_only = false;
};

class cache_only_transport : public search_transport {
 public:
  std::uint64_t total_results(const search_query& q) override {
    throw transport_failure("'" + q.entity + "' is not cached for " + q.snapshot);
  }
};

int run_freq_fetch(const freq_fetch_args& a) {
  hit_cache cache(a.cache.empty() ? fs::path() : fs::path(a.cache));
  search_options opts;
  opts.max_attempts = a.cache_only ? 1 : a.max_attempts;
  opts.requests_per_second = a.rps;
  rate_limiter limiter(a.rps);
  std::unique_ptr<search_transport> transport;
  if (a.cache_only)
    transport = std::make_unique<cache_only_transport>();
  else
    transport = std::make_unique<custom_search_transport>(custom_search_transport::from_env());
  search_client client(*transport, cache, opts, &limiter);
  auto result = client.fetch_batch(read_entity_list(a.entities), a.snapshot);
  write_or_print(a.out, serialize_frequency_records(result.records));
  say("fetched " + std::to_string(result.records.size()) + " records, " + std::to_string(result.network_calls) +
      " network calls");
  if (result.stop == batch_stop::completed) return 0;
  say(result.message);
  auto checkpoint = a.checkpoint.empty() ? a.entities + ".remaining" : a.checkpoint;
  write_file(checkpoint, str::join(result.remaining, "\n") + "\n");
  say("stopped with " + std::to_string(result.remaining.size()) + " entities remaining; checkpoint: " + checkpoint);
  return static_cast<int>(exit_code::protocol);
}

int run_freq_drift(const std::string& a, const std::string& b, int k, const std::string& out) {
  auto report = compare_snapshots(load_frequency_records(a), load_frequency_records(b),
                                  [k](const std::vector<frequency_record>& r) { return assign_bins(r, k); });
  std::string text = "entity\tbin_a\tbin_b\n";
  for (const auto& c : report.changes) text += c.entity + '\t' + std::to_string(c.bin_a) + '\t' + std::to_string(c.bin_b) + '\n';
  write_or_print(out, text);
  say(std::to_string(report.count()) + " entities changed bin");
  return 0;
}

int run_bins_assign(const std::string& freq, int k, const std::string& out, const std::string& dataset,
                    const std::string& format) {
  auto bins = assign_bins(load_frequency_records(freq), k);
  write_or_print(out, serialize_bins(bins));
  if (!out.empty() && out != "-") write_file(out + ".meta", serialize_bin_thresholds(bins));
  std::string thresholds;
  for (double t : bins.thresholds) thresholds += (thresholds.empty() ? "" : ", ") + fmt_g(t, 10);
  say("thresholds: " + thresholds);
  if (!dataset.empty()) {
    auto counts = example_counts_per_bin(bins, load_examples(dataset, format));
    for (std::size_t i = 0; i < counts.size(); ++i) say("bin " + std::to_string(i + 1) + ": " + std::to_string(counts[i]) + " examples");
  }
  return 0;
}

int run_spearman(const std::string& xf, const std::string& yf) {
  bool kx = false, ky = false;
  auto x = read_keyed_values(xf, kx);
  auto y = read_keyed_values(yf, ky);
  if (kx != ky) throw input_error("--x and --y must both be keyed or both be plain value lists");
  if (x.size() != y.size()) throw input_error("--x and --y have different lengths");
  std::vector<double> xs, ys;
  for (const auto& [key, v] : x) {
    auto it = y.find(key);
    if (it == y.end()) throw input_error("key '" + key + "' missing from " + yf);
    xs.push_back(v);
    ys.push_back(it->second);
  }
  if (xs.size() < 2) throw input_error("spearman needs at least 2 pairs");
  auto rho = spearman(xs, ys);
  std::cout << (rho ? fmt_g(*rho, 17) : std::string("NA")) << '\n';
  if (!rho) say("rank variance is zero; correlation undefined");
  return 0;
}

struct salience_args {
  std::string contexts, entities, scorer = "bigram", strategy = "mlm-equal-masks", out = "salience";
  std::size_t workers = 1, generate = 0;
  bool geometric = false;
};

int run_salience(const salience_args& a) {
  auto strategy = parse_strategy(a.strategy);
  if (!strategy) throw input_error("unknown strategy '" + a.strategy + "'");
  auto pool = make_pool(a.scorer, a.workers);
  std::vector<context_set> sets;
  if (!a.contexts.empty()) {
    sets = load_context_sets(a.contexts);
  } else {
    if (a.entities.empty() || !a.generate) throw input_error("give --contexts, or --entities with --generate N");
    if (!pool[0]->can_generate_contexts()) throw input_error("scorer cannot generate contexts");
    for (const auto& e : read_entity_list(a.entities)) {
      context_set cs{e, {}};
      for (auto& s : pool[0]->generate_contexts(e, a.generate))
        if (str::contains(s, e)) cs.sentences.push_back(std::move(s));
      if (cs.sentences.size() < a.generate)
        say("'" + e + "': " + std::to_string(cs.sentences.size()) + " of " + std::to_string(a.generate) + " generated contexts usable");
      sets.push_back(std::move(cs));
    }
  }
  std::vector<scorer*> raw;
  for (auto& s : pool) raw.push_back(s.get());
  auto records = score_salience(sets, raw, *strategy, a.geometric ? context_averaging::geometric : context_averaging::arithmetic);
  for (const auto& r : records)
    for (const auto& e : r.estimates)
      for (double lp : e.token_logprobs)
        if (!(e.log_prob <= lp + 1e-12)) throw invariant_error("product bound violated for '" + r.entity + "'");
  write_file(a.out + ".estimates.tsv", serialize_salience_estimates(records));
  write_file(a.out + ".means.tsv", serialize_salience_means(records));
  say("scored " + std::to_string(records.size()) + " entities -> " + a.out + ".estimates.tsv, " + a.out + ".means.tsv");
  return 0;
}

int run_correlate(const std::string& salience, const std::string& freq) {
  auto rho = correlate_salience_with_hits(load_salience_means(salience), load_frequency_records(freq));
  std::cout << (rho ? fmt_g(*rho, 17) : std::string("NA")) << '\n';
  return 0;
}

struct hearst_args {
  std::string dataset, format = "ufet", labels, granularity, template_name = "inserted", presets, scorer, out;
  std::size_t n = 0;
};

hearst_template pick_template(const std::string& presets_file, const std::string& name) {
  auto presets = presets_file.empty() ? hearst_presets() : load_hearst_presets(presets_file);
  for (const auto& t : presets)
    if (t.name == name || to_string(t.placement) == name) return t;
  throw input_error("no template named '" + name + "'");
}

int run_hearst(const hearst_args& a) {
  auto t = pick_template(a.presets, a.template_name);
  if (a.n) t.n = a.n;
  auto vocab = load_vocab(a.labels, a.granularity);
  auto model = make_scorer(a.scorer);
  std::string out;
  std::size_t short_count = 0;
  for (const auto& ex : load_examples(a.dataset, a.format)) {
    auto r = hearst_predict(ex, t, *model, vocab);
    if (r.short_of_n) ++short_count;
    out += serialize_prediction({ex.example_id, "0", r.labels}) + '\n';
  }
  write_or_print(a.out, out);
  if (short_count) say(std::to_string(short_count) + " example(s) had fewer than n=" + std::to_string(t.n) + " in-vocabulary candidates");
  return 0;
}

struct fewshot_args {
  std::string train, dataset, format = "ufet", labels, granularity, out, scorer, responses, emit_prompts;
  std::size_t k = 15;
};

int run_fewshot(const globals& g, const fewshot_args& a) {
  auto pool = load_examples(a.train, a.format);
  auto targets = load_examples(a.dataset, a.format);
  if (!a.emit_prompts.empty()) {
    fs::create_directories(a.emit_prompts);
    for (int run = 0; run < g.runs; ++run)
      for (const auto& ex : targets) {
        auto p = build_fewshot_prompt(pool, a.k, ex, g.seed + static_cast<std::uint64_t>(run));
        write_file((fs::path(a.emit_prompts) / ("run" + std::to_string(run) + "_" + file_stem(ex.example_id) + ".txt")).string(),
                   p.render());
      }
    say("wrote prompts for " + std::to_string(targets.size()) + " examples x " + std::to_string(g.runs) + " runs");
    if (a.scorer.empty() && a.responses.empty()) return 0;
  }
  auto vocab = load_vocab(a.labels, a.granularity);

  // Pre-recorded responses: {"ex_id", "run_id", "text"} per line.
  std::map<std::pair<std::string, std::string>, std::string> recorded;
  if (!a.responses.empty()) {
    auto lines = read_lines(a.responses);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      try {
        auto obj = nlohmann::json::parse(lines[i]);
        recorded[{obj.at("ex_id").get<std::string>(), obj.value("run_id", std::string("0"))}] = obj.at("text").get<std::string>();
      } catch (const std::exception& e) {
        throw input_error(a.responses + ":" + std::to_string(i + 1) + ": " + e.what());
      }
    }
  }
  std::unique_ptr<scorer> model;
  if (!a.scorer.empty()) {
    model = make_scorer(a.scorer);
    if (!model->can_generate()) throw input_error("scorer '" + model->model_id() + "' does not support text generation");
  }
  if (!model && recorded.empty()) throw input_error("few-shot needs --scorer, --responses or --emit-prompts");

  std::string out;
  std::size_t failures = 0, dropped = 0;
  for (int run = 0; run < g.runs; ++run) {
    auto run_id = std::to_string(run);
    for (const auto& ex : targets) {
      std::string raw;
      if (auto it = recorded.find({ex.example_id, run_id}); it != recorded.end()) {
        raw = it->second;
      } else if (model) {
        auto p = build_fewshot_prompt(pool, a.k, ex, g.seed + static_cast<std::uint64_t>(run));
        raw = model->generate(p.system, p.user_text());
      } else {
        throw input_error("no recorded response for '" + ex.example_id + "' run " + run_id);
      }
      auto parsed = parse_typing_response(raw, vocab);
      if (parsed.parse_failed) ++failures;
      dropped += parsed.dropped_out_of_vocab;
      out += serialize_prediction({ex.example_id, run_id, parsed.labels}) + '\n';
    }
  }
  write_or_print(a.out, out);
  say("parse failures: " + std::to_string(failures) + ", out-of-vocabulary labels dropped: " + std::to_string(dropped));
  return 0;
}

struct eval_args {
  std::string dataset, format = "ufet", preds, bins, labels, granularity, out, system = "system", empty_preds = "exclude";
};

int run_eval(const eval_args& a) {
  auto vocab = load_vocab(a.labels, a.granularity);
  auto dataset = load_examples(a.dataset, a.format);
  auto ids = example_ids(dataset);
  auto preds = load_predictions(a.preds, vocab, &ids);
  for (const auto& w : preds.warnings) say(a.preds + ":" + std::to_string(w.line) + ": " + w.message);
  if (preds.drop_count()) say(std::to_string(preds.drop_count()) + " out-of-vocabulary predicted label(s) dropped");
  auto bins = load_bins(a.bins);
  if (a.empty_preds != "exclude" && a.empty_preds != "zero") throw input_error("--empty-preds must be exclude or zero");
  auto policy = a.empty_preds == "zero" ? empty_prediction_policy::count_as_zero : empty_prediction_policy::exclude;
  auto result = evaluate_runs(dataset, preds.records, bins, vocab, policy);
  for (const auto& r : result.runs) check_metric_invariants(r);
  auto missing = result.runs.front().missing_predictions;
  if (missing) say(std::to_string(missing) + " example(s) without predictions scored as empty");

  auto table = metric_table(result.aggregate);
  if (a.out.empty()) {
    std::cout << table;
  } else {
    fs::create_directories(a.out);
    auto stem = file_stem(a.system);
    write_file((fs::path(a.out) / ("metrics_" + stem + ".tsv")).string(), table);
    write_file((fs::path(a.out) / ("metrics_" + stem + ".txt")).string(), metric_table_text(result.aggregate, missing));
    for (std::size_t i = 0; i < result.runs.size() && result.runs.size() > 1; ++i)
      write_file((fs::path(a.out) / ("metrics_" + stem + "_run" + file_stem(result.run_ids[i]) + ".tsv")).string(),
                 metric_table(result.runs[i].blocks));
  }
  std::cerr << metric_table_text(result.aggregate, missing);
  return 0;
}

struct tune_args {
  std::string dev, format = "ufet", labels, granularity, presets, scorer, n_range = "1:20", out;
};

int run_tune(const tune_args& a) {
  auto colon = a.n_range.find(':');
  std::size_t lo = 0, hi = 0;
  if (colon == std::string::npos) {
    lo = hi = parse_u64(a.n_range, "--n-range");
  } else {
    lo = parse_u64(a.n_range.substr(0, colon), "--n-range");
    hi = parse_u64(a.n_range.substr(colon + 1), "--n-range");
  }
  if (lo < 1 || hi < lo) throw input_error("--n-range must be LO:HI with 1 <= LO <= HI");
  std::vector<std::size_t> ns;
  for (auto n = lo; n <= hi; ++n) ns.push_back(n);
  auto templates = a.presets.empty() ? hearst_presets() : load_hearst_presets(a.presets);
  auto model = make_scorer(a.scorer);
  auto r = tune_hearst(load_examples(a.dev, a.format), templates, ns, *model, load_vocab(a.labels, a.granularity));
  write_or_print(a.out, tuning_table(r));
  auto best = r.best_template();
  say("best: " + best.name + " (" + to_string(best.placement) + "), n=" + std::to_string(best.n) + ", F1=" +
      fmt_double(r.best.overall.f1, 4));
  return 0;
}

struct report_args {
  std::vector<std::string> metrics;
  std::string salience, estimates, freq, bins, dataset, format = "ufet", out = "report", model = "model";
  double bucket = 0.5;
};

int run_report(const report_args& a) {
  report_bundle b;
  b.metrics = parse_named_tables(a.metrics);
  if (!a.salience.empty()) {
    if (a.freq.empty()) throw input_error("--salience needs --freq for the scatter plot");
    auto sal = load_salience_means(a.salience);
    auto freq = load_frequency_records(a.freq);
    b.rho = correlate_salience_with_hits(sal, freq);
    std::map<std::string, std::uint64_t> hits;
    for (const auto& f : freq) hits[f.entity] = f.hits;
    for (const auto& s : sal) b.scatter.push_back({s.entity, hits.at(s.entity), s.mean_probability});
  }
  if (!a.estimates.empty()) {
    std::vector<split_ratio_sample> samples;
    auto lines = read_lines(a.estimates);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (str::trim(lines[i]).empty()) continue;
      auto f = str::split(lines[i], '\t');
      auto where = a.estimates + ":" + std::to_string(i + 1);
      if (f.size() != 4) throw input_error(where + ": expected entity<TAB>context_id<TAB>n_tokens<TAB>log_prob");
      samples.push_back({split_ratio(f[0], parse_u64(f[2], where)), std::exp(parse_double(f[3], where))});
    }
    b.split_curves[a.model] = split_ratio_curve(samples, a.bucket);
  }
  if (!a.bins.empty() && !a.dataset.empty())
    b.bin_counts = example_counts_per_bin(load_bins(a.bins), load_examples(a.dataset, a.format));
  auto files = emit_report(b, a.out);
  say("report: " + std::to_string(files.figures.size()) + " figure(s), " + std::to_string(files.tables.size()) +
      " data table(s), " + std::to_string(files.metric_tables.size()) + " metric table(s) in " + a.out);
  if (b.rho) std::cout << "spearman_rho\t" << fmt_g(*b.rho, 17) << '\n';
  return 0;
}

int run_serve_stub(const std::string& spec, int http_port, const std::string& host) {
  auto model = make_scorer(spec);
  if (http_port < 0) {
    std::ios::sync_with_stdio(false);
    serve_stream(*model, std::cin, std::cout);
    return 0;
  }
  http_scorer_server server(*model);
  int port = http_port;
  if (http_port == 0) {
    port = server.bind_any_port(host);
    if (port <= 0) throw protocol_error("cannot bind " + host);
  } else if (!server.bind(host, http_port)) {
    throw protocol_error("cannot bind " + host + ":" + std::to_string(http_port));
  }
  std::cout << "listening http://" << host << ":" << port << std::endl;
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-stratified evaluation toolkit for ultra-fine entity typing"};
  app.require_subcommand(1);
  app.fallthrough();
  globals g;
  app.add_option("--seed", g.seed, "Seed for randomized selection")->capture_default_str();
  app.add_option("--runs", g.runs, "Number of repeated runs")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--fold-case", g.fold_case, "ASCII case-insensitive corpus matching");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)");

  auto* freq = app.add_subcommand("freq", "Entity frequency estimation")->require_subcommand(1);
  freq_count_args fc;
  auto* count = freq->add_subcommand("count", "Count exact phrase matches in a local corpus");
  count->add_option("--corpus", fc.corpus, "Corpus directory or shard files")->required();
  count->add_option("--entities", fc.entities, "One entity per line")->required();
  count->add_option("--mode", fc.mode, "word-boundary | substring")->capture_default_str();
  count->add_option("--source", fc.source)->capture_default_str();
  count->add_option("--snapshot", fc.snapshot)->capture_default_str();
  count->add_option("--chunk-mb", fc.chunk_mb)->capture_default_str();
  count->add_option("--memory-budget-mb", fc.budget_mb)->capture_default_str();
  count->add_option("--out", fc.out, "Output frequency records (default stdout)");

  freq_fetch_args ff;
  auto* fetch = freq->add_subcommand("fetch", "Query web-search hit counts (credentials from the environment)");
  fetch->add_option("--entities", ff.entities)->required();
  fetch->add_option("--snapshot", ff.snapshot, "Date cap YYYY-MM-DD")->required();
  fetch->add_option("--cache", ff.cache, "Persistent hit cache");
  fetch->add_option("--out", ff.out);
  fetch->add_option("--checkpoint", ff.checkpoint, "Where to write unfetched entities on early stop");
  fetch->add_option("--rps", ff.rps, "Requests per second")->capture_default_str();
  fetch->add_option("--max-attempts", ff.max_attempts)->capture_default_str();
  fetch->add_flag("--cache-only", ff.cache_only, "Never touch the network");

  std::string drift_a, drift_b, drift_out;
  int drift_k = 4;
  auto* drift = freq->add_subcommand("drift", "Entities whose bin changed between two snapshots");
  drift->add_option("--a", drift_a)->required();
  drift->add_option("--b", drift_b)->required();
  drift->add_option("--k", drift_k)->capture_default_str();
  drift->add_option("--out", drift_out);

  auto* bins = app.add_subcommand("bins", "Frequency binning")->require_subcommand(1);
  std::string bins_freq, bins_out, bins_dataset, bins_format = "ufet";
  int bins_k = 4;
  auto* assign = bins->add_subcommand("assign", "Quantile bins over unique entities");
  assign->add_option("--freq", bins_freq)->required();
  assign->add_option("--k", bins_k)->capture_default_str();
  assign->add_option("--out", bins_out);
  assign->add_option("--dataset", bins_dataset, "Report example counts per bin");
  assign->add_option("--format", bins_format)->capture_default_str();

  auto* stats = app.add_subcommand("stats", "Statistics")->require_subcommand(1);
  std::string sx, sy;
  auto* sp = stats->add_subcommand("spearman", "Spearman correlation with average ranks");
  sp->add_option("--x", sx)->required();
  sp->add_option("--y", sy)->required();

  salience_args sa;
  auto* sal = app.add_subcommand("salience", "Entity recovery probability per context");
  sal->add_option("--contexts", sa.contexts, "Context sets (jsonl)");
  sal->add_option("--entities", sa.entities, "Entities for generated contexts");
  sal->add_option("--generate", sa.generate, "Ask the scorer for N contexts per entity");
  sal->add_option("--scorer", sa.scorer, "uniform:V | bigram:FILE | table:FILE | cmd:COMMAND | http://HOST:PORT")->required();
  sal->add_option("--strategy", sa.strategy)->capture_default_str();
  sal->add_option("--workers", sa.workers, "Scorer connections")->capture_default_str();
  sal->add_flag("--geometric", sa.geometric, "Geometric mean over contexts");
  sal->add_option("--out", sa.out, "Output prefix")->capture_default_str();

  std::string cs, cf;
  auto* corr = app.add_subcommand("correlate", "Spearman between mean salience and hits");
  corr->add_option("--salience", cs)->required();
  corr->add_option("--freq", cf)->required();

  auto* base = app.add_subcommand("baseline", "Typing baselines")->require_subcommand(1);
  hearst_args ha;
  auto* hearst = base->add_subcommand("hearst", "Hearst-template mask prediction");
  hearst->add_option("--dataset", ha.dataset)->required();
  hearst->add_option("--format", ha.format)->capture_default_str();
  hearst->add_option("--vocab", ha.labels, "Label file")->required();
  hearst->add_option("--granularity", ha.granularity, "label<TAB>class file")->required();
  hearst->add_option("--template", ha.template_name)->capture_default_str();
  hearst->add_option("--presets", ha.presets, "Template preset file");
  hearst->add_option("--n", ha.n, "Override the preset n");
  hearst->add_option("--scorer", ha.scorer)->required();
  hearst->add_option("--out", ha.out);

  fewshot_args fa;
  auto* fewshot = base->add_subcommand("fewshot", "Few-shot prompting with structured output");
  fewshot->add_option("--train", fa.train, "Example pool")->required();
  fewshot->add_option("--dataset", fa.dataset, "Targets")->required();
  fewshot->add_option("--format", fa.format)->capture_default_str();
  fewshot->add_option("--vocab", fa.labels);
  fewshot->add_option("--granularity", fa.granularity);
  fewshot->add_option("--k", fa.k)->capture_default_str();
  fewshot->add_option("--scorer", fa.scorer, "Generator (cmd:COMMAND | http://HOST:PORT)");
  fewshot->add_option("--responses", fa.responses, "Recorded responses (jsonl: ex_id, run_id, text)");
  fewshot->add_option("--emit-prompts", fa.emit_prompts, "Write prompts to this directory");
  fewshot->add_option("--out", fa.out);

  eval_args ea;
  auto* ev = app.add_subcommand("eval", "Stratified P/R/F1 per bin and granularity");
  ev->add_option("--dataset", ea.dataset)->required();
  ev->add_option("--format", ea.format)->capture_default_str();
  ev->add_option("--preds", ea.preds)->required();
  ev->add_option("--bins", ea.bins)->required();
  ev->add_option("--vocab", ea.labels)->required();
  ev->add_option("--granularity", ea.granularity)->required();
  ev->add_option("--system", ea.system)->capture_default_str();
  ev->add_option("--empty-preds", ea.empty_preds, "exclude | zero")->capture_default_str();
  ev->add_option("--out", ea.out, "Output directory (default: table on stdout)");

  tune_args ta;
  auto* tune = app.add_subcommand("tune-hearst", "Grid search over templates and n on a dev split");
  tune->add_option("--dev", ta.dev)->required();
  tune->add_option("--format", ta.format)->capture_default_str();
  tune->add_option("--vocab", ta.labels)->required();
  tune->add_option("--granularity", ta.granularity)->required();
  tune->add_option("--presets", ta.presets);
  tune->add_option("--scorer", ta.scorer)->required();
  tune->add_option("--n-range", ta.n_range, "LO:HI")->capture_default_str();
  tune->add_option("--out", ta.out);

  report_args ra;
  auto* rep = app.add_subcommand("report", "Figures with data tables and a manifest");
  rep->add_option("--metrics", ra.metrics, "NAME=metrics.tsv (repeatable)");
  rep->add_option("--salience", ra.salience, "Per-entity mean salience");
  rep->add_option("--estimates", ra.estimates, "Per-context estimates (split-ratio curve)");
  rep->add_option("--freq", ra.freq);
  rep->add_option("--bins", ra.bins);
  rep->add_option("--dataset", ra.dataset);
  rep->add_option("--format", ra.format)->capture_default_str();
  rep->add_option("--model", ra.model, "Series name for the split-ratio curve")->capture_default_str();
  rep->add_option("--bucket", ra.bucket, "Split-ratio bucket width")->capture_default_str();
  rep->add_option("--out", ra.out)->capture_default_str();

  std::string stub_spec = "bigram", stub_host = "127.0.0.1";
  int stub_port = -1;
  auto* stub = app.add_subcommand("serve-stub", "Serve a built-in scorer over the line protocol");
  stub->add_option("--scorer", stub_spec, "uniform:V | bigram:FILE | table:FILE")->required();
  stub->add_option("--http", stub_port, "Serve HTTP on this port (0 = any) instead of stdio");
  stub->add_option("--host", stub_host)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    auto rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(exit_code::input_format);
  }

  try {
    if (*count) return run_freq_count(g, fc);
    if (*fetch) return run_freq_fetch(ff);
    if (*drift) return run_freq_drift(drift_a, drift_b, drift_k, drift_out);
    if (*assign) return run_bins_assign(bins_freq, bins_k, bins_out, bins_dataset, bins_format);
    if (*sp) return run_spearman(sx, sy);
    if (*sal) return run_salience(sa);
    if (*corr) return run_correlate(cs, cf);
    if (*hearst) return run_hearst(ha);
    if (*fewshot) return run_fewshot(g, fa);
    if (*ev) return run_eval(ea);
    if (*tune) return run_tune(ta);
    if (*rep) return run_report(ra);
    if (*stub) return run_serve_stub(stub_spec, stub_port, stub_host);
  } catch (const tailtype::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code::input_format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
