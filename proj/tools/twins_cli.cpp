// twins: command-line driver for data generation, ingestion, indexing,
// training, evaluation, ablation sweeps and single-pair scoring.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twins/co_retrieval.hpp"
#include "twins/data.hpp"
#include "twins/error.hpp"
#include "twins/metrics.hpp"
#include "twins/model.hpp"

namespace fs = std::filesystem;
using namespace twins;

namespace {

constexpr int kUsageExit = 2;
constexpr int kNumericExit = 3;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

// ---- shared option groups ---------------------------------------------------

struct DataFlags {
  std::string catalog;
  std::string pairs;
  std::size_t max_history = 200;

  void add(CLI::App* app, bool need_pairs = true) {
    app->add_option("--catalog", catalog, "Catalog JSONL")->required()->check(CLI::ExistingFile);
    auto* p = app->add_option("--pairs", pairs, "Labeled pairs JSONL")->check(CLI::ExistingFile);
    if (need_pairs) p->required();
    app->add_option("--max-history", max_history, "Keep this many most recent history events")
        ->capture_default_str();
  }

  Dataset load() const {
    IngestOptions opt;
    opt.max_history = max_history;
    std::ifstream cat(catalog, std::ios::binary);
    std::istringstream none;
    std::ifstream prs;
    if (!pairs.empty()) prs.open(pairs, std::ios::binary);
    auto ds = ingest_logs(cat, pairs.empty() ? static_cast<std::istream&>(none) : prs, opt);
    const auto skipped = ds.rejected_catalog_lines.size() + ds.rejected_pair_lines.size();
    if (skipped) std::cerr << "skipped " << skipped << " malformed line(s)\n";
    return ds;
  }
};

struct SplitFlags {
  std::vector<double> ratios{0.6, 0.2, 0.2};
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--split", ratios, "Train/validation/test ratios")
        ->expected(3)
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--split-seed", seed, "Split shuffle seed (defaults to --seed)");
  }

  DatasetSplit apply(const std::vector<LabeledPair>& pairs, std::uint64_t fallback) const {
    auto s = split_dataset(pairs, {ratios[0], ratios[1], ratios[2]}, seed.value_or(fallback));
    if (s.degenerate) std::cerr << "too few pairs to split; everything is training data\n";
    return s;
  }
};

void add_model_flags(CLI::App* app, TrainConfig& c, std::string& variant, std::string& optimizer) {
  app->add_option("--variant", variant, "full | no-item | no-anchor | co-retrieval")->capture_default_str();
  app->add_option("--dim", c.dim, "Embedding dimension")->capture_default_str();
  app->add_option("--k", c.co_retrieval_k, "Co-retrieval cap per side")->capture_default_str();
  app->add_flag("--literal-product", c.literal_product,
                "Use h_anchor * h_anchor in the item-aspect pair product");
  app->add_option("--lr-start", c.lr_start)->capture_default_str();
  app->add_option("--lr-end", c.lr_end)->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str();
  app->add_option("--l2", c.l2_weight, "L2 weight")->capture_default_str();
  app->add_option("--dropout", c.dropout)->capture_default_str();
  app->add_option("--epochs", c.epochs)->capture_default_str();
  app->add_option("--optimizer", optimizer, "sgd | adam")->capture_default_str();
  app->add_option("--clip-norm", c.clip_norm, "Global gradient norm clip")->capture_default_str();
  app->add_option("--threads", c.threads)->capture_default_str();
  app->add_option("--seed", c.seed)->capture_default_str();
}

void add_config_file(CLI::App* app) {
  app->add_option("--config", "Flat key=value file; flags on the command line win");
  app->add_flag("--print-config", "Print the effective settings as a config file and exit");
}

bool is_flag(const CLI::Option* opt) { return opt->get_expected_max() == 0; }

bool print_config_requested(CLI::App* app) {
  if (app->count("--print-config") == 0) return false;
  for (const CLI::Option* opt : app->get_options()) {
    const std::string key = opt->get_single_name();
    if (key == "help" || key == "help-all" || key == "config" || key == "print-config") continue;
    std::string value;
    if (is_flag(opt)) {
      value = opt->count() ? "true" : "false";
    } else if (opt->count()) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
      if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
    }
    if (value.empty()) continue;
    std::cout << key << '=' << value << '\n';
  }
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Splices `--key=value` arguments from a `--config` file into the command
/// line, skipping keys that are already given as flags.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty() || args.empty()) return args;
  std::ifstream in(file);
  if (!in) throw CLI::FileError::Missing(file);
  auto given = [&](const std::string& key) {
    for (const auto& a : args)
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> injected;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CLI::ConversionError(file + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (given(key)) continue;
    if (value == "false") continue;
    injected.push_back(value == "true" ? "--" + key : "--" + key + "=" + value);
  }
  // Subcommand name stays first so the injected flags bind to it.
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

void print_report(const EvalReport& r, const std::string& format) {
  if (format == "table")
    std::cout << r.to_table();
  else
    std::cout << r.to_json() << '\n';
}

RetrievalIndices indices_for(const Catalog& catalog, const std::string& dir) {
  if (dir.empty()) return RetrievalIndices::build(catalog);
  auto load = [&](const char* name, IndexSide side) {
    std::ifstream in(fs::path(dir) / name, std::ios::binary);
    if (!in) throw InputError("cannot read " + (fs::path(dir) / name).string());
    auto idx = KkvIndex::load(in);
    if (idx.side() != side || idx.owner_count() != (side == IndexSide::user ? catalog.users().size()
                                                                           : catalog.anchors().size()))
      throw InputError("index in " + dir + " does not match the catalog");
    return idx;
  };
  return {load("user.kkv", IndexSide::user), load("anchor.kkv", IndexSide::anchor)};
}

std::vector<int> labels_of(const std::vector<LabeledPair>& pairs) {
  std::vector<int> y;
  y.reserve(pairs.size());
  for (const auto& p : pairs) y.push_back(p.label);
  return y;
}

EvalReport evaluate(const Catalog& catalog, const ModelParams& params, const TrainConfig& config,
                    const std::vector<LabeledPair>& pairs, const RetrievalIndices* indices) {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = predict(catalog, params, config, pairs, indices);
  auto report = make_report(run.scores, labels_of(pairs));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!pairs.empty()) report.mean_pair_budget = static_cast<double>(run.stats.item_pairs) / pairs.size();
  return report;
}

// ---- commands -------------------------------------------------------------

struct GenerateCmd {
  SyntheticSpec spec;
  std::string out;
  std::size_t hist_min = 5, hist_max = 20;

  void add(CLI::App* app) {
    app->add_option("--out", out, "Output directory for catalog.jsonl and pairs.jsonl")->required();
    app->add_option("--users", spec.num_users)->capture_default_str();
    app->add_option("--anchors", spec.num_anchors)->capture_default_str();
    app->add_option("--items", spec.num_items)->capture_default_str();
    app->add_option("--categories", spec.num_categories)->capture_default_str();
    app->add_option("--num-pairs", spec.num_pairs)->capture_default_str();
    app->add_option("--history-min", hist_min)->capture_default_str();
    app->add_option("--history-max", hist_max)->capture_default_str();
    app->add_option("--max-interests", spec.max_interests)->capture_default_str();
    app->add_option("--focus", spec.focus)->capture_default_str();
    app->add_option("--signal", spec.signal_strength)->capture_default_str();
    app->add_option("--base-rate", spec.base_rate)->capture_default_str();
    app->add_option("--seed", spec.seed)->capture_default_str();
  }

  int run() {
    if (hist_min > hist_max) throw InputError("--history-min exceeds --history-max");
    spec.history_len_range = {hist_min, hist_max};
    auto data = generate_synthetic(spec);
    auto cat = open_out(fs::path(out) / "catalog.jsonl");
    write_catalog(cat, data.catalog);
    auto prs = open_out(fs::path(out) / "pairs.jsonl");
    write_pairs(prs, data.catalog, data.pairs);
    std::cout << (fs::path(out) / "catalog.jsonl").string() << '\n' << (fs::path(out) / "pairs.jsonl").string() << '\n';
    return 0;
  }
};

struct IngestCmd {
  std::string catalog, pairs, out, vocab;
  std::size_t max_history = 200;

  void add(CLI::App* app) {
    app->add_option("--catalog", catalog)->required()->check(CLI::ExistingFile);
    app->add_option("--pairs", pairs)->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output directory for the cleaned files")->required();
    app->add_option("--vocab", vocab, "Feature vocabulary file (read if present, then updated)");
    app->add_option("--max-history", max_history)->capture_default_str();
  }

  int run() {
    Vocabulary v;
    if (!vocab.empty() && fs::exists(vocab)) v = Vocabulary::load(vocab);
    IngestOptions opt;
    opt.max_history = max_history;
    opt.vocabulary = &v;
    auto ds = ingest_logs(catalog, pairs, opt);
    for (const auto& issue : ds.rejected_catalog_lines)
      std::cerr << catalog << ':' << issue.line << ": " << issue.message << '\n';
    for (const auto& issue : ds.rejected_pair_lines)
      std::cerr << pairs << ':' << issue.line << ": " << issue.message << '\n';
    auto cat = open_out(fs::path(out) / "catalog.jsonl");
    write_catalog(cat, ds.catalog);
    auto prs = open_out(fs::path(out) / "pairs.jsonl");
    write_pairs(prs, ds.catalog, ds.pairs);
    if (!vocab.empty()) v.save(vocab);
    nlohmann::ordered_json j;
    j["users"] = ds.catalog.users().size();
    j["anchors"] = ds.catalog.anchors().size();
    j["items"] = ds.catalog.items().size();
    j["pairs"] = ds.pairs.size();
    j["rejected_catalog_lines"] = ds.rejected_catalog_lines.size();
    j["rejected_pair_lines"] = ds.rejected_pair_lines.size();
    std::cout << j.dump() << '\n';
    return 0;
  }
};

struct IndexCmd {
  DataFlags data;
  std::string out;

  void add(CLI::App* app) {
    data.add(app, false);
    app->add_option("--out", out, "Output directory for user.kkv and anchor.kkv")->required();
  }

  int run() {
    auto ds = data.load();
    auto u = open_out(fs::path(out) / "user.kkv");
    KkvIndex::build(ds.catalog, IndexSide::user).save(u);
    auto a = open_out(fs::path(out) / "anchor.kkv");
    KkvIndex::build(ds.catalog, IndexSide::anchor).save(a);
    return 0;
  }
};

struct TrainCmd {
  DataFlags data;
  SplitFlags split;
  TrainConfig config;
  std::string variant = "full", optimizer = "sgd";
  std::string checkpoint, metrics, format = "json";
  bool log_wall_time = false, quiet = false;

  void add(CLI::App* app) {
    data.add(app);
    split.add(app);
    add_model_flags(app, config, variant, optimizer);
    app->add_option("--checkpoint", checkpoint, "Where to write the trained model")->required();
    app->add_option("--metrics", metrics, "Per-epoch metrics CSV");
    app->add_flag("--log-wall-time", log_wall_time, "Record real epoch durations in the metrics CSV");
    app->add_option("--format", format, "json | table")->check(CLI::IsMember({"json", "table"}));
    app->add_flag("--quiet", quiet, "No per-epoch progress on stderr");
  }

  int run() {
    config.variant = parse_variant(variant);
    config.optimizer = parse_optimizer(optimizer);
    config.validate();
    auto ds = data.load();
    auto parts = split.apply(ds.pairs, config.seed);

    std::ofstream csv;
    if (!metrics.empty()) {
      csv = open_out(metrics);
      csv << "epoch,lr,train_loss,val_auc,val_acc,val_logloss,wall_seconds\n";
    }
    auto on_epoch = [&](const EpochMetrics& m) {
      if (csv.is_open()) {
        csv << m.epoch << ',' << fmt(m.lr) << ',' << fmt(m.train_loss) << ',' << fmt(m.val_auc) << ','
            << fmt(m.val_acc) << ',' << fmt(m.val_logloss) << ',' << fmt(log_wall_time ? m.wall_seconds : 0.0)
            << '\n';
        csv.flush();
      }
      if (!quiet)
        std::cerr << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.train_loss << " val_auc "
                  << (m.val_auc ? std::to_string(*m.val_auc) : "n/a") << '\n';
    };
    auto result = train(ds.catalog, parts.train, parts.validation, config, on_epoch);
    save_checkpoint(fs::path(checkpoint), result.params, config);

    auto indices = RetrievalIndices::build(ds.catalog);
    if (!parts.validation.empty()) {
      auto report = evaluate(ds.catalog, result.params, config, parts.validation, &indices);
      if (!log_wall_time) report.wall_seconds = 0.0;
      print_report(report, format);
    }
    return 0;
  }
};

struct EvalCmd {
  DataFlags data;
  SplitFlags split;
  std::string checkpoint, which = "test", variant, format = "json", index_dir;
  std::optional<std::size_t> k;

  void add(CLI::App* app) {
    data.add(app);
    split.add(app);
    app->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    app->add_option("--on", which, "train | validation | test | all")
        ->check(CLI::IsMember({"train", "validation", "test", "all"}))
        ->capture_default_str();
    app->add_option("--variant", variant, "Override the checkpoint's variant");
    app->add_option("--k", k, "Override the co-retrieval cap");
    app->add_option("--index-dir", index_dir, "Prebuilt user.kkv / anchor.kkv");
    app->add_option("--format", format, "json | table")->check(CLI::IsMember({"json", "table"}));
  }

  int run() {
    auto ck = load_checkpoint(fs::path(checkpoint));
    if (!variant.empty()) ck.config.variant = parse_variant(variant);
    if (k) ck.config.co_retrieval_k = *k;
    ck.config.validate();
    auto ds = data.load();
    auto parts = split.apply(ds.pairs, ck.config.seed);
    const auto& pairs = which == "train" ? parts.train
                        : which == "validation" ? parts.validation
                        : which == "test" ? parts.test
                                           : ds.pairs;
    if (pairs.empty()) throw InputError("the " + which + " split is empty");
    auto indices = indices_for(ds.catalog, index_dir);
    auto report = evaluate(ds.catalog, ck.params, ck.config, pairs, &indices);
    report.wall_seconds = 0.0;
    print_report(report, format);
    return 0;
  }
};

struct ScoreCmd {
  DataFlags data;
  std::string checkpoint, variant, index_dir;
  ObjectId user = 0, anchor = 0;
  bool explain = false;

  void add(CLI::App* app) {
    data.add(app, false);
    app->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    app->add_option("--user", user)->required();
    app->add_option("--anchor", anchor)->required();
    app->add_option("--variant", variant, "Override the checkpoint's variant");
    app->add_option("--index-dir", index_dir, "Prebuilt user.kkv / anchor.kkv");
    app->add_flag("--explain", explain, "Also print the co-retrieval pair budget and shared categories");
  }

  int run() {
    auto ck = load_checkpoint(fs::path(checkpoint));
    if (!variant.empty()) ck.config.variant = parse_variant(variant);
    auto ds = data.load();
    auto indices = indices_for(ds.catalog, index_dir);
    std::cout << fmt(forward_pair(ds.catalog, ck.params, ck.config, user, anchor, Mode::eval, &indices)) << '\n';
    if (explain) {
      auto r = co_retrieve(indices.user, indices.anchor, ds.catalog.index_of(ObjectKind::user, user),
                           ds.catalog.index_of(ObjectKind::anchor, anchor), ck.config.co_retrieval_k);
      std::cout << "pair_budget " << pair_budget(r) << '\n' << "common_categories";
      for (auto c : r.common_categories) std::cout << ' ' << c;
      std::cout << '\n';
    }
    return 0;
  }
};

struct SweepCmd {
  DataFlags data;
  SplitFlags split;
  TrainConfig config;
  std::string variant = "full", optimizer = "sgd";
  std::vector<std::string> variants{"full", "no-item", "no-anchor", "co-retrieval"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool log_wall_time = false;

  void add(CLI::App* app) {
    data.add(app);
    split.add(app);
    add_model_flags(app, config, variant, optimizer);
    app->add_option("--variants", variants)->delimiter(',')->capture_default_str();
    app->add_option("--seeds", seeds)->delimiter(',')->capture_default_str();
    app->add_flag("--log-wall-time", log_wall_time, "Report real interaction time");
  }

  int run() {
    config.optimizer = parse_optimizer(optimizer);
    std::vector<Variant> parsed;
    for (const auto& v : variants) parsed.push_back(parse_variant(v));
    auto ds = data.load();
    auto indices = RetrievalIndices::build(ds.catalog);
    std::cout << "variant,seed,test_auc,test_acc,test_logloss,mean_pair_budget,interaction_seconds\n";
    for (auto seed : seeds) {
      auto parts = split.apply(ds.pairs, seed);
      for (auto v : parsed) {
        auto c = config;
        c.variant = v;
        c.seed = seed;
        c.validate();
        auto result = train(ds.catalog, parts.train, parts.validation, c);
        auto run = predict(ds.catalog, result.params, c, parts.test, &indices);
        auto report = make_report(run.scores, labels_of(parts.test));
        std::cout << to_string(v) << ',' << seed << ',' << fmt(report.auc) << ',' << fmt(report.acc) << ','
                  << fmt(report.logloss) << ','
                  << fmt(parts.test.empty() ? 0.0 : static_cast<double>(run.stats.item_pairs) / parts.test.size())
                  << ',' << fmt(log_wall_time ? run.item_interaction_seconds : 0.0) << '\n';
      }
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-side interaction model for live-stream recommendation", "twins"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenerateCmd generate;
  IngestCmd ingest;
  IndexCmd index;
  TrainCmd train_cmd;
  EvalCmd eval;
  ScoreCmd score;
  SweepCmd sweep;

  struct Entry {
    CLI::App* app;
    std::function<int()> run;
  };
  std::vector<Entry> commands;
  auto reg = [&](const char* name, const char* help, auto& cmd) {
    auto* sub = app.add_subcommand(name, help);
    add_config_file(sub);
    cmd.add(sub);
    commands.push_back({sub, [&cmd] { return cmd.run(); }});
  };
  reg("generate", "Write a synthetic catalog and labeled pairs", generate);
  reg("ingest", "Validate raw logs and write cleaned JSONL", ingest);
  reg("index", "Build the per-category history indices", index);
  reg("train", "Train a model and write a checkpoint", train_cmd);
  reg("eval", "Evaluate a checkpoint on a split", eval);
  reg("score", "Score one (user, anchor) pair", score);
  reg("sweep", "Train and test several variants over several seeds", sweep);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    for (auto& c : commands) {
      if (!c.app->parsed()) continue;
      if (print_config_requested(c.app)) return 0;
      return c.run();
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericExit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageExit;
  }
  return kUsageExit;
}
