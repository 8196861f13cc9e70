#include "ciess/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ciess/run_io.hpp"

namespace fs = std::filesystem;

namespace ciess {

namespace {

using nlohmann::json;

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

/// CIESS_THREADS beats both the flag and the config file.
int effective_threads(int configured) {
  const char* env = std::getenv("CIESS_THREADS");
  if (env == nullptr || *env == '\0') return configured;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 0) {
    throw InputError("CIESS_THREADS must be a non-negative integer");
  }
  return static_cast<int>(v);
}

void ensure_out_dir(const std::string& path, bool force) {
  const fs::path dir(path);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw StateError(path + " exists and is not a directory");
    }
    if (!fs::is_empty(dir) && !force) {
      throw StateError("output directory " + path +
                       " is not empty (pass --force to overwrite)");
    }
  } else {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw StateError("cannot create " + path + ": " + ec.message());
  }
}

void reset_dir(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  if (ec) throw StateError("cannot clear " + dir.string() + ": " + ec.message());
  fs::create_directories(dir, ec);
  if (ec) throw StateError("cannot create " + dir.string() + ": " + ec.message());
}

std::string resolve_dataset_path(const std::string& given) {
  if (fs::is_directory(given)) return (fs::path(given) / "dataset.snapshot").string();
  return given;
}

struct PrepareOpts {
  std::string input;
  std::string format = "csv";
  std::string out_dir;
  uint64_t seed = 0;
  int min_interactions = 4;
  bool force = false;
};

struct SearchOpts {
  std::string data;
  std::string config_path;
  std::string out_dir;
  int threads = -1;  // -1: keep the config value
  std::string noise;
  bool no_random_walk = false;
  bool force = false;
};

struct RetrainOpts {
  std::string run_dir;
  double sparsity = 0.0;
  int threads = -1;
  bool force = false;
};

struct BaselineOpts {
  std::string data;
  std::string kind;
  double sparsity = 0.0;
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 1;
  int threads = -1;
  bool force = false;
};

json dataset_stats(const InteractionDataset& data) {
  return json{
      {"num_users", data.num_users()},
      {"num_items", data.num_items()},
      {"train_interactions", data.train().size()},
      {"val_interactions", data.val().size()},
      {"test_interactions", data.test().size()},
  };
}

json metrics_json(const TopkSummary& s) {
  return json{
      {"recall@5", s.recall5},
      {"recall@20", s.recall20},
      {"ndcg@5", s.ndcg5},
      {"ndcg@20", s.ndcg20},
  };
}

void cmd_prepare(const PrepareOpts& o, std::ostream& out) {
  const PairFormat fmt = o.format == "tsv" ? PairFormat::tsv : PairFormat::csv;
  const std::vector<RawPair> pairs = load_interactions(o.input, fmt);
  SplitOptions options;
  options.seed = o.seed;
  options.min_interactions = o.min_interactions;
  const InteractionDataset data = InteractionDataset::split(pairs, options);

  ensure_out_dir(o.out_dir, o.force);
  const fs::path dir(o.out_dir);
  data.save_snapshot((dir / "dataset.snapshot").string());

  json stats = dataset_stats(data);
  stats["input_pairs"] = pairs.size();
  stats["min_interactions"] = o.min_interactions;
  stats["seed"] = o.seed;
  save_json((dir / "stats.json").string(), stats);

  out << "prepared " << data.num_users() << " users x " << data.num_items()
      << " items (train " << data.train().size() << ", val " << data.val().size()
      << ", test " << data.test().size() << ") -> " << o.out_dir << "\n";
}

/// Loads the run's reference evaluation if a compatible cache sits next to
/// the dataset; otherwise trains the unrestricted model.
FullEvalBaseline obtain_baseline(const InteractionDataset& data,
                                 const EngineConfig& cfg,
                                 const std::string& snapshot_path, std::ostream& out) {
  const fs::path sibling = fs::path(snapshot_path).parent_path() / "baseline_eval.cache";
  if (fs::exists(sibling)) {
    try {
      BaselineCache cache = load_baseline_cache(sibling.string());
      if (cache.backbone == backbone_name(cfg.backbone.backbone) &&
          cache.d_max == cfg.backbone.d_max &&
          cache.baseline.user_eval.size() == static_cast<size_t>(data.num_users()) &&
          cache.baseline.item_eval.size() == static_cast<size_t>(data.num_items())) {
        out << "reference evaluation: reusing " << sibling.string() << "\n";
        return std::move(cache.baseline);
      }
      out << "reference evaluation: cache at " << sibling.string()
          << " does not match this run, rebuilding\n";
    } catch (const InputError&) {
      out << "reference evaluation: cache at " << sibling.string()
          << " is unreadable, rebuilding\n";
    }
  }
  out << "reference evaluation: training the unrestricted model\n";
  return build_full_baseline(data, cfg);
}

void cmd_search(const SearchOpts& o, std::ostream& out) {
  EngineConfig cfg = load_engine_config(o.config_path);
  if (!o.noise.empty()) cfg.search.noise = parse_noise(o.noise);
  if (o.no_random_walk) cfg.search.random_walk = false;
  if (o.threads >= 0) cfg.threads = o.threads;
  cfg.threads = effective_threads(cfg.threads);
  cfg.validate();

  const std::string snapshot_path = resolve_dataset_path(o.data);
  const InteractionDataset data = InteractionDataset::load_snapshot(snapshot_path);

  ensure_out_dir(o.out_dir, o.force);
  const fs::path dir(o.out_dir);
  atomic_write_text((dir / "dataset.snapshot").string(), read_text_file(snapshot_path));
  save_json((dir / "config.json").string(), engine_config_to_json(cfg));

  const FullEvalBaseline baseline = obtain_baseline(data, cfg, snapshot_path, out);
  save_baseline_cache((dir / "baseline_eval.cache").string(), baseline,
                      backbone_name(cfg.backbone.backbone), cfg.backbone.d_max);

  JsonlWriter trace((dir / "rl_trace.jsonl").string());
  JsonlWriter mlog((dir / "metrics_log.jsonl").string());

  out << "episode   users.d   items.d    reward   q.users   q.items  sparsity    buffer\n";
  SearchDriver driver(data, cfg, baseline);
  driver.on_iteration = [&](const IterationRecord& r) {
    trace.write(trace_line(r));
    for (const auto& line : metrics_log_lines(r)) mlog.write(line);
    if (r.iteration == cfg.search.iterations) {
      char row[160];
      std::snprintf(row, sizeof(row),
                    "%7d %9.2f %9.2f %9.4f %9.4f %9.4f %9.4f %9lld%s\n", r.episode,
                    r.mean_action_users, r.mean_action_items, r.mean_reward,
                    r.mean_q_users, r.mean_q_items, r.sparsity,
                    static_cast<long long>(r.buffer_len), r.aborted ? "  aborted" : "");
      out << row;
    }
  };
  const SearchResult result = driver.run();

  json candidate_counts = json::object();
  for (const auto& set : result.candidates) {
    const std::string name = format_target(set.target());
    const fs::path cdir = dir / "candidates" / name;
    reset_dir(cdir);
    json records = json::array();
    for (size_t k = 0; k < set.records().size(); ++k) {
      const CandidateRecord& rec = set.records()[k];
      const std::string mask_name = "rank" + std::to_string(k + 1) + ".mask";
      save_mask_file((cdir / mask_name).string(), rec.dims, cfg.backbone.d_max,
                     data.num_users(), data.num_items());
      records.push_back(json{{"file", mask_name},
                             {"mean_q", rec.mean_q},
                             {"sparsity", rec.sparsity},
                             {"episode", rec.episode},
                             {"iteration", rec.iteration}});
    }
    save_json((cdir / "candidates.json").string(),
              json{{"target", set.target()}, {"records", records}});
    candidate_counts[name] = set.records().size();

    out << "target " << name << ": " << set.records().size() << " stored";
    if (!set.records().empty()) {
      const CandidateRecord& best = set.records().front();
      out << " (best mean q " << format_double("%.4f", best.mean_q) << " from episode "
          << best.episode << ", iter " << best.iteration << ")";
    }
    out << "\n";
  }

  const json manifest{
      {"version", 1},
      {"seed", cfg.seed},
      {"backbone", backbone_name(cfg.backbone.backbone)},
      {"d_max", cfg.backbone.d_max},
      {"episodes", cfg.search.episodes},
      {"iterations", cfg.search.iterations},
      {"targets", cfg.search.targets},
      {"dataset", dataset_stats(data)},
      {"candidates", candidate_counts},
      {"artifacts",
       json{{"config", "config.json"},
            {"dataset", "dataset.snapshot"},
            {"baseline_cache", "baseline_eval.cache"},
            {"rl_trace", "rl_trace.jsonl"},
            {"metrics_log", "metrics_log.jsonl"}}},
  };
  save_json((dir / "manifest.json").string(), manifest);
}

/// Matches the requested sparsity against the run's configured targets.
double match_target(double requested, const std::vector<double>& targets) {
  for (double t : targets) {
    if (std::abs(t - requested) < 1e-9) return t;
  }
  std::string known;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (i) known += ", ";
    known += format_target(targets[i]);
  }
  throw InputError("sparsity " + format_target(requested) +
                   " is not one of the run's targets (" + known + ")");
}

CandidateMaskSet load_candidates(const fs::path& cdir, double target, int top_l,
                                 const InteractionDataset& data, int d_max) {
  const fs::path meta_path = cdir / "candidates.json";
  if (!fs::exists(meta_path)) {
    throw StateError("no stored size assignments under " + cdir.string() +
                     "; run the search first");
  }
  const json meta = load_json_file(meta_path.string());
  if (!meta.is_object() || !meta.contains("records") || !meta["records"].is_array()) {
    throw InputError(meta_path.string() + ": malformed candidate index");
  }
  CandidateMaskSet set(target, top_l);
  for (const auto& entry : meta["records"]) {
    CandidateRecord rec;
    std::string file;
    try {
      rec.mean_q = entry.at("mean_q").get<double>();
      rec.sparsity = entry.at("sparsity").get<double>();
      rec.episode = entry.at("episode").get<int>();
      rec.iteration = entry.at("iteration").get<int>();
      file = entry.at("file").get<std::string>();
    } catch (const json::exception& e) {
      throw InputError(meta_path.string() + ": malformed candidate index: " + e.what());
    }
    const MaskFileData mask = load_mask_file((cdir / file).string());
    if (mask.d_max != d_max || mask.num_users != data.num_users() ||
        mask.num_items != data.num_items()) {
      throw StateError(cdir.string() + ": stored mask does not match the dataset");
    }
    rec.dims = mask.dims;
    if (!set.offer(std::move(rec))) {
      throw StateError(cdir.string() + ": stored candidate index is inconsistent");
    }
  }
  return set;
}

void cmd_retrain(const RetrainOpts& o, std::ostream& out) {
  const fs::path run(o.run_dir);
  for (const char* name : {"config.json", "dataset.snapshot", "baseline_eval.cache"}) {
    if (!fs::exists(run / name)) {
      throw StateError(o.run_dir + " is missing " + name + "; run the search first");
    }
  }
  EngineConfig cfg = load_engine_config((run / "config.json").string());
  if (o.threads >= 0) cfg.threads = o.threads;
  cfg.threads = effective_threads(cfg.threads);

  const InteractionDataset data =
      InteractionDataset::load_snapshot((run / "dataset.snapshot").string());
  BaselineCache cache = load_baseline_cache((run / "baseline_eval.cache").string());
  if (cache.backbone != backbone_name(cfg.backbone.backbone) ||
      cache.d_max != cfg.backbone.d_max ||
      cache.baseline.user_eval.size() != static_cast<size_t>(data.num_users()) ||
      cache.baseline.item_eval.size() != static_cast<size_t>(data.num_items())) {
    throw StateError("baseline_eval.cache does not match the run configuration");
  }

  const double target = match_target(o.sparsity, cfg.search.targets);
  const std::string name = format_target(target);
  const CandidateMaskSet set = load_candidates(run / "candidates" / name, target,
                                               cfg.search.top_l, data,
                                               cfg.backbone.d_max);

  const fs::path final_dir = run / "final" / name;
  if (fs::exists(final_dir) && !fs::is_empty(final_dir) && !o.force) {
    throw StateError(final_dir.string() + " already exists (pass --force to overwrite)");
  }
  reset_dir(final_dir);

  out << "retraining " << set.records().size() << " stored size assignments for target "
      << name << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  const RetrainOutcome outcome = selective_retrain(data, cfg, set, cache.baseline,
                                                   (final_dir / "model.ckpt").string());
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_mask_file((final_dir / "assignment.mask").string(), outcome.dims,
                 cfg.backbone.d_max, data.num_users(), data.num_items());
  json metrics = metrics_json(outcome.test_summary);
  metrics["backbone"] = backbone_name(cfg.backbone.backbone);
  metrics["sparsity_target"] = target;
  metrics["sparsity_achieved"] = outcome.sparsity;
  metrics["chosen_rank"] = outcome.chosen_rank;
  metrics["wall_seconds"] = wall;
  save_json((final_dir / "metrics.json").string(), metrics);

  const CandidateRecord& chosen = set.records()[outcome.chosen_rank - 1];
  out << "chosen rank " << outcome.chosen_rank << " (episode " << chosen.episode
      << ", iter " << chosen.iteration << "): sparsity "
      << format_double("%.4f", outcome.sparsity) << ", val mean q "
      << format_double("%.4f", outcome.val_mean_q) << "\n";
  out << "test: recall@5 " << format_double("%.4f", outcome.test_summary.recall5)
      << "  recall@20 " << format_double("%.4f", outcome.test_summary.recall20)
      << "  ndcg@5 " << format_double("%.4f", outcome.test_summary.ndcg5)
      << "  ndcg@20 " << format_double("%.4f", outcome.test_summary.ndcg20) << "\n";
}

void cmd_baseline(const BaselineOpts& o, std::ostream& out) {
  EngineConfig cfg;
  if (!o.config_path.empty()) cfg = load_engine_config(o.config_path);
  if (o.threads >= 0) cfg.threads = o.threads;
  cfg.threads = effective_threads(cfg.threads);

  const InteractionDataset data =
      InteractionDataset::load_snapshot(resolve_dataset_path(o.data));

  ensure_out_dir(o.out_dir, o.force);
  const fs::path dir(o.out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  BaselineOutcome outcome;
  if (o.kind == "es") {
    outcome = baseline_equal_sizes(data, cfg, o.sparsity);
  } else if (o.kind == "mr") {
    outcome = baseline_mixed_random(data, cfg, o.sparsity, o.seed);
  } else {
    throw InputError("unknown baseline kind: " + o.kind + " (expected es or mr)");
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_mask_file((dir / "assignment.mask").string(), outcome.dims, cfg.backbone.d_max,
                 data.num_users(), data.num_items());
  json metrics = metrics_json(outcome.test_summary);
  metrics["backbone"] = backbone_name(cfg.backbone.backbone);
  metrics["kind"] = o.kind;
  metrics["sparsity_target"] = o.sparsity;
  metrics["sparsity_achieved"] = outcome.sparsity;
  metrics["wall_seconds"] = wall;
  save_json((dir / "metrics.json").string(), metrics);

  out << o.kind << " baseline at target " << format_target(o.sparsity) << ": sparsity "
      << format_double("%.4f", outcome.sparsity) << "\n";
  out << "test: recall@5 " << format_double("%.4f", outcome.test_summary.recall5)
      << "  recall@20 " << format_double("%.4f", outcome.test_summary.recall20)
      << "  ndcg@5 " << format_double("%.4f", outcome.test_summary.ndcg5)
      << "  ndcg@20 " << format_double("%.4f", outcome.test_summary.ndcg20) << "\n";
}

}  // namespace

std::string format_target(double target) { return format_double("%.2f", target); }

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"adaptive embedding sizes for latent-factor recommenders"};
  app.require_subcommand(1);

  PrepareOpts prep;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "split an interaction file into a reusable dataset snapshot");
  prepare->add_option("--input", prep.input, "user/item interaction file")->required();
  prepare->add_option("--format", prep.format, "input layout (default csv)")
      ->check(CLI::IsMember({"csv", "tsv"}));
  prepare->add_option("--out", prep.out_dir, "output directory")->required();
  prepare->add_option("--seed", prep.seed, "split shuffle seed (default 0)");
  prepare
      ->add_option("--min-interactions", prep.min_interactions,
                   "drop users/items below this many interactions (default 4)")
      ->check(CLI::Range(1, 1000000));
  prepare->add_flag("--force", prep.force, "overwrite a non-empty output directory");

  SearchOpts srch;
  CLI::App* search = app.add_subcommand(
      "search", "run the size search and store candidate assignments");
  search->add_option("--data", srch.data, "dataset snapshot (file or directory)")
      ->required();
  search->add_option("--config", srch.config_path, "engine configuration JSON")
      ->required();
  search->add_option("--out", srch.out_dir, "run directory to create")->required();
  search->add_option("--threads", srch.threads, "worker threads (0 = all cores)")
      ->check(CLI::Range(0, 4096));
  search->add_option("--noise", srch.noise, "exploration noise override")
      ->check(CLI::IsMember({"gaussian", "ou", "uniform"}));
  search->add_flag("--no-random-walk", srch.no_random_walk,
                   "round the noisy action instead of walking the critic");
  search->add_flag("--force", srch.force, "overwrite a non-empty run directory");

  RetrainOpts retr;
  CLI::App* retrain = app.add_subcommand(
      "retrain", "retrain stored candidates for one target and keep the best");
  retrain->add_option("--run", retr.run_dir, "run directory written by search")
      ->required();
  retrain->add_option("--sparsity", retr.sparsity, "target sparsity from the run config")
      ->required();
  retrain->add_option("--threads", retr.threads, "worker threads (0 = all cores)")
      ->check(CLI::Range(0, 4096));
  retrain->add_flag("--force", retr.force, "overwrite an existing final model");

  BaselineOpts base;
  CLI::App* baseline = app.add_subcommand(
      "baseline", "train a fixed-size reference assignment at one target");
  baseline->add_option("--data", base.data, "dataset snapshot (file or directory)")
      ->required();
  baseline->add_option("--kind", base.kind, "es (equal sizes) or mr (mixed random)")
      ->required()
      ->check(CLI::IsMember({"es", "mr"}));
  baseline->add_option("--sparsity", base.sparsity, "target sparsity in (0, 1)")
      ->required();
  baseline->add_option("--config", base.config_path, "engine configuration JSON");
  baseline->add_option("--out", base.out_dir, "output directory")->required();
  baseline->add_option("--seed", base.seed, "size draw seed for mr (default 1)");
  baseline->add_option("--threads", base.threads, "worker threads (0 = all cores)")
      ->check(CLI::Range(0, 4096));
  baseline->add_flag("--force", base.force, "overwrite a non-empty output directory");

  prepare->callback([&] { cmd_prepare(prep, out); });
  search->callback([&] { cmd_search(srch, out); });
  retrain->callback([&] { cmd_retrain(retr, out); });
  baseline->callback([&] { cmd_baseline(base, out); });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e, out, err);  // --help and friends
    }
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ciess
