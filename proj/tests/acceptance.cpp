// Acceptance gate: nine end-to-end checks over the whole engine, each
// printed as one pass/fail line. Exit code is the number of failures.
//
// The heavyweight checks share one synthetic corpus with planted low-rank
// structure and a popularity skew, run through the real command-line
// pipeline so the artifacts on disk are the ones being judged.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ciess/cli.hpp"
#include "ciess/embedding.hpp"
#include "ciess/metrics.hpp"
#include "ciess/nn.hpp"
#include "ciess/recommender.hpp"
#include "ciess/run_io.hpp"
#include "ciess/search.hpp"
#include "ciess/td3.hpp"
#include "ciess/walk.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace ciess;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- plumbing

struct CliCapture {
  int code = 0;
  std::string out;
  std::string err;
};

CliCapture cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliCapture r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// Shared pipeline state built up by check 6 and consumed by 7, 8, and 9.
struct Pipeline {
  fs::path work;
  fs::path data_dir;
  fs::path run_walk;     // search with the walk refinement on
  fs::path run_nowalk;   // same seed, walk off
  fs::path run_repeat;   // same seed and settings as run_walk
  fs::path es_dir;
  EngineConfig config;
  bool search_ok = false;
  bool retrain_ok = false;
  std::string failure;
};

// ------------------------------------------------------ synthetic corpus

// ~1000 users x 400 items, two populations on each side: a quarter of the
// entities (heavy users, catalog heads) draw their preference vectors from
// a nine-dimensional subspace, the rest live on the leading three
// coordinates. Complexity tracks activity/popularity, so the searchable
// state carries the signal needed to tell the populations apart. Measured
// retrained quality on this corpus falls off a cliff below three factors,
// climbs gently up to about eight, and declines past that (extra
// coordinates only fit noise), so a uniform assignment at the budget point
// overspends on three quarters of the entities while starving the deep
// quarter, and a per-entity allocation near the planted ranks beats it by
// a wide margin. Budget allocation has real signal to find here.
std::vector<RawPair> synthetic_corpus(int users, int items, int max_rank,
                                      uint64_t seed) {
  Rng rng(seed);
  const int deep_rank = max_rank - 1;
  const auto power_user = [](int u) { return u % 4 == 0; };
  const auto head_item = [](int j) { return j % 4 == 0; };
  const auto activity = [&](int u) { return power_user(u) ? 30 : 8; };

  std::vector<double> U(static_cast<size_t>(users) * max_rank, 0.0);
  std::vector<double> V(static_cast<size_t>(items) * max_rank, 0.0);
  for (int u = 0; u < users; ++u) {
    const int rank = power_user(u) ? deep_rank : 3;
    for (int k = 0; k < rank; ++k) {
      U[static_cast<size_t>(u) * max_rank + k] = rng.normal(0.0, 1.0);
    }
  }
  for (int j = 0; j < items; ++j) {
    const int rank = head_item(j) ? deep_rank : 3;
    for (int k = 0; k < rank; ++k) {
      V[static_cast<size_t>(j) * max_rank + k] = rng.normal(0.0, 1.0);
    }
  }

  std::vector<RawPair> pairs;
  std::vector<std::pair<double, int>> scored(items);
  for (int u = 0; u < users; ++u) {
    const int per_user = activity(u);
    for (int j = 0; j < items; ++j) {
      double affinity = 0.0;
      for (int k = 0; k < max_rank; ++k) {
        affinity += U[static_cast<size_t>(u) * max_rank + k] *
                    V[static_cast<size_t>(j) * max_rank + k];
      }
      const double boost = head_item(j) ? 0.5 : 0.0;
      scored[j] = {affinity + boost + rng.normal(0.0, 0.25), j};
    }
    std::partial_sort(scored.begin(), scored.begin() + per_user, scored.end(),
                      [](auto a, auto b) { return a.first > b.first; });
    for (int k = 0; k < per_user; ++k) {
      pairs.push_back({std::to_string(u), std::to_string(scored[k].second)});
    }
  }
  return pairs;
}

// --------------------------------------------------------------- check 1

bool check_masked_reads(std::string& detail) {
  Rng rng(101);
  const int configs = 1000;
  for (int round = 0; round < configs; ++round) {
    const int64_t entities = 2 + static_cast<int64_t>(rng.bounded(40));
    const int d_max = 1 + static_cast<int>(rng.bounded(32));
    MaskedEmbeddingTable table(entities, d_max);
    table.init_values(rng.bounded(1u << 30), 0.3);
    std::vector<int32_t> dims(entities);
    for (auto& d : dims) d = 1 + static_cast<int32_t>(rng.bounded(d_max));
    table.set_dims(dims);

    // oracle: explicitly materialized zero-padded vectors
    std::vector<std::vector<double>> dense(entities);
    int64_t used = 0;
    for (int64_t n = 0; n < entities; ++n) {
      dense[n].assign(d_max, 0.0);
      auto row = table.row(n);
      for (int k = 0; k < dims[n]; ++k) dense[n][k] = row[k];
      used += dims[n];
    }
    for (int64_t n = 0; n < entities; ++n) {
      if (table.lookup(n) != dense[n]) {
        detail = "lookup differs from the materialized row";
        return false;
      }
    }
    if (table.used_parameters() != used) {
      detail = "used_parameters does not count the unmasked prefix";
      return false;
    }
    const double want =
        1.0 - static_cast<double>(used) / (static_cast<double>(entities) * d_max);
    if (std::abs(table.sparsity() - want) > 1e-15) {
      detail = "sparsity mismatch";
      return false;
    }
    // pairwise products through the mask equal products of dense vectors
    for (int probe = 0; probe < 5; ++probe) {
      const int64_t a = static_cast<int64_t>(rng.bounded(entities));
      const int64_t b = static_cast<int64_t>(rng.bounded(entities));
      double want_dot = 0.0;
      for (int k = 0; k < d_max; ++k) want_dot += dense[a][k] * dense[b][k];
      double got = 0.0;
      const auto ra = table.row(a);
      const auto rb = table.row(b);
      const int shared = std::min(dims[a], dims[b]);
      for (int k = 0; k < shared; ++k) got += ra[k] * rb[k];
      if (std::abs(got - want_dot) > 1e-12) {
        detail = "masked product differs from the dense product";
        return false;
      }
    }
  }
  detail = std::to_string(configs) + " random size assignments";
  return true;
}

// --------------------------------------------------------------- check 2

bool check_walk_law(std::string& detail) {
  Rng pick(202);
  Rng draw_rng(203);
  const int draws = 100000;
  std::vector<double> pvals;
  double max_l1 = 0.0;
  for (int round = 0; round < 50; ++round) {
    WalkConfig cfg;
    const int choices[] = {8, 32, 128, 200};
    cfg.d_max = choices[round % 4];
    cfg.threshold = 1 + static_cast<int>(pick.bounded(9));
    const int d = 1 + static_cast<int>(pick.bounded(cfg.d_max));

    const auto dist = step_distribution(d, cfg);
    double sum = 0.0;
    for (auto [n, p] : dist) sum += p;
    if (std::abs(sum - 1.0) > 1e-12) {
      detail = "step law does not sum to 1 (off by " + fmt("%.3g", sum - 1.0) + ")";
      return false;
    }

    std::map<int, int> counts;
    for (int i = 0; i < draws; ++i) counts[walk_step(d, cfg, draw_rng)]++;
    double stat = 0.0;
    double l1 = 0.0;
    int covered = 0;
    for (auto [n, p] : dist) {
      const double expect = p * draws;
      const double diff = counts[n] - expect;
      stat += diff * diff / expect;
      l1 += std::abs(diff) / draws;
      covered += counts[n];
    }
    if (covered != draws) {
      detail = "a draw landed outside the declared neighborhood";
      return false;
    }
    pvals.push_back(
        testsupport::chi_square_p(stat, static_cast<double>(dist.size() - 1)));
    max_l1 = std::max(max_l1, l1);
    if (l1 > 0.02) {
      detail = "empirical law off by L1 " + fmt("%.4f", l1) + " at size " +
               std::to_string(d) + ", radius " + std::to_string(cfg.threshold);
      return false;
    }
  }
  // Fifty simultaneous chi-square tests: gate the minimum at the
  // family-wise 1% level (0.01 / 50) and the median where a genuinely
  // biased sampler would drag it. A real defect at this draw count
  // produces p-values indistinguishable from zero.
  std::sort(pvals.begin(), pvals.end());
  const double min_p = pvals.front();
  const double median_p = pvals[pvals.size() / 2];
  detail = "50 neighborhoods x 100k draws, min p " + fmt("%.4f", min_p) +
           ", median p " + fmt("%.2f", median_p) + ", max L1 " + fmt("%.4f", max_l1);
  return min_p > 0.0002 && median_p >= 0.1;
}

// --------------------------------------------------------------- check 3

double oracle_recall(const std::vector<int32_t>& ranked,
                     const std::vector<int32_t>& relevant, int k) {
  int hits = 0;
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) {
    hits += std::count(relevant.begin(), relevant.end(), ranked[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double oracle_ndcg(const std::vector<int32_t>& ranked,
                   const std::vector<int32_t>& relevant, int k) {
  double dcg = 0.0;
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) {
    if (std::count(relevant.begin(), relevant.end(), ranked[i])) {
      dcg += 1.0 / std::log2(i + 2.0);
    }
  }
  double ideal = 0.0;
  const int best = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int i = 0; i < best; ++i) ideal += 1.0 / std::log2(i + 2.0);
  return dcg / ideal;
}

bool check_metric_oracles(std::string& detail) {
  // frozen fixtures first
  std::vector<int32_t> ranked(30);
  std::iota(ranked.begin(), ranked.end(), 1);
  if (std::abs(ndcg_at_k(ranked, std::vector<int32_t>{2}, 5) - 0.6309297535714575) >
      1e-15) {
    detail = "frozen single-hit ndcg fixture broke";
    return false;
  }
  if (std::abs(ensemble_eval(ranked, std::vector<int32_t>{6, 15}) -
               0.3483502786379489) > 1e-15) {
    detail = "frozen ensemble fixture broke";
    return false;
  }

  Rng rng(303);
  double worst = 0.0;
  for (int round = 0; round < 1000; ++round) {
    const int pool = 2 + static_cast<int>(rng.bounded(60));
    std::vector<int32_t> ids(pool);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    std::vector<int32_t> top(ids.begin(),
                             ids.begin() + 1 + rng.bounded(static_cast<uint64_t>(pool)));
    rng.shuffle(ids);
    std::vector<int32_t> rel(ids.begin(),
                             ids.begin() + 1 + rng.bounded(static_cast<uint64_t>(pool)));
    std::sort(rel.begin(), rel.end());
    for (int k : {1, 3, 5, 10, 20}) {
      const double dr = std::abs(recall_at_k(top, rel, k) - oracle_recall(top, rel, k));
      const double dn = std::abs(ndcg_at_k(top, rel, k) - oracle_ndcg(top, rel, k));
      worst = std::max({worst, dr, dn});
      if (worst > 1e-12) {
        detail = "metric drifted from its oracle by " + fmt("%.3g", worst);
        return false;
      }
    }
  }
  detail = "1000 instances, worst |diff| " + fmt("%.2g", worst);
  return true;
}

// --------------------------------------------------------------- check 4

double fd_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

bool check_gradients(std::string& detail) {
  const double h = 1e-5;
  double worst = 0.0;
  Rng rng(404);

  // policy and value networks, 100 parameter probes each
  for (int which = 0; which < 2; ++which) {
    DenseNet net = which == 0 ? DenseNet({3, 64, 64, 1}, DenseNet::Output::sigmoid)
                              : DenseNet({4, 64, 64, 1}, DenseNet::Output::identity);
    net.init_params(rng);
    for (auto& x : net.w.back()) x += 0.25;  // move the head off zero

    std::vector<double> input(net.widths().front());
    for (auto& x : input) x = rng.uniform01();
    DenseNet::Trace trace;
    net.forward(input, trace);
    auto grads = net.zero_grads();
    net.backward(trace, std::vector<double>{1.0}, grads);

    for (int probe = 0; probe < 100; ++probe) {
      const size_t layer = rng.bounded(net.w.size());
      const bool bias = rng.uniform01() < 0.2;
      auto& params = bias ? net.b[layer] : net.w[layer];
      auto& grad = bias ? grads.b[layer] : grads.w[layer];
      const size_t i = rng.bounded(params.size());
      const double saved = params[i];
      const double fd = testsupport::central_diff(
          [&](double x) {
            params[i] = x;
            return net.forward(input)[0];
          },
          saved, h);
      params[i] = saved;
      const double err = fd_rel_err(grad[i], fd);
      worst = std::max(worst, err);
      if (err >= 1e-4) {
        detail = std::string(which == 0 ? "policy" : "value") +
                 " net gradient off by rel " + fmt("%.3g", err);
        return false;
      }
    }
  }

  // ranking loss gradients on the dot-product backbone
  const auto data = testsupport::toy_dataset(30, 20, 6, 404);
  RecommenderConfig cfg;
  cfg.d_max = 8;
  cfg.l2_weight = 1e-3;
  cfg.seed = 7;
  Recommender rec(data, cfg);
  std::vector<int32_t> dims(data.num_entities());
  for (size_t i = 0; i < dims.size(); ++i) {
    dims[i] = 1 + static_cast<int32_t>(rng.bounded(8));
  }
  rec.table().set_dims(dims);

  for (int probe = 0; probe < 100; ++probe) {
    const auto triple = data.sample_bpr_triple(rng);
    const auto grads = rec.bpr_gradients(triple.user, triple.pos, triple.neg);
    const int64_t rows[3] = {data.entity_of_user(triple.user),
                             data.entity_of_item(triple.pos),
                             data.entity_of_item(triple.neg)};
    const std::vector<double>* sides[3] = {&grads.user, &grads.pos, &grads.neg};
    const int pick = static_cast<int>(rng.bounded(3));
    const int64_t row = rows[pick];
    const int k = static_cast<int>(rng.bounded(static_cast<uint64_t>(dims[row])));
    auto values = rec.table().row_mut(row);
    const double saved = values[k];
    const double fd = testsupport::central_diff(
        [&](double x) {
          rec.table().row_mut(row)[k] = x;
          return rec.bpr_loss(triple.user, triple.pos, triple.neg);
        },
        saved, h);
    rec.table().row_mut(row)[k] = saved;
    const double err = fd_rel_err((*sides[pick])[k], fd);
    worst = std::max(worst, err);
    if (err >= 1e-4) {
      detail = "ranking gradient off by rel " + fmt("%.3g", err);
      return false;
    }
    // masked coordinates stay at exactly zero gradient
    for (int kk = dims[row]; kk < cfg.d_max; ++kk) {
      if ((*sides[pick])[kk] != 0.0) {
        detail = "masked coordinate received gradient";
        return false;
      }
    }
  }

  detail = "300 probes, worst rel err " + fmt("%.2g", worst);
  return true;
}

// --------------------------------------------------------------- check 5

bool check_policy_bandit(std::string& detail) {
  // One-step problem: reward peaks at size 80 regardless of state. The
  // policy should steer its deterministic output into a band around it.
  const int d_max = 128;
  const double target = 80.0;
  TD3Config cfg;
  cfg.gamma = 0.0;
  cfg.actor_lr = 3e-3;
  cfg.critic_lr = 3e-3;
  SidePolicy policy(d_max, cfg, NoiseKind::gaussian, 6.0, 505);
  ReplayBuffer buffer(cfg.buffer_capacity);
  Rng explore(506);
  Rng update_rng(507);

  const int entities = 50;
  std::vector<SearchState> states(entities);
  for (int i = 0; i < entities; ++i) {
    states[i] = SearchState{static_cast<double>(i) / (entities - 1), 0.5, 1.0};
  }

  int updates = 0;
  const int rounds = 50;
  const int updates_per_round = 40;
  for (int round = 0; round < rounds; ++round) {
    for (int i = 0; i < entities; ++i) {
      const RawAction raw = policy.raw_action(states[i], explore);
      const int a = std::clamp<int>(static_cast<int>(std::llround(raw.value)), 1, d_max);
      const double r = -std::pow((a - target) / d_max, 2.0);
      buffer.push(Transition{states[i], a, r, states[i]});
    }
    for (int k = 0; k < updates_per_round && updates < 2000; ++k) {
      const auto st = policy.update(buffer, update_rng);
      if (st.skipped) break;
      ++updates;
    }
  }

  int inside = 0;
  double mean = 0.0;
  for (int i = 0; i < entities; ++i) {
    const double a = policy.greedy_action(states[i]);
    mean += a / entities;
    if (a >= 72.0 && a <= 88.0) ++inside;
  }
  detail = std::to_string(updates) + " updates, mean greedy size " + fmt("%.1f", mean) +
           ", " + std::to_string(inside) + "/" + std::to_string(entities) +
           " inside [72, 88]";
  return inside >= 45 && updates <= 2000;
}

// --------------------------------------------------------------- check 6

EngineConfig pipeline_config() {
  EngineConfig cfg;
  cfg.seed = 20260817;
  cfg.threads = 1;
  cfg.backbone.backbone = Backbone::mf_dot;
  cfg.backbone.d_max = 64;
  cfg.search.episodes = 15;
  cfg.search.iterations = 10;
  cfg.search.targets = {0.80, 0.90};
  // deep enough per-iteration adaptation that capacity differences show
  // up in measured quality; shallow training flattens the curve at the
  // low end and the cost term then drags the policy to size 1
  cfg.search.epochs_per_iter = 24;
  cfg.search.top_l = 8;
  // noise at ~5% of the 64-wide action range, and a cost weight that
  // parks the policy equilibrium near the 0.90 budget point (mean size
  // 6.4). Too weak and it sits at the quality knee far above budget; too
  // strong and both sides crash through the quality cliff into a mutual
  // starvation point where the min-gated dot makes recovery invisible.
  cfg.search.sigma = 3.0;
  cfg.search.lambda = 3.0;
  // update count per iteration is ceil(side_entities / batch): the item
  // side has few entities, so a smaller batch is what buys it enough
  // TD3 steps to track the quality signal
  cfg.td3.batch_size = 16;
  cfg.retrain.max_epochs = 200;
  cfg.retrain.patience = 10;
  return cfg;
}

bool check_pipeline(Pipeline& pipe, std::string& detail) {
  pipe.work = fs::temp_directory_path() /
              ("ciess-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(pipe.work);
  fs::create_directories(pipe.work);
  pipe.data_dir = pipe.work / "data";
  pipe.run_walk = pipe.work / "run-walk";
  pipe.run_nowalk = pipe.work / "run-nowalk";
  pipe.run_repeat = pipe.work / "run-repeat";
  pipe.es_dir = pipe.work / "baseline-es";
  pipe.config = pipeline_config();

  // corpus -> split -> snapshot
  const auto pairs = synthetic_corpus(1000, 400, 10, 99);
  SplitOptions split;
  split.seed = 11;
  const InteractionDataset data = InteractionDataset::split(pairs, split);
  fs::create_directories(pipe.data_dir);
  data.save_snapshot((pipe.data_dir / "dataset.snapshot").string());

  const fs::path config_path = pipe.work / "config.json";
  save_json(config_path.string(), engine_config_to_json(pipe.config));

  // the reference evaluation is shared by every search over this corpus
  const FullEvalBaseline baseline = build_full_baseline(data, pipe.config);
  save_baseline_cache((pipe.data_dir / "baseline_eval.cache").string(), baseline,
                      backbone_name(pipe.config.backbone.backbone),
                      pipe.config.backbone.d_max);

  auto r = cli({"search", "--data", pipe.data_dir.string(), "--config",
                config_path.string(), "--out", pipe.run_walk.string()});
  if (r.code != 0) {
    pipe.failure = "search failed: " + r.err;
    detail = pipe.failure;
    return false;
  }
  pipe.search_ok = true;

  r = cli({"retrain", "--run", pipe.run_walk.string(), "--sparsity", "0.90"});
  if (r.code != 0) {
    pipe.failure = "retrain failed: " + r.err;
    detail = pipe.failure;
    return false;
  }
  pipe.retrain_ok = true;

  r = cli({"baseline", "--data", pipe.data_dir.string(), "--kind", "es", "--sparsity",
           "0.90", "--config", config_path.string(), "--out", pipe.es_dir.string()});
  if (r.code != 0) {
    pipe.failure = "equal-size baseline failed: " + r.err;
    detail = pipe.failure;
    return false;
  }

  const json ours = load_json_file((pipe.run_walk / "final/0.90/metrics.json").string());
  const json es = load_json_file((pipe.es_dir / "metrics.json").string());
  const double our_ndcg = ours.at("ndcg@20").get<double>();
  const double es_ndcg = es.at("ndcg@20").get<double>();
  const double sparsity = ours.at("sparsity_achieved").get<double>();
  detail = "ndcg@20 " + fmt("%.4f", our_ndcg) + " vs equal-size " +
           fmt("%.4f", es_ndcg) + ", sparsity " + fmt("%.4f", sparsity);
  return our_ndcg >= es_ndcg && sparsity >= 0.90;
}

// --------------------------------------------------------------- check 7

double final_episode_reward(const fs::path& trace_path, int episodes, int window) {
  std::ifstream in(trace_path);
  if (!in) throw std::runtime_error("cannot read " + trace_path.string());
  std::string line;
  double sum = 0.0;
  int n = 0;
  while (std::getline(in, line)) {
    const json row = json::parse(line);
    if (row.at("episode").get<int>() > episodes - window &&
        !row.at("aborted").get<bool>()) {
      sum += row.at("mean_reward").get<double>();
      ++n;
    }
  }
  if (n == 0) throw std::runtime_error("no finished iterations in the final episodes");
  return sum / n;
}

bool check_walk_refinement(Pipeline& pipe, std::string& detail) {
  if (!pipe.search_ok) {
    detail = "skipped: " + pipe.failure;
    return false;
  }
  const fs::path config_path = pipe.work / "config.json";
  const auto r = cli({"search", "--data", pipe.data_dir.string(), "--config",
                      config_path.string(), "--out", pipe.run_nowalk.string(),
                      "--no-random-walk"});
  if (r.code != 0) {
    detail = "walk-off search failed: " + r.err;
    return false;
  }
  const int episodes = pipe.config.search.episodes;
  const double with_walk =
      final_episode_reward(pipe.run_walk / "rl_trace.jsonl", episodes, 5);
  const double without =
      final_episode_reward(pipe.run_nowalk / "rl_trace.jsonl", episodes, 5);
  detail = "final-5-episode mean reward " + fmt("%.4f", with_walk) + " with the walk vs " +
           fmt("%.4f", without) + " without";
  return with_walk >= without;
}

// --------------------------------------------------------------- check 8

bool check_budgets_hold(Pipeline& pipe, std::string& detail) {
  if (!pipe.search_ok) {
    detail = "skipped: " + pipe.failure;
    return false;
  }
  int checked = 0;
  for (const double target : pipe.config.search.targets) {
    const fs::path cdir = pipe.run_walk / "candidates" / format_target(target);
    const json meta = load_json_file((cdir / "candidates.json").string());
    for (const auto& entry : meta.at("records")) {
      const auto mask = load_mask_file((cdir / entry.at("file").get<std::string>()).string());
      const double s = sparsity_of(mask.dims, pipe.config.backbone.d_max);
      if (s < target) {
        detail = "stored candidate at " + fmt("%.4f", s) + " misses target " +
                 format_target(target);
        return false;
      }
      if (s != entry.at("sparsity").get<double>()) {
        detail = "stored sparsity does not match its own mask";
        return false;
      }
      ++checked;
    }
  }
  if (pipe.retrain_ok) {
    const auto mask =
        load_mask_file((pipe.run_walk / "final/0.90/assignment.mask").string());
    if (sparsity_of(mask.dims, pipe.config.backbone.d_max) < 0.90) {
      detail = "final assignment misses its target";
      return false;
    }
    ++checked;
  }
  if (checked == 0) {
    detail = "no stored assignments to audit";
    return false;
  }
  detail = std::to_string(checked) + " stored assignments, all within budget";
  return true;
}

// --------------------------------------------------------------- check 9

bool check_reproducibility(Pipeline& pipe, std::string& detail) {
  if (!pipe.search_ok || !pipe.retrain_ok) {
    detail = "skipped: " + pipe.failure;
    return false;
  }
  const fs::path config_path = pipe.work / "config.json";
  auto r = cli({"search", "--data", pipe.data_dir.string(), "--config",
                config_path.string(), "--out", pipe.run_repeat.string()});
  if (r.code != 0) {
    detail = "repeat search failed: " + r.err;
    return false;
  }
  if (slurp(pipe.run_walk / "rl_trace.jsonl") !=
      slurp(pipe.run_repeat / "rl_trace.jsonl")) {
    detail = "search traces differ between identical runs";
    return false;
  }
  if (slurp(pipe.run_walk / "candidates/0.90/candidates.json") !=
      slurp(pipe.run_repeat / "candidates/0.90/candidates.json")) {
    detail = "stored candidate indexes differ between identical runs";
    return false;
  }

  r = cli({"retrain", "--run", pipe.run_repeat.string(), "--sparsity", "0.90"});
  if (r.code != 0) {
    detail = "repeat retrain failed: " + r.err;
    return false;
  }
  json a = load_json_file((pipe.run_walk / "final/0.90/metrics.json").string());
  json b = load_json_file((pipe.run_repeat / "final/0.90/metrics.json").string());
  a.erase("wall_seconds");  // the one field allowed to differ
  b.erase("wall_seconds");
  if (a != b) {
    detail = "final metrics differ between identical runs";
    return false;
  }
  detail = "byte-identical traces, identical final metrics (timing masked)";
  return true;
}

}  // namespace

int main() {
  Pipeline pipe;
  struct Check {
    int id;
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Check> checks{
      {1, "masked reads match a materialized table", check_masked_reads},
      {2, "walk steps follow the distance-weighted law", check_walk_law},
      {3, "ranking metrics match independent oracles", check_metric_oracles},
      {4, "analytic gradients match finite differences", check_gradients},
      {5, "the policy finds a planted best size", check_policy_bandit},
      {6, "searched sizes beat equal sizes at the same budget",
       [&](std::string& d) { return check_pipeline(pipe, d); }},
      {7, "walk refinement does not hurt late rewards",
       [&](std::string& d) { return check_walk_refinement(pipe, d); }},
      {8, "every stored assignment satisfies its sparsity target",
       [&](std::string& d) { return check_budgets_hold(pipe, d); }},
      {9, "identical runs produce identical artifacts",
       [&](std::string& d) { return check_reproducibility(pipe, d); }},
  };

  int failures = 0;
  for (const auto& check : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = check.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %d %-55s %s  [%.1fs]\n", ok ? "PASS" : "FAIL", check.id,
                check.name, detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
  }

  if (failures == 0) {
    std::error_code ec;
    fs::remove_all(pipe.work, ec);
  } else if (!pipe.work.empty()) {
    std::printf("artifacts kept under %s\n", pipe.work.string().c_str());
  }
  std::printf("acceptance: %d/9 passed\n", 9 - failures);
  return failures;
}
