#include "ciess/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <utility>

namespace ciess {

void SearchConfig::validate() const {
  if (episodes < 1) throw InputError("search.episodes must be at least 1");
  if (iterations < 1) throw InputError("search.iterations must be at least 1");
  if (lambda < 0.0) throw InputError("search.lambda must be non-negative");
  if (sigma < 0.0) throw InputError("search.sigma must be non-negative");
  if (walk_threshold < 1) throw InputError("search.walk_threshold must be at least 1");
  if (walk_length < 1) throw InputError("search.walk_length must be at least 1");
  if (epochs_per_iter < 1) throw InputError("search.epochs_per_iter must be at least 1");
  if (top_l < 1) throw InputError("search.top_l must be at least 1");
  if (targets.empty()) throw InputError("search.targets must not be empty");
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] > 0.0 && targets[i] < 1.0)) {
      throw InputError("search.targets entries must lie in (0, 1)");
    }
    if (i > 0 && !(targets[i] > targets[i - 1])) {
      throw InputError("search.targets must be strictly increasing");
    }
  }
}

void RetrainConfig::validate() const {
  if (max_epochs < 1) throw InputError("retrain.max_epochs must be at least 1");
  if (patience < 1) throw InputError("retrain.patience must be at least 1");
}

void EngineConfig::validate() const {
  if (threads < 0) throw InputError("threads must be non-negative");
  backbone.validate();
  search.validate();
  td3.validate();
  retrain.validate();
}

double sparsity_of(const std::vector<int32_t>& dims, int d_max) {
  if (d_max < 1) throw InputError("d_max must be at least 1");
  if (dims.empty()) throw InputError("sparsity of an empty size assignment");
  int64_t used = 0;
  for (int32_t d : dims) {
    if (d < 1 || d > d_max) throw InputError("size assignment outside [1, d_max]");
    used += d;
  }
  return 1.0 - static_cast<double>(used) /
                   (static_cast<double>(dims.size()) * static_cast<double>(d_max));
}

CandidateMaskSet::CandidateMaskSet(double target, int top_l)
    : target_(target), top_l_(top_l) {
  if (!(target > 0.0 && target < 1.0)) {
    throw InputError("candidate target must lie in (0, 1)");
  }
  if (top_l < 1) throw InputError("candidate set size must be at least 1");
}

bool CandidateMaskSet::offer(CandidateRecord record) {
  if (record.sparsity < target_) return false;
  for (const auto& held : records_) {
    if (held.dims == record.dims) return false;
  }
  // Insert behind equal scores so earlier admissions win ties.
  auto pos = std::find_if(records_.begin(), records_.end(),
                          [&](const CandidateRecord& held) {
                            return held.mean_q < record.mean_q;
                          });
  if (pos == records_.end() && records_.size() >= static_cast<size_t>(top_l_)) {
    return false;
  }
  records_.insert(pos, std::move(record));
  if (records_.size() > static_cast<size_t>(top_l_)) records_.pop_back();
  return true;
}

namespace {

struct SideBounds {
  int64_t pop_min = 0;
  int64_t pop_max = 0;
};

SideBounds bounds_over(const std::vector<int64_t>& pop, int64_t begin, int64_t end) {
  SideBounds b{pop[begin], pop[begin]};
  for (int64_t n = begin; n < end; ++n) {
    b.pop_min = std::min(b.pop_min, pop[n]);
    b.pop_max = std::max(b.pop_max, pop[n]);
  }
  return b;
}

double mean_of_int(const std::vector<int32_t>& v, int64_t begin, int64_t end) {
  double s = 0.0;
  for (int64_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

}  // namespace

SearchDriver::SearchDriver(const InteractionDataset& data, const EngineConfig& config,
                           const FullEvalBaseline& baseline)
    : data_(data), config_(config), baseline_(baseline) {
  config_.validate();
  if (config_.backbone.d_max < 2) {
    throw InputError("the size search needs d_max of at least 2");
  }
  if (baseline.user_eval.size() != static_cast<size_t>(data.num_users()) ||
      baseline.item_eval.size() != static_cast<size_t>(data.num_items())) {
    throw InputError("reference evaluation does not match the dataset");
  }
}

SearchResult SearchDriver::run() {
  const int32_t n_users = data_.num_users();
  const int32_t n_items = data_.num_items();
  const int64_t n_total = data_.num_entities();
  const int d_max = config_.backbone.d_max;
  const SearchConfig& sc = config_.search;

  SeedTree seeds(config_.seed);
  PolicyEnsemble ensemble(d_max, config_.td3, sc.noise, sc.sigma, seeds.child("policy"));
  Rng rng_noise_u = seeds.child("noise-user").rng();
  Rng rng_noise_i = seeds.child("noise-item").rng();
  Rng rng_walk = seeds.child("walk").rng();
  Rng rng_upd_u = seeds.child("updates-user").rng();
  Rng rng_upd_i = seeds.child("updates-item").rng();
  const SeedTree table_seeds = seeds.child("table");
  const SeedTree train_seeds = seeds.child("train");

  WalkConfig walk_cfg;
  walk_cfg.threshold = sc.walk_threshold;
  walk_cfg.length = sc.walk_length;
  walk_cfg.d_max = d_max;
  if (sc.random_walk) walk_cfg.validate();

  Evaluator evaluator(data_, config_.threads);
  const auto& pop = data_.popularity();
  const SideBounds user_bounds = bounds_over(pop, 0, n_users);
  const SideBounds item_bounds = bounds_over(pop, n_users, n_total);

  SearchResult result;
  result.candidates.reserve(sc.targets.size());
  for (double target : sc.targets) result.candidates.emplace_back(target, sc.top_l);

  Recommender rec(data_, config_.backbone);

  std::vector<int32_t> dims(static_cast<size_t>(n_total), d_max);
  std::vector<double> quality(static_cast<size_t>(n_total), 1.0);
  std::vector<SearchState> states(static_cast<size_t>(n_total));
  std::vector<int32_t> proposal(static_cast<size_t>(n_total), d_max);

  const auto updates_for = [&](int64_t side_entities) {
    const int64_t per_batch =
        (side_entities + config_.td3.batch_size - 1) / config_.td3.batch_size;
    return static_cast<int>(
        std::min<int64_t>(per_batch, config_.td3.max_updates_per_iter));
  };
  const int n_updates_u = updates_for(n_users);
  const int n_updates_i = updates_for(n_items);

  for (int e = 0; e < sc.episodes; ++e) {
    std::fill(dims.begin(), dims.end(), d_max);
    std::fill(quality.begin(), quality.end(), 1.0);
    ensemble.users.noise().reset();
    ensemble.items.noise().reset();
    const SeedTree table_ep = table_seeds.child(static_cast<uint64_t>(e));
    const SeedTree train_ep = train_seeds.child(static_cast<uint64_t>(e));

    for (int t = 0; t < sc.iterations; ++t) {
      for (int32_t u = 0; u < n_users; ++u) {
        states[u] = compute_state(pop[u], user_bounds.pop_min, user_bounds.pop_max,
                                  dims[u], d_max, quality[u]);
      }
      for (int64_t n = n_users; n < n_total; ++n) {
        states[n] = compute_state(pop[n], item_bounds.pop_min, item_bounds.pop_max,
                                  dims[n], d_max, quality[n]);
      }

      for (int64_t n = 0; n < n_total; ++n) {
        const bool user_side = n < n_users;
        SidePolicy& policy = user_side ? ensemble.users : ensemble.items;
        const RawAction raw =
            policy.raw_action(states[n], user_side ? rng_noise_u : rng_noise_i);
        if (sc.random_walk) {
          const std::vector<int> visited = random_walk(raw.value, walk_cfg, rng_walk);
          proposal[n] = select_action(visited, [&](int size) {
            return policy.q1_value(states[n], static_cast<double>(size));
          });
        } else {
          proposal[n] = std::clamp<int32_t>(
              static_cast<int32_t>(std::llround(raw.value)), 1, d_max);
        }
      }

      IterationRecord record;
      record.episode = e + 1;
      record.iteration = t + 1;
      record.mean_action_users = mean_of_int(proposal, 0, n_users);
      record.mean_action_items = mean_of_int(proposal, n_users, n_total);

      rec.table().set_dims(proposal);
      const uint64_t table_seed = table_ep.child(static_cast<uint64_t>(t)).seed();
      if (!sc.warm_start || t == 0) rec.reinit(table_seed);
      Rng train_rng = train_ep.child(static_cast<uint64_t>(t)).rng();

      bool diverged = false;
      try {
        rec.train_epochs(sc.epochs_per_iter, train_rng);
      } catch (const TrainingDiverged&) {
        diverged = true;
      }

      if (diverged) {
        // Roll back to the last committed sizes and drop the exploded
        // parameters; the iteration leaves no transitions behind.
        rec.table().set_dims(dims);
        rec.reinit(table_seed);
        record.aborted = true;
        record.buffer_len = static_cast<int64_t>(ensemble.user_buffer.size() +
                                                 ensemble.item_buffer.size());
        record.sparsity = sparsity_of(dims, d_max);
        if (on_iteration) on_iteration(record);
        result.trace.push_back(std::move(record));
        continue;
      }

      const Evaluator::PassResult pass =
          evaluator.evaluate_users(rec, Evaluator::Split::validation);
      const std::vector<double> item_ev = evaluator.item_evals(pass.user_eval);
      const QualitySnapshot snap = quality_snapshot(pass.user_eval, item_ev, baseline_);

      double reward_sum = 0.0;
      for (int64_t n = 0; n < n_total; ++n) {
        const bool user_side = n < n_users;
        const double r = compute_reward(snap.q[n], proposal[n], sc.lambda, d_max);
        reward_sum += r;
        const SideBounds& b = user_side ? user_bounds : item_bounds;
        const SearchState next =
            compute_state(pop[n], b.pop_min, b.pop_max, proposal[n], d_max, snap.q[n]);
        ensemble.buffer(user_side ? Side::user : Side::item)
            .push(Transition{states[n], proposal[n], r, next});
      }

      dims = proposal;
      quality = snap.q;

      const double sparsity = sparsity_of(dims, d_max);
      CandidateRecord cand;
      cand.dims = dims;
      cand.mean_q = snap.mean_all;
      cand.sparsity = sparsity;
      cand.episode = e + 1;
      cand.iteration = t + 1;
      for (auto& set : result.candidates) set.offer(cand);

      double critic_sum = 0.0, actor_sum = 0.0;
      int critic_n = 0, actor_n = 0;
      const auto run_updates = [&](SidePolicy& policy, ReplayBuffer& buffer, Rng& rng,
                                   int count) {
        for (int k = 0; k < count; ++k) {
          const SidePolicy::UpdateStats st = policy.update(buffer, rng);
          if (st.skipped) break;
          critic_sum += st.critic_loss;
          ++critic_n;
          if (st.actor_updated) {
            actor_sum += st.actor_loss;
            ++actor_n;
          }
        }
      };
      run_updates(ensemble.users, ensemble.user_buffer, rng_upd_u, n_updates_u);
      run_updates(ensemble.items, ensemble.item_buffer, rng_upd_i, n_updates_i);

      record.mean_reward = reward_sum / static_cast<double>(n_total);
      record.critic_loss = critic_n > 0 ? critic_sum / critic_n : 0.0;
      record.actor_loss = actor_n > 0 ? actor_sum / actor_n : 0.0;
      record.buffer_len = static_cast<int64_t>(ensemble.user_buffer.size() +
                                               ensemble.item_buffer.size());
      record.mean_q_users = snap.mean_users;
      record.mean_q_items = snap.mean_items;
      record.sparsity = sparsity;
      record.val_summary = pass.summary;

      if (on_iteration) on_iteration(record);
      result.trace.push_back(std::move(record));
    }
  }
  return result;
}

Recommender train_to_convergence(const InteractionDataset& data,
                                 RecommenderConfig backbone,
                                 const std::vector<int32_t>& dims, uint64_t seed,
                                 const RetrainConfig& retrain, int threads) {
  retrain.validate();
  backbone.seed = seed;
  Recommender rec(data, backbone);
  rec.table().set_dims(dims);
  Evaluator evaluator(data, threads);
  Rng train_rng = SeedTree(seed).child("epochs").rng();

  double best_ndcg = -1.0;
  std::vector<double> best_values = rec.table().snapshot_values();
  int stalled = 0;
  for (int epoch = 0; epoch < retrain.max_epochs; ++epoch) {
    rec.train_epochs(1, train_rng);
    const TopkSummary val = evaluator.topk_summary(rec, Evaluator::Split::validation);
    if (val.ndcg20 > best_ndcg) {
      best_ndcg = val.ndcg20;
      best_values = rec.table().snapshot_values();
      stalled = 0;
    } else if (++stalled >= retrain.patience) {
      break;
    }
  }
  rec.restore_table_values(best_values);
  return rec;
}

RetrainOutcome selective_retrain(const InteractionDataset& data,
                                 const EngineConfig& config,
                                 const CandidateMaskSet& candidates,
                                 const FullEvalBaseline& baseline,
                                 const std::string& model_out) {
  config.validate();
  const auto& records = candidates.records();
  if (records.empty()) {
    throw StateError("no stored size assignments satisfy the target; run the search first");
  }
  Evaluator evaluator(data, config.threads);
  const SeedTree seeds = SeedTree(config.seed).child("retrain");

  std::optional<Recommender> best;
  const CandidateRecord* best_record = nullptr;
  double best_val = -1.0;
  int best_rank = -1;
  for (size_t k = 0; k < records.size(); ++k) {
    std::optional<Recommender> trained;
    try {
      trained.emplace(train_to_convergence(data, config.backbone, records[k].dims,
                                           seeds.child(k).seed(), config.retrain,
                                           config.threads));
    } catch (const TrainingDiverged&) {
      continue;
    }
    const Evaluator::PassResult pass =
        evaluator.evaluate_users(*trained, Evaluator::Split::validation);
    const std::vector<double> item_ev = evaluator.item_evals(pass.user_eval);
    const QualitySnapshot snap = quality_snapshot(pass.user_eval, item_ev, baseline);
    if (snap.mean_all > best_val) {
      best_val = snap.mean_all;
      best_rank = static_cast<int>(k);
      best_record = &records[k];
      best = std::move(trained);
    }
  }
  if (best_rank < 0) {
    throw StateError("every stored size assignment diverged during retraining");
  }

  RetrainOutcome out;
  out.dims = best_record->dims;
  out.chosen_rank = best_rank + 1;
  out.sparsity = sparsity_of(out.dims, config.backbone.d_max);
  out.val_mean_q = best_val;
  out.test_summary = evaluator.topk_summary(*best, Evaluator::Split::test);
  if (!model_out.empty()) best->save_checkpoint(model_out);
  return out;
}

namespace {

void check_target(double target) {
  if (!(target > 0.0 && target < 1.0)) {
    throw InputError("sparsity target must lie in (0, 1)");
  }
}

BaselineOutcome finish_baseline(const InteractionDataset& data,
                                const EngineConfig& config,
                                std::vector<int32_t> dims, uint64_t train_seed) {
  const Recommender rec = train_to_convergence(data, config.backbone, dims, train_seed,
                                               config.retrain, config.threads);
  Evaluator evaluator(data, config.threads);
  BaselineOutcome out;
  out.sparsity = sparsity_of(dims, config.backbone.d_max);
  out.dims = std::move(dims);
  out.test_summary = evaluator.topk_summary(rec, Evaluator::Split::test);
  return out;
}

}  // namespace

BaselineOutcome baseline_equal_sizes(const InteractionDataset& data,
                                     const EngineConfig& config, double target) {
  config.validate();
  check_target(target);
  const int d_max = config.backbone.d_max;
  const int size = std::max(
      1, static_cast<int>(std::floor((1.0 - target) * static_cast<double>(d_max))));
  std::vector<int32_t> dims(static_cast<size_t>(data.num_entities()), size);
  return finish_baseline(data, config, std::move(dims),
                         SeedTree(config.seed).child("baseline-es").seed());
}

BaselineOutcome baseline_mixed_random(const InteractionDataset& data,
                                      const EngineConfig& config, double target,
                                      uint64_t seed) {
  config.validate();
  check_target(target);
  const int d_max = config.backbone.d_max;
  const int64_t n = data.num_entities();
  const int hi = std::max(
      1, 2 * static_cast<int>(std::floor((1.0 - target) * static_cast<double>(d_max))));
  const SeedTree seeds(seed);
  Rng draw = seeds.child("dims").rng();
  std::vector<int32_t> dims(static_cast<size_t>(n));
  for (auto& d : dims) d = static_cast<int32_t>(draw.uniform_int(1, hi));

  // Shrink proportionally (floored, never below 1) until the parameter
  // budget holds. Stops once every size is pinned at 1.
  const double budget = (1.0 - target) * static_cast<double>(n) * d_max;
  while (true) {
    const int64_t used = std::accumulate(dims.begin(), dims.end(), int64_t{0});
    if (static_cast<double>(used) <= budget) break;
    const double scale = budget / static_cast<double>(used);
    bool changed = false;
    for (auto& d : dims) {
      const auto shrunk = std::max<int32_t>(
          1, static_cast<int32_t>(std::floor(static_cast<double>(d) * scale)));
      if (shrunk != d) {
        d = shrunk;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return finish_baseline(data, config, std::move(dims), seeds.child("train").seed());
}

FullEvalBaseline build_full_baseline(const InteractionDataset& data,
                                     const EngineConfig& config) {
  config.validate();
  std::vector<int32_t> dims(static_cast<size_t>(data.num_entities()),
                            config.backbone.d_max);
  const Recommender rec =
      train_to_convergence(data, config.backbone, dims,
                           SeedTree(config.seed).child("full-baseline").seed(),
                           config.retrain, config.threads);
  Evaluator evaluator(data, config.threads);
  const Evaluator::PassResult pass =
      evaluator.evaluate_users(rec, Evaluator::Split::validation);
  return make_full_baseline(pass.user_eval, evaluator);
}

}  // namespace ciess
