#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ciess/common.hpp"
#include "ciess/corpus.hpp"
#include "ciess/metrics.hpp"
#include "ciess/recommender.hpp"
#include "ciess/td3.hpp"
#include "ciess/walk.hpp"

namespace ciess {

struct SearchConfig {
  int episodes = 30;
  int iterations = 10;
  double lambda = 0.4;  // size-cost weight in the reward
  NoiseKind noise = NoiseKind::gaussian;
  double sigma = 6.0;
  bool random_walk = true;
  int walk_threshold = 5;
  int walk_length = 5;
  int epochs_per_iter = 5;
  int top_l = 5;
  std::vector<double> targets = {0.80, 0.90, 0.95};
  /// Escape hatch: keep the recommender parameters across iterations
  /// instead of drawing a fresh table per size assignment.
  bool warm_start = false;

  void validate() const;
};

struct RetrainConfig {
  int max_epochs = 200;
  int patience = 10;  // epochs without validation NDCG@20 improvement

  void validate() const;
};

struct EngineConfig {
  uint64_t seed = 42;
  int threads = 0;  // 0 = machine parallelism
  RecommenderConfig backbone;
  SearchConfig search;
  TD3Config td3;
  RetrainConfig retrain;

  void validate() const;
};

struct CandidateRecord {
  std::vector<int32_t> dims;
  double mean_q = 0.0;  // validation quality mean at admission time
  double sparsity = 0.0;
  int episode = 0;
  int iteration = 0;
};

/// Rolling top-l size assignments for one sparsity target. Admission
/// requires the assignment to satisfy the target; duplicates of an already
/// stored assignment are ignored.
class CandidateMaskSet {
 public:
  CandidateMaskSet(double target, int top_l);

  double target() const { return target_; }
  bool offer(CandidateRecord record);
  const std::vector<CandidateRecord>& records() const { return records_; }

 private:
  double target_;
  int top_l_;
  std::vector<CandidateRecord> records_;  // descending mean_q
};

struct IterationRecord {
  int episode = 0;
  int iteration = 0;
  double mean_action_users = 0.0;
  double mean_action_items = 0.0;
  double mean_reward = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  int64_t buffer_len = 0;
  bool aborted = false;
  // evaluation snapshot for the metrics log
  double mean_q_users = 0.0;
  double mean_q_items = 0.0;
  double sparsity = 0.0;
  TopkSummary val_summary;
};

struct SearchResult {
  std::vector<CandidateMaskSet> candidates;  // one per target, same order
  std::vector<IterationRecord> trace;
};

/// Episode/iteration search loop: noisy policy proposals (optionally
/// refined by a critic-guided walk), short retraining of a fresh
/// recommender under the proposed sizes, per-entity quality rewards, and
/// TD3 updates from the two replay buffers.
class SearchDriver {
 public:
  SearchDriver(const InteractionDataset& data, const EngineConfig& config,
               const FullEvalBaseline& baseline);

  /// Called after every iteration; wire this to the trace writer.
  std::function<void(const IterationRecord&)> on_iteration;

  SearchResult run();

 private:
  const InteractionDataset& data_;
  EngineConfig config_;
  const FullEvalBaseline& baseline_;
};

/// Trains a fresh recommender under fixed sizes until validation NDCG@20
/// stops improving, then restores the best epoch's parameters.
Recommender train_to_convergence(const InteractionDataset& data,
                                 RecommenderConfig backbone,
                                 const std::vector<int32_t>& dims, uint64_t seed,
                                 const RetrainConfig& retrain, int threads);

struct RetrainOutcome {
  std::vector<int32_t> dims;
  int chosen_rank = 0;  // 1-based rank inside the candidate set
  double sparsity = 0.0;
  double val_mean_q = 0.0;
  TopkSummary test_summary;
};

/// Retrains every stored candidate to convergence, keeps the one with the
/// best validation quality mean, and reports its test metrics. The winning
/// model is written to `model_out` when non-empty.
RetrainOutcome selective_retrain(const InteractionDataset& data,
                                 const EngineConfig& config,
                                 const CandidateMaskSet& candidates,
                                 const FullEvalBaseline& baseline,
                                 const std::string& model_out);

struct BaselineOutcome {
  std::vector<int32_t> dims;
  double sparsity = 0.0;
  TopkSummary test_summary;
};

/// Equal sizes: every entity gets floor((1 - c) * d_max), at least 1.
BaselineOutcome baseline_equal_sizes(const InteractionDataset& data,
                                     const EngineConfig& config, double target);

/// Mixed random sizes: uniform draws from [1, 2 * floor((1 - c) * d_max)]
/// rescaled until the total parameter budget (1 - c) * N * d_max holds.
BaselineOutcome baseline_mixed_random(const InteractionDataset& data,
                                      const EngineConfig& config, double target,
                                      uint64_t seed);

/// Trains the unrestricted reference model and evaluates every user and
/// item with it; the denominators of all quality ratios.
FullEvalBaseline build_full_baseline(const InteractionDataset& data,
                                     const EngineConfig& config);

double sparsity_of(const std::vector<int32_t>& dims, int d_max);

}  // namespace ciess
