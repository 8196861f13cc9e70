#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciess/common.hpp"
#include "ciess/corpus.hpp"
#include "ciess/embedding.hpp"

namespace ciess {

enum class Backbone { mf_dot, lightgcn_lite };

const char* backbone_name(Backbone b);
Backbone parse_backbone(const std::string& name);

struct RecommenderConfig {
  Backbone backbone = Backbone::mf_dot;
  int d_max = 128;
  double learning_rate = 1e-2;
  double l2_weight = 1e-4;
  /// Propagation hops for lightgcn-lite; 0 degrades to the plain dot score.
  int num_layers = 2;
  int batch_size = 64;
  double init_scale = 0.1;
  uint64_t seed = 1;

  void validate() const;
};

/// Latent-factor scorer over a masked table. Pairwise-ranking training
/// updates only the unmasked prefix of each touched row, so masked
/// coordinates carry zero gradient by construction.
class Recommender {
 public:
  Recommender(const InteractionDataset& data, RecommenderConfig config);

  const RecommenderConfig& config() const { return config_; }
  const InteractionDataset& data() const { return *data_; }
  MaskedEmbeddingTable& table() { return table_; }
  const MaskedEmbeddingTable& table() const { return table_; }

  double score(int32_t user, int32_t item) const;
  /// Scores for every item; the evaluation hot path.
  std::vector<double> score_all_items(int32_t user) const;
  /// Top-k item ids by descending score, the user's train items excluded,
  /// ties broken toward the smaller item id.
  std::vector<int32_t> rank_items(int32_t user, int k) const;

  /// Runs `epochs` passes of |train| sampled ranking triples each; returns
  /// the mean loss per epoch. Throws TrainingDiverged on non-finite loss.
  std::vector<double> train_epochs(int epochs, Rng& rng);

  /// Fresh value draw and optimizer state; sizes are preserved.
  void reinit(uint64_t seed);

  /// Puts back a value snapshot taken from this table (keeps cached
  /// derived state consistent; use instead of writing the table directly).
  void restore_table_values(const std::vector<double>& values);

  struct TripleGrads {
    double loss = 0.0;
    std::vector<double> user;  // d_max-long, zero beyond each row's size
    std::vector<double> pos;
    std::vector<double> neg;
  };
  /// Loss and exact gradients for one triple at the current parameters,
  /// exposed for verification.
  TripleGrads bpr_gradients(int32_t user, int32_t pos, int32_t neg) const;
  double bpr_loss(int32_t user, int32_t pos, int32_t neg) const;

  void save_checkpoint(const std::string& path) const;
  static Recommender load_checkpoint(const std::string& path,
                                     const InteractionDataset& data);

 private:
  struct PendingGrad {
    int64_t row;
    std::vector<double> g;  // first dims(row) coordinates
  };

  void build_graph();
  void refresh_neighbor_sums() const;
  const std::vector<double>& neighbor_sums() const;
  void add_triple_gradients(const InteractionDataset::BprTriple& t,
                            const std::vector<double>& aggregate, double* loss_out);
  void flush_batch();
  void adam_step(int64_t row, const double* g, int d);

  const InteractionDataset* data_;
  RecommenderConfig config_;
  MaskedEmbeddingTable table_;

  // symmetric-normalized train graph in CSR form (entity-indexed)
  std::vector<int64_t> nbr_offset_;
  std::vector<int64_t> nbr_id_;
  std::vector<double> nbr_weight_;

  // sum of propagated layers 1..L, refreshed per epoch / on demand
  mutable std::vector<double> hop_sum_;
  mutable std::vector<int32_t> hop_sum_dims_;  // sizes the cache was built under
  mutable bool hop_sum_stale_ = true;

  // lazy per-row Adam over the table
  std::vector<double> adam_m_, adam_v_;
  int64_t adam_step_count_ = 0;

  std::vector<PendingGrad> batch_;
  std::vector<int32_t> batch_slot_;  // entity -> index into batch_, -1 when absent
};

}  // namespace ciess
