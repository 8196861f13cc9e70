#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ciess/corpus.hpp"
#include "ciess/recommender.hpp"

namespace ciess {

/// |top-k of ranked that are relevant| / |relevant|. `relevant` must be
/// sorted ascending and nonempty.
double recall_at_k(std::span<const int32_t> ranked, std::span<const int32_t> relevant,
                   int k);

/// Binary-gain NDCG: hit at 1-based rank r contributes 1/log2(r + 1),
/// normalized by the best achievable DCG at this cutoff.
double ndcg_at_k(std::span<const int32_t> ranked, std::span<const int32_t> relevant,
                 int k);

inline constexpr std::array<int, 3> kEnsembleCutoffs{5, 10, 20};

/// Mean of recall and NDCG over the cutoff set: sum of both metrics at each
/// cutoff, divided by 2 * |cutoffs|.
double ensemble_eval(std::span<const int32_t> ranked, std::span<const int32_t> relevant);

inline constexpr double kBaselineFloor = 1e-6;

/// min(current / max(baseline, floor), 1): how much of the full-size
/// model's quality a size-restricted model retains, clipped at parity.
double quality_ratio(double current, double baseline);

struct TopkSummary {
  double recall5 = 0.0;
  double recall20 = 0.0;
  double ndcg5 = 0.0;
  double ndcg20 = 0.0;
  int64_t users_counted = 0;
};

/// Per-user evaluation over one dataset split. Users without relevant items
/// in the target split score 0 and are excluded from summary means.
class Evaluator {
 public:
  enum class Split { validation, test };

  Evaluator(const InteractionDataset& data, int threads = 1);

  struct PassResult {
    std::vector<double> user_eval;  // ensemble score per user
    TopkSummary summary;
  };

  /// One ranking pass per user: ensemble scores and the summary metrics
  /// computed from the same top-20 lists.
  PassResult evaluate_users(const Recommender& rec, Split split) const;

  double eval_user(const Recommender& rec, int32_t user, Split split) const;

  /// Per-item scores: mean ensemble score of the item's train-split users.
  std::vector<double> item_evals(const std::vector<double>& user_evals) const;

  TopkSummary topk_summary(const Recommender& rec, Split split) const;

 private:
  const std::vector<int32_t>& relevant_for(int32_t user, Split split) const;

  const InteractionDataset* data_;
  int threads_;
};

/// Reference quality of the unrestricted model, the denominator of every
/// quality ratio. Values are floored to keep ratios finite.
struct FullEvalBaseline {
  std::vector<double> user_eval;
  std::vector<double> item_eval;
};

FullEvalBaseline make_full_baseline(const std::vector<double>& user_evals,
                                    const Evaluator& evaluator);

void save_baseline_cache(const std::string& path, const FullEvalBaseline& baseline,
                         const std::string& backbone, int d_max);

struct BaselineCache {
  FullEvalBaseline baseline;
  std::string backbone;
  int d_max = 0;
};

BaselineCache load_baseline_cache(const std::string& path);

/// Per-entity quality ratios for one evaluation pass (users then items).
struct QualitySnapshot {
  std::vector<double> q;
  double mean_users = 0.0;
  double mean_items = 0.0;
  double mean_all = 0.0;
};

QualitySnapshot quality_snapshot(const std::vector<double>& user_evals,
                                 const std::vector<double>& item_evals,
                                 const FullEvalBaseline& baseline);

}  // namespace ciess
