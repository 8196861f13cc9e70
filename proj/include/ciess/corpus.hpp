#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciess/common.hpp"

namespace ciess {

/// One implicit-feedback event, both sides as contiguous 0-based ids
/// (user in [0, num_users), item in [0, num_items)).
struct Interaction {
  int32_t user = 0;
  int32_t item = 0;
};

struct RawPair {
  std::string user;
  std::string item;
};

enum class PairFormat { csv, tsv };

/// Reads user/item token pairs. Extra columns are ignored, ratings are
/// treated as binary feedback. A leading header row is dropped when it is
/// non-numeric while the following row is numeric. Malformed rows raise
/// InputError with the 1-based row number.
std::vector<RawPair> load_interactions(const std::string& path, PairFormat format);

struct SplitRatios {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;
};

struct SplitOptions {
  SplitRatios ratios;
  uint64_t seed = 0;
  /// Users and items with fewer distinct interactions than this are dropped
  /// (iterated until stable). At the default of 4 every surviving entity is
  /// guaranteed at least one train and one validation interaction.
  int min_interactions = 4;
};

/// Immutable split dataset. Entity ids run users-first: entity n is user n
/// for n < num_users, otherwise item (n - num_users).
class InteractionDataset {
 public:
  static InteractionDataset split(const std::vector<RawPair>& pairs,
                                  const SplitOptions& options);

  int32_t num_users() const { return num_users_; }
  int32_t num_items() const { return num_items_; }
  int64_t num_entities() const { return int64_t(num_users_) + num_items_; }

  int64_t entity_of_user(int32_t u) const { return u; }
  int64_t entity_of_item(int32_t v) const { return int64_t(num_users_) + v; }

  const std::vector<Interaction>& train() const { return train_; }
  const std::vector<Interaction>& val() const { return val_; }
  const std::vector<Interaction>& test() const { return test_; }

  /// Train-split interaction count per entity (users then items).
  const std::vector<int64_t>& popularity() const { return popularity_; }

  /// Sorted ascending; binary-searchable.
  const std::vector<int32_t>& train_items(int32_t u) const { return train_by_user_[u]; }
  const std::vector<int32_t>& val_items(int32_t u) const { return val_by_user_[u]; }
  const std::vector<int32_t>& test_items(int32_t u) const { return test_by_user_[u]; }
  const std::vector<int32_t>& train_users_of_item(int32_t v) const { return train_by_item_[v]; }

  bool in_train(int32_t u, int32_t v) const;

  const std::vector<std::string>& user_tokens() const { return user_tokens_; }
  const std::vector<std::string>& item_tokens() const { return item_tokens_; }

  struct BprTriple {
    int32_t user;
    int32_t pos;
    int32_t neg;
  };

  /// (user, positive) uniform over train pairs; negative uniform over the
  /// items the user has no train interaction with.
  BprTriple sample_bpr_triple(Rng& rng) const;

  void save_snapshot(const std::string& path) const;
  static InteractionDataset load_snapshot(const std::string& path);

 private:
  InteractionDataset() = default;
  void build_index();
  void check_invariants(int min_interactions) const;

  int32_t num_users_ = 0;
  int32_t num_items_ = 0;
  std::vector<std::string> user_tokens_;
  std::vector<std::string> item_tokens_;
  std::vector<Interaction> train_, val_, test_;
  std::vector<std::vector<int32_t>> train_by_user_, val_by_user_, test_by_user_;
  std::vector<std::vector<int32_t>> train_by_item_;
  std::vector<int64_t> popularity_;
};

}  // namespace ciess
