#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ciess/common.hpp"

namespace ciess {

/// Dense embedding table with one usable prefix length per entity. An entity
/// with size d keeps its first d coordinates; the rest read as zero and are
/// never trained. Sizes are stored as integers instead of materializing a
/// 0/1 mask row per entity.
class MaskedEmbeddingTable {
 public:
  MaskedEmbeddingTable(int64_t num_entities, int d_max);

  int64_t num_entities() const { return num_entities_; }
  int d_max() const { return d_max_; }

  /// Draws every value from N(0, scale^2). Sizes are left untouched.
  void init_values(uint64_t seed, double scale);

  std::span<const double> row(int64_t n) const;
  std::span<double> row_mut(int64_t n);

  /// Masked copy of a row: first dim(n) entries as stored, zeros after.
  std::vector<double> lookup(int64_t n) const;

  int dim(int64_t n) const;
  const std::vector<int32_t>& dims() const { return dims_; }
  void set_dim(int64_t n, int32_t d);
  void set_dims(const std::vector<int32_t>& assignment);

  int64_t used_parameters() const;

  /// 1 - used / (num_entities * d_max).
  double sparsity() const;

  /// Raw value storage, for checkpoint-style copies (e.g. keeping the best
  /// epoch during early stopping).
  std::vector<double> snapshot_values() const { return values_; }
  void restore_values(const std::vector<double>& values);

 private:
  void check_entity(int64_t n) const;

  int64_t num_entities_;
  int d_max_;
  std::vector<double> values_;
  std::vector<int32_t> dims_;
};

/// Size-assignment artifact: a small header followed by one
/// `entity_id<TAB>size` line per entity.
void save_mask_file(const std::string& path, const std::vector<int32_t>& dims,
                    int d_max, int32_t num_users, int32_t num_items);

struct MaskFileData {
  int d_max = 0;
  int32_t num_users = 0;
  int32_t num_items = 0;
  std::vector<int32_t> dims;
};

MaskFileData load_mask_file(const std::string& path);

}  // namespace ciess
