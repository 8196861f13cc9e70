#include "ciess/embedding.hpp"

#include <fstream>
#include <sstream>

namespace ciess {

MaskedEmbeddingTable::MaskedEmbeddingTable(int64_t num_entities, int d_max)
    : num_entities_(num_entities), d_max_(d_max) {
  if (num_entities <= 0) throw InputError("embedding table needs at least one entity");
  if (d_max < 1) throw InputError("d_max must be at least 1");
  values_.assign(static_cast<size_t>(num_entities_) * d_max_, 0.0);
  dims_.assign(num_entities_, d_max_);
}

void MaskedEmbeddingTable::init_values(uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& v : values_) v = rng.normal(0.0, scale);
}

void MaskedEmbeddingTable::check_entity(int64_t n) const {
  if (n < 0 || n >= num_entities_) {
    throw std::out_of_range("entity id " + std::to_string(n) + " out of range");
  }
}

std::span<const double> MaskedEmbeddingTable::row(int64_t n) const {
  check_entity(n);
  return {values_.data() + static_cast<size_t>(n) * d_max_, static_cast<size_t>(d_max_)};
}

std::span<double> MaskedEmbeddingTable::row_mut(int64_t n) {
  check_entity(n);
  return {values_.data() + static_cast<size_t>(n) * d_max_, static_cast<size_t>(d_max_)};
}

std::vector<double> MaskedEmbeddingTable::lookup(int64_t n) const {
  auto r = row(n);
  std::vector<double> out(d_max_, 0.0);
  const int d = dims_[n];
  for (int i = 0; i < d; ++i) out[i] = r[i];
  return out;
}

int MaskedEmbeddingTable::dim(int64_t n) const {
  check_entity(n);
  return dims_[n];
}

void MaskedEmbeddingTable::set_dim(int64_t n, int32_t d) {
  check_entity(n);
  if (d < 1 || d > d_max_) {
    throw InputError("embedding size " + std::to_string(d) + " outside [1, " +
                     std::to_string(d_max_) + "]");
  }
  dims_[n] = d;
}

void MaskedEmbeddingTable::set_dims(const std::vector<int32_t>& assignment) {
  if (static_cast<int64_t>(assignment.size()) != num_entities_) {
    throw InputError("size assignment has " + std::to_string(assignment.size()) +
                     " entries, expected " + std::to_string(num_entities_));
  }
  for (int32_t d : assignment) {
    if (d < 1 || d > d_max_) {
      throw InputError("embedding size " + std::to_string(d) + " outside [1, " +
                       std::to_string(d_max_) + "]");
    }
  }
  dims_ = assignment;
}

int64_t MaskedEmbeddingTable::used_parameters() const {
  int64_t total = 0;
  for (int32_t d : dims_) total += d;
  return total;
}

double MaskedEmbeddingTable::sparsity() const {
  return 1.0 - static_cast<double>(used_parameters()) /
                   (static_cast<double>(num_entities_) * d_max_);
}

void MaskedEmbeddingTable::restore_values(const std::vector<double>& values) {
  if (values.size() != values_.size()) {
    throw InputError("restore_values: value buffer size mismatch");
  }
  values_ = values;
}

void save_mask_file(const std::string& path, const std::vector<int32_t>& dims,
                    int d_max, int32_t num_users, int32_t num_items) {
  if (static_cast<int64_t>(dims.size()) != int64_t(num_users) + num_items) {
    throw InputError("mask file: dims size does not match entity counts");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write mask file: " + path);
  out << "ciess-mask-v1\td_max=" << d_max << "\tusers=" << num_users
      << "\titems=" << num_items << "\n";
  for (size_t n = 0; n < dims.size(); ++n) out << n << "\t" << dims[n] << "\n";
  if (!out) throw StateError("short write on mask file: " + path);
}

MaskFileData load_mask_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open mask file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw InputError(path + ": empty mask file");
  MaskFileData data;
  {
    std::istringstream hs(header);
    std::string magic, fd, fu, fi;
    if (!std::getline(hs, magic, '\t') || magic != "ciess-mask-v1" ||
        !std::getline(hs, fd, '\t') || fd.rfind("d_max=", 0) != 0 ||
        !std::getline(hs, fu, '\t') || fu.rfind("users=", 0) != 0 ||
        !std::getline(hs, fi, '\t') || fi.rfind("items=", 0) != 0) {
      throw InputError(path + ": bad mask file header");
    }
    data.d_max = std::stoi(fd.substr(6));
    data.num_users = std::stoi(fu.substr(6));
    data.num_items = std::stoi(fi.substr(6));
  }
  const int64_t n_entities = int64_t(data.num_users) + data.num_items;
  data.dims.resize(n_entities);
  std::string line;
  for (int64_t i = 0; i < n_entities; ++i) {
    if (!std::getline(in, line)) throw InputError(path + ": truncated mask file");
    std::istringstream ls(line);
    int64_t id;
    int32_t d;
    if (!(ls >> id >> d) || id != i || d < 1 || d > data.d_max) {
      throw InputError(path + ": bad entity line " + std::to_string(i));
    }
    data.dims[i] = d;
  }
  return data;
}

}  // namespace ciess
