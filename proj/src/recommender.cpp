#include "ciess/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ciess {

namespace {

double softplus_neg(double x) {
  // ln(1 + exp(-x)) without overflow
  return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

double masked_dot(std::span<const double> a, int da, std::span<const double> b, int db) {
  const int d = std::min(da, db);
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

constexpr char kCheckpointMagic[8] = {'C', 'I', 'E', 'S', 'S', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

const char* backbone_name(Backbone b) {
  return b == Backbone::mf_dot ? "mf-dot" : "lightgcn-lite";
}

Backbone parse_backbone(const std::string& name) {
  if (name == "mf-dot") return Backbone::mf_dot;
  if (name == "lightgcn-lite") return Backbone::lightgcn_lite;
  throw InputError("unknown backbone: " + name);
}

void RecommenderConfig::validate() const {
  if (d_max < 1) throw InputError("d_max must be at least 1");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (l2_weight < 0.0) throw InputError("l2_weight must be non-negative");
  if (num_layers < 0 || num_layers > 3) throw InputError("num_layers must be in [0, 3]");
  if (batch_size < 1) throw InputError("batch_size must be at least 1");
  if (!(init_scale > 0.0) && init_scale != 0.0) {
    throw InputError("init_scale must be non-negative");
  }
}

Recommender::Recommender(const InteractionDataset& data, RecommenderConfig config)
    : data_(&data),
      config_(config),
      table_(data.num_entities(), config.d_max) {
  config_.validate();
  table_.init_values(config_.seed, config_.init_scale);
  adam_m_.assign(static_cast<size_t>(data.num_entities()) * config_.d_max, 0.0);
  adam_v_.assign(adam_m_.size(), 0.0);
  batch_slot_.assign(data.num_entities(), -1);
  if (config_.backbone == Backbone::lightgcn_lite) build_graph();
}

void Recommender::build_graph() {
  const int64_t n = data_->num_entities();
  nbr_offset_.assign(n + 1, 0);
  for (const auto& x : data_->train()) {
    nbr_offset_[data_->entity_of_user(x.user) + 1]++;
    nbr_offset_[data_->entity_of_item(x.item) + 1]++;
  }
  for (int64_t i = 0; i < n; ++i) nbr_offset_[i + 1] += nbr_offset_[i];
  nbr_id_.resize(nbr_offset_[n]);
  nbr_weight_.resize(nbr_offset_[n]);
  std::vector<int64_t> cursor(nbr_offset_.begin(), nbr_offset_.end() - 1);
  const auto& pop = data_->popularity();
  for (const auto& x : data_->train()) {
    const int64_t eu = data_->entity_of_user(x.user);
    const int64_t ev = data_->entity_of_item(x.item);
    const double w = 1.0 / std::sqrt(static_cast<double>(pop[eu]) * pop[ev]);
    nbr_id_[cursor[eu]] = ev;
    nbr_weight_[cursor[eu]++] = w;
    nbr_id_[cursor[ev]] = eu;
    nbr_weight_[cursor[ev]++] = w;
  }
}

void Recommender::refresh_neighbor_sums() const {
  const int64_t n = table_.num_entities();
  const int d = table_.d_max();
  const int L = config_.num_layers;
  hop_sum_.assign(static_cast<size_t>(n) * d, 0.0);
  hop_sum_dims_ = table_.dims();
  if (L == 0) {
    hop_sum_stale_ = false;
    return;
  }
  // layer 0: masked table
  std::vector<double> cur(static_cast<size_t>(n) * d, 0.0);
  for (int64_t e = 0; e < n; ++e) {
    auto r = table_.row(e);
    const int de = table_.dims()[e];
    double* dst = cur.data() + static_cast<size_t>(e) * d;
    for (int k = 0; k < de; ++k) dst[k] = r[k];
  }
  std::vector<double> next(cur.size());
  for (int layer = 0; layer < L; ++layer) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int64_t e = 0; e < n; ++e) {
      double* dst = next.data() + static_cast<size_t>(e) * d;
      for (int64_t j = nbr_offset_[e]; j < nbr_offset_[e + 1]; ++j) {
        const double* src = cur.data() + static_cast<size_t>(nbr_id_[j]) * d;
        const double w = nbr_weight_[j];
        for (int k = 0; k < d; ++k) dst[k] += w * src[k];
      }
    }
    for (size_t i = 0; i < hop_sum_.size(); ++i) hop_sum_[i] += next[i];
    cur.swap(next);
  }
  hop_sum_stale_ = false;
}

const std::vector<double>& Recommender::neighbor_sums() const {
  // Sizes can be reassigned through the table between refreshes, which
  // changes the layer-0 input; treat that as staleness too.
  if (hop_sum_stale_ || hop_sum_dims_ != table_.dims()) refresh_neighbor_sums();
  return hop_sum_;
}

double Recommender::score(int32_t user, int32_t item) const {
  const int64_t eu = data_->entity_of_user(user);
  const int64_t ev = data_->entity_of_item(item);
  const auto& dims = table_.dims();
  if (config_.backbone == Backbone::mf_dot) {
    return masked_dot(table_.row(eu), dims[eu], table_.row(ev), dims[ev]);
  }
  const auto& hops = neighbor_sums();
  const int d = table_.d_max();
  const double c = 1.0 / (config_.num_layers + 1);
  auto ru = table_.row(eu);
  auto rv = table_.row(ev);
  const double* su = hops.data() + static_cast<size_t>(eu) * d;
  const double* sv = hops.data() + static_cast<size_t>(ev) * d;
  double acc = 0.0;
  for (int k = 0; k < d; ++k) {
    const double pu = ((k < dims[eu] ? ru[k] : 0.0) + su[k]) * c;
    const double pv = ((k < dims[ev] ? rv[k] : 0.0) + sv[k]) * c;
    acc += pu * pv;
  }
  return acc;
}

std::vector<double> Recommender::score_all_items(int32_t user) const {
  const int32_t nv = data_->num_items();
  std::vector<double> out(nv, 0.0);
  const int64_t eu = data_->entity_of_user(user);
  const auto& dims = table_.dims();
  if (config_.backbone == Backbone::mf_dot) {
    auto ru = table_.row(eu);
    const int du = dims[eu];
    for (int32_t v = 0; v < nv; ++v) {
      const int64_t ev = data_->entity_of_item(v);
      out[v] = masked_dot(ru, du, table_.row(ev), dims[ev]);
    }
    return out;
  }
  const auto& hops = neighbor_sums();
  const int d = table_.d_max();
  const double c = 1.0 / (config_.num_layers + 1);
  std::vector<double> pu(d);
  {
    auto ru = table_.row(eu);
    const double* su = hops.data() + static_cast<size_t>(eu) * d;
    for (int k = 0; k < d; ++k) pu[k] = ((k < dims[eu] ? ru[k] : 0.0) + su[k]) * c;
  }
  for (int32_t v = 0; v < nv; ++v) {
    const int64_t ev = data_->entity_of_item(v);
    auto rv = table_.row(ev);
    const double* sv = hops.data() + static_cast<size_t>(ev) * d;
    const int dv = dims[ev];
    double acc = 0.0;
    for (int k = 0; k < dv; ++k) acc += (rv[k] + sv[k]) * pu[k];
    for (int k = dv; k < d; ++k) acc += sv[k] * pu[k];
    out[v] = acc * c;
  }
  return out;
}

std::vector<int32_t> Recommender::rank_items(int32_t user, int k) const {
  if (k < 1) throw InputError("rank_items: k must be at least 1");
  const std::vector<double> scores = score_all_items(user);
  const auto& owned = data_->train_items(user);
  std::vector<std::pair<double, int32_t>> pool;
  pool.reserve(scores.size());
  for (int32_t v = 0; v < static_cast<int32_t>(scores.size()); ++v) {
    if (!std::binary_search(owned.begin(), owned.end(), v)) pool.push_back({scores[v], v});
  }
  auto better = [](const std::pair<double, int32_t>& a, const std::pair<double, int32_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  const size_t take = std::min<size_t>(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + take, pool.end(), better);
  std::vector<int32_t> out(take);
  for (size_t i = 0; i < take; ++i) out[i] = pool[i].second;
  return out;
}

void Recommender::add_triple_gradients(const InteractionDataset::BprTriple& t,
                                       const std::vector<double>& hops,
                                       double* loss_out) {
  const int64_t eu = data_->entity_of_user(t.user);
  const int64_t ev = data_->entity_of_item(t.pos);
  const int64_t en = data_->entity_of_item(t.neg);
  const auto& dims = table_.dims();
  const int d = table_.d_max();
  const bool graph = config_.backbone == Backbone::lightgcn_lite && config_.num_layers > 0;
  const double c = graph ? 1.0 / (config_.num_layers + 1) : 1.0;
  const double gamma = config_.l2_weight;

  auto ru = table_.row(eu);
  auto rv = table_.row(ev);
  auto rn = table_.row(en);
  const double* su = graph ? hops.data() + static_cast<size_t>(eu) * d : nullptr;
  const double* sv = graph ? hops.data() + static_cast<size_t>(ev) * d : nullptr;
  const double* sn = graph ? hops.data() + static_cast<size_t>(en) * d : nullptr;

  auto rep = [&](std::span<const double> row, int dim, const double* s, int k) {
    const double base = k < dim ? row[k] : 0.0;
    return graph ? (base + s[k]) * c : base;
  };

  double x = 0.0, reg = 0.0;
  for (int k = 0; k < d; ++k) {
    const double pu = rep(ru, dims[eu], su, k);
    x += pu * (rep(rv, dims[ev], sv, k) - rep(rn, dims[en], sn, k));
  }
  for (int k = 0; k < dims[eu]; ++k) reg += ru[k] * ru[k];
  for (int k = 0; k < dims[ev]; ++k) reg += rv[k] * rv[k];
  for (int k = 0; k < dims[en]; ++k) reg += rn[k] * rn[k];
  *loss_out = softplus_neg(x) + gamma * reg;

  const double dldx = -1.0 / (1.0 + std::exp(x));

  auto slot_for = [&](int64_t row) -> std::vector<double>& {
    int32_t& slot = batch_slot_[row];
    if (slot < 0) {
      slot = static_cast<int32_t>(batch_.size());
      batch_.push_back({row, std::vector<double>(dims[row], 0.0)});
    }
    return batch_[slot].g;
  };

  auto& gu = slot_for(eu);
  for (int k = 0; k < dims[eu]; ++k) {
    gu[k] += dldx * c * (rep(rv, dims[ev], sv, k) - rep(rn, dims[en], sn, k)) +
             2.0 * gamma * ru[k];
  }
  auto& gv = slot_for(ev);
  for (int k = 0; k < dims[ev]; ++k) {
    gv[k] += dldx * c * rep(ru, dims[eu], su, k) + 2.0 * gamma * rv[k];
  }
  auto& gn = slot_for(en);
  for (int k = 0; k < dims[en]; ++k) {
    gn[k] += -dldx * c * rep(ru, dims[eu], su, k) + 2.0 * gamma * rn[k];
  }
}

void Recommender::adam_step(int64_t row, const double* g, int d) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_step_count_));
  double* m = adam_m_.data() + static_cast<size_t>(row) * table_.d_max();
  double* v = adam_v_.data() + static_cast<size_t>(row) * table_.d_max();
  auto values = table_.row_mut(row);
  for (int k = 0; k < d; ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
    values[k] -= config_.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
  }
}

void Recommender::flush_batch() {
  if (batch_.empty()) return;
  adam_step_count_++;
  std::sort(batch_.begin(), batch_.end(),
            [](const PendingGrad& a, const PendingGrad& b) { return a.row < b.row; });
  for (const auto& pg : batch_) {
    adam_step(pg.row, pg.g.data(), static_cast<int>(pg.g.size()));
    batch_slot_[pg.row] = -1;
  }
  batch_.clear();
  hop_sum_stale_ = true;
}

std::vector<double> Recommender::train_epochs(int epochs, Rng& rng) {
  if (epochs < 1) throw InputError("train_epochs: epochs must be at least 1");
  std::vector<double> mean_losses;
  mean_losses.reserve(epochs);
  const int64_t steps = static_cast<int64_t>(data_->train().size());
  if (steps == 0) throw StateError("cannot train: train split is empty");
  const bool graph = config_.backbone == Backbone::lightgcn_lite && config_.num_layers > 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Neighbor aggregates are frozen for the duration of one epoch and
    // recomputed from the updated table before the next.
    if (graph) refresh_neighbor_sums();
    static const std::vector<double> kNoHops;
    const std::vector<double>& hops = graph ? hop_sum_ : kNoHops;
    double loss_sum = 0.0;
    int in_batch = 0;
    for (int64_t s = 0; s < steps; ++s) {
      double loss = 0.0;
      add_triple_gradients(data_->sample_bpr_triple(rng), hops, &loss);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite ranking loss at epoch " +
                               std::to_string(epoch + 1) + ", step " + std::to_string(s));
      }
      loss_sum += loss;
      if (++in_batch == config_.batch_size) {
        flush_batch();
        in_batch = 0;
      }
    }
    if (in_batch > 0) flush_batch();
    mean_losses.push_back(loss_sum / static_cast<double>(steps));
  }
  return mean_losses;
}

void Recommender::reinit(uint64_t seed) {
  config_.seed = seed;
  table_.init_values(seed, config_.init_scale);
  std::fill(adam_m_.begin(), adam_m_.end(), 0.0);
  std::fill(adam_v_.begin(), adam_v_.end(), 0.0);
  adam_step_count_ = 0;
  batch_.clear();
  std::fill(batch_slot_.begin(), batch_slot_.end(), -1);
  hop_sum_stale_ = true;
}

void Recommender::restore_table_values(const std::vector<double>& values) {
  table_.restore_values(values);
  hop_sum_stale_ = true;
}

Recommender::TripleGrads Recommender::bpr_gradients(int32_t user, int32_t pos,
                                                    int32_t neg) const {
  // The exact gradient of bpr_loss at the current point, computed through
  // the same accumulation path the trainer uses.
  auto& self = const_cast<Recommender&>(*this);
  const bool graph = config_.backbone == Backbone::lightgcn_lite && config_.num_layers > 0;
  if (graph && hop_sum_stale_) refresh_neighbor_sums();
  static const std::vector<double> kNoHops;
  const std::vector<double>& hops = graph ? hop_sum_ : kNoHops;

  // stash pending training state so the probe is side-effect free
  auto saved_batch = std::move(self.batch_);
  self.batch_.clear();
  std::vector<std::pair<int64_t, int32_t>> saved_slots;
  for (int64_t e : {data_->entity_of_user(user), data_->entity_of_item(pos),
                    data_->entity_of_item(neg)}) {
    saved_slots.push_back({e, self.batch_slot_[e]});
    self.batch_slot_[e] = -1;
  }

  TripleGrads out;
  self.add_triple_gradients({user, pos, neg}, hops, &out.loss);
  const int d = table_.d_max();
  out.user.assign(d, 0.0);
  out.pos.assign(d, 0.0);
  out.neg.assign(d, 0.0);
  for (const auto& pg : self.batch_) {
    std::vector<double>* dst = nullptr;
    if (pg.row == data_->entity_of_user(user)) dst = &out.user;
    else if (pg.row == data_->entity_of_item(pos)) dst = &out.pos;
    else dst = &out.neg;
    for (size_t k = 0; k < pg.g.size(); ++k) (*dst)[k] += pg.g[k];
    self.batch_slot_[pg.row] = -1;
  }
  self.batch_ = std::move(saved_batch);
  for (auto& [e, slot] : saved_slots) self.batch_slot_[e] = slot;
  return out;
}

double Recommender::bpr_loss(int32_t user, int32_t pos, int32_t neg) const {
  const double x = score(user, pos) - score(user, neg);
  const auto& dims = table_.dims();
  double reg = 0.0;
  for (int64_t e : {data_->entity_of_user(user), data_->entity_of_item(pos),
                    data_->entity_of_item(neg)}) {
    auto r = table_.row(e);
    for (int k = 0; k < dims[e]; ++k) reg += r[k] * r[k];
  }
  return softplus_neg(x) + config_.l2_weight * reg;
}

void Recommender::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, uint32_t{1});
  write_pod(out, static_cast<uint32_t>(config_.backbone));
  write_pod(out, static_cast<int64_t>(table_.num_entities()));
  write_pod(out, static_cast<int32_t>(table_.d_max()));
  write_pod(out, config_.learning_rate);
  write_pod(out, config_.l2_weight);
  write_pod(out, static_cast<int32_t>(config_.num_layers));
  write_pod(out, static_cast<int32_t>(config_.batch_size));
  write_pod(out, config_.init_scale);
  write_pod(out, config_.seed);
  write_pod(out, data_->num_users());
  write_pod(out, data_->num_items());
  const auto& dims = table_.dims();
  out.write(reinterpret_cast<const char*>(dims.data()),
            static_cast<std::streamsize>(dims.size() * sizeof(int32_t)));
  for (int64_t e = 0; e < table_.num_entities(); ++e) {
    auto r = table_.row(e);
    out.write(reinterpret_cast<const char*>(r.data()),
              static_cast<std::streamsize>(r.size() * sizeof(double)));
  }
  if (!out) throw StateError("short write on checkpoint: " + path);
}

Recommender Recommender::load_checkpoint(const std::string& path,
                                         const InteractionDataset& data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw InputError(path + ": not a ciess checkpoint");
  }
  uint32_t version = 0, backbone = 0;
  int64_t entities = 0;
  int32_t d_max = 0, layers = 0, batch = 0, nu = 0, ni = 0;
  RecommenderConfig cfg;
  read_pod(in, version);
  if (version != 1) throw InputError(path + ": unsupported checkpoint version");
  read_pod(in, backbone);
  if (backbone > 1) throw InputError(path + ": unknown backbone id in checkpoint");
  read_pod(in, entities);
  read_pod(in, d_max);
  read_pod(in, cfg.learning_rate);
  read_pod(in, cfg.l2_weight);
  read_pod(in, layers);
  read_pod(in, batch);
  read_pod(in, cfg.init_scale);
  read_pod(in, cfg.seed);
  read_pod(in, nu);
  read_pod(in, ni);
  if (!in) throw InputError(path + ": truncated checkpoint header");
  if (nu != data.num_users() || ni != data.num_items() ||
      entities != data.num_entities()) {
    throw StateError(path + ": checkpoint does not match the dataset");
  }
  cfg.backbone = static_cast<Backbone>(backbone);
  cfg.d_max = d_max;
  cfg.num_layers = layers;
  cfg.batch_size = batch;
  Recommender rec(data, cfg);
  std::vector<int32_t> dims(entities);
  in.read(reinterpret_cast<char*>(dims.data()),
          static_cast<std::streamsize>(dims.size() * sizeof(int32_t)));
  rec.table().set_dims(dims);
  for (int64_t e = 0; e < entities; ++e) {
    auto r = rec.table().row_mut(e);
    in.read(reinterpret_cast<char*>(r.data()),
            static_cast<std::streamsize>(r.size() * sizeof(double)));
  }
  if (!in) throw InputError(path + ": truncated checkpoint payload");
  return rec;
}

}  // namespace ciess
