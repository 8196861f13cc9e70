#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ciess/common.hpp"
#include "ciess/nn.hpp"
#include "ciess/noise.hpp"

namespace ciess {

/// Observation for one entity: train-split popularity normalized within the
/// entity's own side, current size position in [1, d_max], and the latest
/// quality ratio. All three live in [0, 1].
struct SearchState {
  double pop_norm = 0.0;
  double dim_norm = 0.0;
  double quality = 0.0;
};

SearchState compute_state(int64_t popularity, int64_t pop_min, int64_t pop_max,
                          int dim, int d_max, double quality);

/// quality - lambda * (d / d_max)^2: retained quality minus a smooth price
/// on the chosen size.
double compute_reward(double quality, int dim, double lambda, int d_max);

enum class Side { user, item };

struct Transition {
  SearchState state;
  int32_t action = 1;  // chosen size in [1, d_max]
  double reward = 0.0;
  SearchState next;
};

/// Bounded FIFO store with uniform batch sampling (distinct indices within
/// one batch).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);

  void push(const Transition& t);
  size_t size() const { return store_.size(); }
  size_t capacity() const { return capacity_; }
  const Transition& at(size_t i) const { return store_[i]; }

  std::vector<Transition> sample(size_t batch, Rng& rng) const;

 private:
  size_t capacity_;
  size_t next_ = 0;
  std::vector<Transition> store_;
};

struct TD3Config {
  double gamma = 0.9;
  double tau = 0.005;
  int policy_delay = 2;
  int batch_size = 64;
  size_t buffer_capacity = 200000;
  int max_updates_per_iter = 200;
  double smoothing_std = 2.0;   // target-policy smoothing, action units
  double smoothing_clip = 5.0;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;

  void validate() const;
};

/// Exploration draw before any discretization: the deterministic policy
/// output mapped to [1, d_max], the noise added to it, and the clipped sum.
struct RawAction {
  double mapped = 0.0;
  double noise = 0.0;
  double value = 0.0;
};

/// One side's deterministic policy with twin critics and their targets.
/// Actions are sizes in [1, d_max]; internally the critics see the size
/// rescaled to [0, 1] next to the three state features.
class SidePolicy {
 public:
  SidePolicy(int d_max, const TD3Config& config, NoiseKind noise_kind, double sigma,
             uint64_t init_seed);

  int d_max() const { return d_max_; }

  double greedy_action(const SearchState& s) const;  // no noise
  RawAction raw_action(const SearchState& s, Rng& rng);

  double q1_value(const SearchState& s, double action) const;

  struct UpdateStats {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    bool actor_updated = false;
    bool skipped = false;  // buffer smaller than one batch
  };

  /// One TD3 step: both critics regress to the clipped-min target; the
  /// actor and all targets move on every policy_delay-th call.
  UpdateStats update(const ReplayBuffer& buffer, Rng& rng);

  NoiseProcess& noise() { return noise_; }
  int64_t update_count() const { return update_count_; }

  DenseNet& actor() { return actor_; }
  DenseNet& critic1() { return q1_; }
  DenseNet& critic2() { return q2_; }

 private:
  double map_to_size(double unit) const { return 1.0 + unit * (d_max_ - 1); }
  double normalize(double action) const {
    return d_max_ > 1 ? (action - 1.0) / (d_max_ - 1.0) : 0.0;
  }
  static std::vector<double> state_vec(const SearchState& s) {
    return {s.pop_norm, s.dim_norm, s.quality};
  }
  std::vector<double> critic_input(const SearchState& s, double action_unit) const {
    return {s.pop_norm, s.dim_norm, s.quality, action_unit};
  }

  int d_max_;
  TD3Config config_;
  DenseNet actor_, actor_target_;
  DenseNet q1_, q2_, q1_target_, q2_target_;
  AdamOptimizer opt_actor_, opt_q1_, opt_q2_;
  NoiseProcess noise_;
  int64_t update_count_ = 0;
};

/// Per-side policies and replay buffers; users and items never share
/// transitions or parameters, only the architecture.
struct PolicyEnsemble {
  PolicyEnsemble(int d_max, const TD3Config& config, NoiseKind noise_kind, double sigma,
                 const SeedTree& seeds);

  SidePolicy& side(Side s) { return s == Side::user ? users : items; }
  ReplayBuffer& buffer(Side s) { return s == Side::user ? user_buffer : item_buffer; }

  SidePolicy users;
  SidePolicy items;
  ReplayBuffer user_buffer;
  ReplayBuffer item_buffer;
};

}  // namespace ciess
