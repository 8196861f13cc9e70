#include "ciess/td3.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_set>

namespace ciess {

NoiseKind parse_noise(const std::string& name) {
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "ou") return NoiseKind::ou;
  if (name == "uniform") return NoiseKind::uniform;
  throw InputError("unknown noise kind: " + name + " (expected gaussian, ou, or uniform)");
}

const char* noise_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::ou: return "ou";
    default: return "uniform";
  }
}

SearchState compute_state(int64_t popularity, int64_t pop_min, int64_t pop_max,
                          int dim, int d_max, double quality) {
  if (pop_max < pop_min) throw InputError("compute_state: pop_max below pop_min");
  if (dim < 1 || dim > d_max) throw InputError("compute_state: size outside [1, d_max]");
  SearchState s;
  s.pop_norm = pop_max == pop_min
                   ? 0.5
                   : static_cast<double>(popularity - pop_min) /
                         static_cast<double>(pop_max - pop_min);
  s.dim_norm = d_max == 1 ? 0.5
                          : static_cast<double>(dim - 1) / static_cast<double>(d_max - 1);
  s.quality = quality;
  return s;
}

double compute_reward(double quality, int dim, double lambda, int d_max) {
  const double frac = static_cast<double>(dim) / static_cast<double>(d_max);
  return quality - lambda * frac * frac;
}

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InputError("replay buffer capacity must be positive");
  store_.reserve(std::min<size_t>(capacity, 1 << 20));
}

void ReplayBuffer::push(const Transition& t) {
  if (store_.size() < capacity_) {
    store_.push_back(t);
  } else {
    store_[next_] = t;
    next_ = (next_ + 1) % capacity_;
  }
}

std::vector<Transition> ReplayBuffer::sample(size_t batch, Rng& rng) const {
  if (batch > store_.size()) {
    throw StateError("replay buffer holds fewer transitions than one batch");
  }
  std::vector<Transition> out;
  out.reserve(batch);
  std::unordered_set<size_t> picked;
  picked.reserve(batch * 2);
  while (out.size() < batch) {
    size_t i = static_cast<size_t>(rng.bounded(store_.size()));
    if (picked.insert(i).second) out.push_back(store_[i]);
  }
  return out;
}

void TD3Config::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("td3.gamma must be in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw InputError("td3.tau must be in (0, 1]");
  if (policy_delay < 1) throw InputError("td3.policy_delay must be at least 1");
  if (batch_size < 1) throw InputError("td3.batch_size must be at least 1");
  if (buffer_capacity < static_cast<size_t>(batch_size)) {
    throw InputError("td3.buffer_capacity must hold at least one batch");
  }
  if (max_updates_per_iter < 1) throw InputError("td3.max_updates_per_iter must be at least 1");
  if (smoothing_std < 0.0) throw InputError("td3.smoothing_std must be non-negative");
  if (smoothing_clip < 0.0) throw InputError("td3.smoothing_clip must be non-negative");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) {
    throw InputError("td3 learning rates must be positive");
  }
}

namespace {
DenseNet make_actor() { return DenseNet({3, 64, 64, 1}, DenseNet::Output::sigmoid); }
DenseNet make_critic() { return DenseNet({4, 64, 64, 1}, DenseNet::Output::identity); }
}  // namespace

SidePolicy::SidePolicy(int d_max, const TD3Config& config, NoiseKind noise_kind,
                       double sigma, uint64_t init_seed)
    : d_max_(d_max),
      config_(config),
      actor_(make_actor()),
      actor_target_(make_actor()),
      q1_(make_critic()),
      q2_(make_critic()),
      q1_target_(make_critic()),
      q2_target_(make_critic()),
      opt_actor_(actor_, config.actor_lr),
      opt_q1_(q1_, config.critic_lr),
      opt_q2_(q2_, config.critic_lr),
      noise_(noise_kind, sigma) {
  if (d_max < 2) throw InputError("policy needs d_max of at least 2");
  config_.validate();
  SeedTree seeds(init_seed);
  Rng ra = seeds.child("actor").rng();
  actor_.init_params(ra);
  Rng r1 = seeds.child("critic1").rng();
  q1_.init_params(r1);
  Rng r2 = seeds.child("critic2").rng();
  q2_.init_params(r2);
  actor_target_ = actor_;
  q1_target_ = q1_;
  q2_target_ = q2_;
}

double SidePolicy::greedy_action(const SearchState& s) const {
  return map_to_size(actor_.forward(state_vec(s))[0]);
}

RawAction SidePolicy::raw_action(const SearchState& s, Rng& rng) {
  RawAction out;
  out.mapped = greedy_action(s);
  out.noise = noise_.sample(rng);
  out.value = std::clamp(out.mapped + out.noise, 1.0, static_cast<double>(d_max_));
  return out;
}

double SidePolicy::q1_value(const SearchState& s, double action) const {
  return q1_.forward(critic_input(s, normalize(action)))[0];
}

SidePolicy::UpdateStats SidePolicy::update(const ReplayBuffer& buffer, Rng& rng) {
  UpdateStats stats;
  if (buffer.size() < static_cast<size_t>(config_.batch_size)) {
    stats.skipped = true;
    return stats;
  }
  const auto batch = buffer.sample(config_.batch_size, rng);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  // Clipped double-Q targets with smoothed target-policy actions.
  std::vector<double> targets(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = batch[i];
    const double a_next = map_to_size(actor_target_.forward(state_vec(tr.next))[0]);
    const double eps = std::clamp(rng.normal(0.0, config_.smoothing_std),
                                  -config_.smoothing_clip, config_.smoothing_clip);
    const double a_sm = std::clamp(a_next + eps, 1.0, static_cast<double>(d_max_));
    const auto in = critic_input(tr.next, normalize(a_sm));
    const double q1t = q1_target_.forward(in)[0];
    const double q2t = q2_target_.forward(in)[0];
    targets[i] = tr.reward + config_.gamma * std::min(q1t, q2t);
  }

  auto regress = [&](DenseNet& critic, AdamOptimizer& opt) {
    auto grads = critic.zero_grads();
    double loss = 0.0;
    DenseNet::Trace trace;
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto in = critic_input(batch[i].state, normalize(batch[i].action));
      const double pred = critic.forward(in, trace)[0];
      const double err = pred - targets[i];
      loss += err * err * inv_b;
      const std::array<double, 1> dout{2.0 * err * inv_b};
      critic.backward(trace, dout, grads);
    }
    opt.apply(critic, grads);
    return loss;
  };
  const double l1 = regress(q1_, opt_q1_);
  const double l2 = regress(q2_, opt_q2_);
  stats.critic_loss = 0.5 * (l1 + l2);

  ++update_count_;
  if (update_count_ % config_.policy_delay == 0) {
    // Deterministic policy gradient through the first critic.
    auto actor_grads = actor_.zero_grads();
    double actor_loss = 0.0;
    DenseNet::Trace atrace, ctrace;
    auto critic_grads = q1_.zero_grads();  // discarded, backward needs a sink
    for (const auto& tr : batch) {
      const double unit = actor_.forward(state_vec(tr.state), atrace)[0];
      const auto in = critic_input(tr.state, unit);
      const double q = q1_.forward(in, ctrace)[0];
      actor_loss -= q * inv_b;
      const std::array<double, 1> dq{1.0};
      const auto din = q1_.backward(ctrace, dq, critic_grads);
      const std::array<double, 1> dunit{-din[3] * inv_b};
      actor_.backward(atrace, dunit, actor_grads);
    }
    opt_actor_.apply(actor_, actor_grads);
    soft_update(actor_target_, actor_, config_.tau);
    soft_update(q1_target_, q1_, config_.tau);
    soft_update(q2_target_, q2_, config_.tau);
    stats.actor_loss = actor_loss;
    stats.actor_updated = true;
  }
  return stats;
}

PolicyEnsemble::PolicyEnsemble(int d_max, const TD3Config& config, NoiseKind noise_kind,
                               double sigma, const SeedTree& seeds)
    : users(d_max, config, noise_kind, sigma, seeds.child("user-policy").seed()),
      items(d_max, config, noise_kind, sigma, seeds.child("item-policy").seed()),
      user_buffer(config.buffer_capacity),
      item_buffer(config.buffer_capacity) {}

}  // namespace ciess
