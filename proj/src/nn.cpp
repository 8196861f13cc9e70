#include "ciess/nn.hpp"

#include <cmath>

namespace ciess {

DenseNet::DenseNet(std::vector<int> widths, Output output)
    : widths_(std::move(widths)), output_(output) {
  if (widths_.size() < 2) throw InputError("DenseNet needs an input and an output width");
  for (int wd : widths_) {
    if (wd < 1) throw InputError("DenseNet widths must be positive");
  }
  const size_t layers = widths_.size() - 1;
  w.resize(layers);
  b.resize(layers);
  for (size_t l = 0; l < layers; ++l) {
    w[l].assign(static_cast<size_t>(widths_[l + 1]) * widths_[l], 0.0);
    b[l].assign(widths_[l + 1], 0.0);
  }
}

int64_t DenseNet::param_count() const {
  int64_t n = 0;
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    n += int64_t(widths_[l]) * widths_[l + 1] + widths_[l + 1];
  }
  return n;
}

void DenseNet::init_params(Rng& rng) {
  const size_t layers = w.size();
  for (size_t l = 0; l < layers; ++l) {
    double limit;
    if (l + 1 == layers) {
      limit = 3e-3;  // small head keeps early outputs centered
    } else {
      limit = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
    }
    for (auto& x : w[l]) x = rng.uniform(-limit, limit);
    for (auto& x : b[l]) x = l + 1 == layers ? rng.uniform(-limit, limit) : 0.0;
  }
}

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  Trace scratch;
  return forward(input, scratch);
}

std::vector<double> DenseNet::forward(std::span<const double> input, Trace& trace) const {
  if (static_cast<int>(input.size()) != widths_.front()) {
    throw InputError("DenseNet::forward: input width mismatch");
  }
  trace.act.assign(widths_.size(), {});
  trace.act[0].assign(input.begin(), input.end());
  for (size_t l = 0; l < w.size(); ++l) {
    const int in_w = widths_[l];
    const int out_w = widths_[l + 1];
    const auto& prev = trace.act[l];
    auto& cur = trace.act[l + 1];
    cur.assign(out_w, 0.0);
    for (int o = 0; o < out_w; ++o) {
      double z = b[l][o];
      const double* row = w[l].data() + static_cast<size_t>(o) * in_w;
      for (int i = 0; i < in_w; ++i) z += row[i] * prev[i];
      if (l + 1 < w.size()) {
        cur[o] = z > 0.0 ? z : 0.0;
      } else if (output_ == Output::sigmoid) {
        cur[o] = 1.0 / (1.0 + std::exp(-z));
      } else {
        cur[o] = z;
      }
    }
  }
  return trace.act.back();
}

DenseNet::Grads DenseNet::zero_grads() const {
  Grads g;
  g.w.resize(w.size());
  g.b.resize(b.size());
  for (size_t l = 0; l < w.size(); ++l) {
    g.w[l].assign(w[l].size(), 0.0);
    g.b[l].assign(b[l].size(), 0.0);
  }
  return g;
}

std::vector<double> DenseNet::backward(const Trace& trace, std::span<const double> dout,
                                       DenseNet::Grads& grads) const {
  if (trace.act.size() != widths_.size()) {
    throw InputError("DenseNet::backward: trace does not match this network");
  }
  for (size_t i = 0; i < widths_.size(); ++i) {
    if (static_cast<int>(trace.act[i].size()) != widths_[i]) {
      throw InputError("DenseNet::backward: trace does not match this network");
    }
  }
  if (static_cast<int>(dout.size()) != widths_.back()) {
    throw InputError("DenseNet::backward: output gradient width mismatch");
  }
  if (grads.w.size() != w.size() || grads.b.size() != b.size()) {
    throw InputError("DenseNet::backward: gradient shapes do not match");
  }

  std::vector<double> delta(dout.begin(), dout.end());
  // output activation derivative
  if (output_ == Output::sigmoid) {
    const auto& y = trace.act.back();
    for (size_t o = 0; o < delta.size(); ++o) delta[o] *= y[o] * (1.0 - y[o]);
  }
  for (size_t li = w.size(); li-- > 0;) {
    const int in_w = widths_[li];
    const int out_w = widths_[li + 1];
    const auto& prev = trace.act[li];
    for (int o = 0; o < out_w; ++o) {
      const double d = delta[o];
      grads.b[li][o] += d;
      double* grow = grads.w[li].data() + static_cast<size_t>(o) * in_w;
      for (int i = 0; i < in_w; ++i) grow[i] += d * prev[i];
    }
    std::vector<double> dprev(in_w, 0.0);
    for (int o = 0; o < out_w; ++o) {
      const double d = delta[o];
      const double* row = w[li].data() + static_cast<size_t>(o) * in_w;
      for (int i = 0; i < in_w; ++i) dprev[i] += d * row[i];
    }
    if (li > 0) {
      // ReLU gate of the layer below
      for (int i = 0; i < in_w; ++i) {
        if (prev[i] <= 0.0) dprev[i] = 0.0;
      }
    }
    delta = std::move(dprev);
  }
  return delta;
}

AdamOptimizer::AdamOptimizer(const DenseNet& net, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = net.zero_grads();
  v_ = net.zero_grads();
}

void AdamOptimizer::apply(DenseNet& net, const DenseNet::Grads& grads) {
  if (grads.w.size() != net.w.size()) {
    throw InputError("AdamOptimizer::apply: gradient shapes do not match");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    if (g.size() != p.size()) {
      throw InputError("AdamOptimizer::apply: gradient shapes do not match");
    }
    for (size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) throw std::runtime_error("non-finite gradient in Adam step");
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  };
  for (size_t l = 0; l < net.w.size(); ++l) {
    update(net.w[l], grads.w[l], m_.w[l], v_.w[l]);
    update(net.b[l], grads.b[l], m_.b[l], v_.b[l]);
  }
}

void soft_update(DenseNet& target, const DenseNet& source, double tau) {
  if (target.widths() != source.widths()) {
    throw InputError("soft_update: network shapes do not match");
  }
  if (tau < 0.0 || tau > 1.0) throw InputError("soft_update: tau must be in [0, 1]");
  for (size_t l = 0; l < target.w.size(); ++l) {
    for (size_t i = 0; i < target.w[l].size(); ++i) {
      target.w[l][i] = tau * source.w[l][i] + (1.0 - tau) * target.w[l][i];
    }
    for (size_t i = 0; i < target.b[l].size(); ++i) {
      target.b[l][i] = tau * source.b[l][i] + (1.0 - tau) * target.b[l][i];
    }
  }
}

}  // namespace ciess
