#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ciess/common.hpp"

namespace ciess {

/// Fully-connected net: ReLU hidden layers, identity or sigmoid output.
/// Forward can record the per-layer activations needed for an exact
/// backward pass; parameters live in plain vectors so optimizer state can
/// mirror them 1:1. All arithmetic is double precision.
class DenseNet {
 public:
  enum class Output { identity, sigmoid };

  DenseNet(std::vector<int> widths, Output output);

  const std::vector<int>& widths() const { return widths_; }
  Output output_kind() const { return output_; }
  int64_t param_count() const;

  /// Xavier-uniform hidden layers; the output layer starts near zero so a
  /// sigmoid head opens at 0.5.
  void init_params(Rng& rng);

  struct Trace {
    std::vector<std::vector<double>> act;  // act[0] = input, act.back() = output
  };

  std::vector<double> forward(std::span<const double> input) const;
  std::vector<double> forward(std::span<const double> input, Trace& trace) const;

  struct Grads {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;
  };
  Grads zero_grads() const;

  /// Backprop from d(loss)/d(output). Accumulates parameter gradients into
  /// `grads` and returns d(loss)/d(input). The trace must come from this
  /// network's forward.
  std::vector<double> backward(const Trace& trace, std::span<const double> dout,
                               Grads& grads) const;

  // layer l maps widths[l] -> widths[l+1]; w[l] is row-major (out x in)
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;

 private:
  std::vector<int> widths_;
  Output output_;
};

/// Adam with bias correction. State shapes mirror the target network.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const DenseNet& net, double lr = 1e-3, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);

  void apply(DenseNet& net, const DenseNet::Grads& grads);
  int64_t step_count() const { return step_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  DenseNet::Grads m_, v_;
};

/// target <- tau * source + (1 - tau) * target, elementwise.
void soft_update(DenseNet& target, const DenseNet& source, double tau);

}  // namespace ciess
