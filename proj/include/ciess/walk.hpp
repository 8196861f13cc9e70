#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ciess/common.hpp"

namespace ciess {

struct WalkConfig {
  int threshold = 5;  // neighborhood radius in size units
  int length = 5;     // steps per walk
  int d_max = 128;

  void validate() const;
};

/// Integer sizes within `threshold` of d, excluding d itself, inside
/// [1, d_max]. Ascending order.
std::vector<int> neighbor_set(int d, const WalkConfig& config);

/// Step law over the neighbors of d: probability proportional to the
/// distance |d' - d|, so farther neighbors are more likely. Pairs are
/// (neighbor, probability), ascending by neighbor.
std::vector<std::pair<int, double>> step_distribution(int d, const WalkConfig& config);

/// One draw from the step law. Exact integer-weight sampling.
int walk_step(int d, const WalkConfig& config, Rng& rng);

/// Walk of `length` steps starting from round(anchor) (half away from
/// zero, clamped into range). Returns the start node followed by every
/// visited node; revisits are kept.
std::vector<int> random_walk(double anchor, const WalkConfig& config, Rng& rng);

/// Candidate with the highest value wins; ties go to the smaller size.
int select_action(const std::vector<int>& candidates,
                  const std::function<double(int)>& value);

}  // namespace ciess
