#include "ciess/walk.hpp"

#include <algorithm>
#include <cmath>

namespace ciess {

void WalkConfig::validate() const {
  if (threshold < 1) throw InputError("walk threshold must be at least 1");
  if (length < 1) throw InputError("walk length must be at least 1");
  if (d_max < 2) throw InputError("walks need d_max of at least 2");
}

std::vector<int> neighbor_set(int d, const WalkConfig& config) {
  config.validate();
  if (d < 1 || d > config.d_max) {
    throw InputError("walk node " + std::to_string(d) + " outside [1, d_max]");
  }
  std::vector<int> out;
  const int lo = std::max(1, d - config.threshold);
  const int hi = std::min(config.d_max, d + config.threshold);
  for (int n = lo; n <= hi; ++n) {
    if (n != d) out.push_back(n);
  }
  return out;
}

std::vector<std::pair<int, double>> step_distribution(int d, const WalkConfig& config) {
  const auto neighbors = neighbor_set(d, config);
  if (neighbors.empty()) {
    throw InputError("empty neighborhood at size " + std::to_string(d));
  }
  int64_t total = 0;
  for (int n : neighbors) total += std::abs(n - d);
  std::vector<std::pair<int, double>> out;
  out.reserve(neighbors.size());
  for (int n : neighbors) {
    out.push_back({n, static_cast<double>(std::abs(n - d)) / static_cast<double>(total)});
  }
  return out;
}

int walk_step(int d, const WalkConfig& config, Rng& rng) {
  const auto neighbors = neighbor_set(d, config);
  if (neighbors.empty()) {
    throw InputError("empty neighborhood at size " + std::to_string(d));
  }
  int64_t total = 0;
  for (int n : neighbors) total += std::abs(n - d);
  int64_t draw = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(total)));
  for (int n : neighbors) {
    draw -= std::abs(n - d);
    if (draw < 0) return n;
  }
  return neighbors.back();  // unreachable
}

std::vector<int> random_walk(double anchor, const WalkConfig& config, Rng& rng) {
  config.validate();
  if (!std::isfinite(anchor)) throw InputError("walk anchor must be finite");
  const long long rounded = std::llround(anchor);
  const int start =
      static_cast<int>(std::clamp<long long>(rounded, 1, config.d_max));
  std::vector<int> visited;
  visited.reserve(config.length + 1);
  visited.push_back(start);
  int cur = start;
  for (int s = 0; s < config.length; ++s) {
    cur = walk_step(cur, config, rng);
    visited.push_back(cur);
  }
  return visited;
}

int select_action(const std::vector<int>& candidates,
                  const std::function<double(int)>& value) {
  if (candidates.empty()) throw InputError("select_action: no candidates");
  int best = candidates.front();
  double best_value = value(best);
  for (size_t i = 1; i < candidates.size(); ++i) {
    const int c = candidates[i];
    if (c == best) continue;
    const double v = value(c);
    if (v > best_value || (v == best_value && c < best)) {
      best = c;
      best_value = v;
    }
  }
  return best;
}

}  // namespace ciess
