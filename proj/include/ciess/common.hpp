#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ciess {

/// Unreadable or malformed input. The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing or conflicting run state (absent artifacts, refused clobber).
/// The CLI maps this to exit code 3.
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Base recommender training produced a non-finite loss.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint64_t mix64(uint64_t x);
uint64_t hash_string(std::string_view s);

/// Deterministic random source. Samplers are hand-rolled on top of the
/// mt19937_64 bit stream so sequences do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Rejection sampling, bias-free.
  uint64_t bounded(uint64_t n);

  /// Uniform integer in [lo, hi], both ends inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(bounded(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// One root seed fanned out into labeled substreams. Every stochastic
/// component owns a distinct path below the root, which makes whole runs
/// reproducible without sharing generator state across components.
class SeedTree {
 public:
  explicit SeedTree(uint64_t root) : state_(mix64(root ^ 0x9e3779b97f4a7c15ull)) {}

  SeedTree child(std::string_view label) const {
    return SeedTree(mix64(state_ ^ hash_string(label)), Tag{});
  }
  SeedTree child(uint64_t index) const {
    return SeedTree(mix64(state_ ^ mix64(index + 0x2545f4914f6cdd1dull)), Tag{});
  }

  uint64_t seed() const { return state_; }
  Rng rng() const { return Rng(state_); }

 private:
  struct Tag {};
  SeedTree(uint64_t state, Tag) : state_(state) {}
  uint64_t state_;
};

/// Thread count resolution: 0 means "use the machine's parallelism".
int resolve_threads(int requested);

/// Static range partition across `threads` workers; fn(begin, end) per chunk.
/// Results must be written to disjoint slots so the schedule cannot change
/// any output.
void parallel_for(int64_t n, int threads,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ciess
