#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace resrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Mixes a master seed with a stream tag and an index into an independent
// child seed (splitmix64 finalizer). Every RNG stream in the project is
// derived this way from the run's master seed, so a (config, seed) pair
// pins the entire run.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

// Stable tags for the seed streams used across the harness.
namespace seed_stream {
inline constexpr std::uint64_t kPlant = 0x706c616e74;        // per-episode plant noise + disturbance draw
inline constexpr std::uint64_t kExplore = 0x6578706c;        // exploration noise
inline constexpr std::uint64_t kBatch = 0x6261746368;        // replay sampling
inline constexpr std::uint64_t kInit = 0x696e6974;           // parameter init
inline constexpr std::uint64_t kSmoothing = 0x736d6f;        // target policy smoothing
inline constexpr std::uint64_t kEval = 0x6576616c;           // evaluation episodes
inline constexpr std::uint64_t kIohmm = 0x696f686d;          // EM restarts
}  // namespace seed_stream

// One deterministic random stream. Consumers own their stream; nothing in
// the library touches a global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  // Uniform integer in [lo, hi).
  int uniform_int(int lo, int hi) {
    if (hi <= lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    std::uniform_int_distribution<int> d(lo, hi - 1);
    return d(gen_);
  }
  double gaussian(double mean, double sd) {
    std::normal_distribution<double> d(mean, sd);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace resrl
