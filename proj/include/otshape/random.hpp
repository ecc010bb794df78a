#ifndef OTSHAPE_RANDOM_HPP_
#define OTSHAPE_RANDOM_HPP_

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace otshape {

// Stateless counter-based generator: every draw is a pure function of
// (seed, stream, counter), so chunked or threaded consumers produce the
// same numbers in the same slots regardless of scheduling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(mix(seed + 0x9E3779B97F4A7C15ull) ^ mix(stream + 0xD1B54A32D192ED03ull))) {}

  // Uniform on (0, 1]; counter selects the slot.
  double uniform(std::uint64_t counter) const {
    const std::uint64_t bits = mix(key_ ^ mix(counter + 0x2545F4914F6CDD1Dull));
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on slots (2*counter, 2*counter+1).
  double normal(std::uint64_t counter) const {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  Eigen::VectorXd normals(std::uint64_t first_counter, Eigen::Index n) const {
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] = normal(first_counter + static_cast<std::uint64_t>(i));
    }
    return out;
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

}  // namespace otshape

#endif  // OTSHAPE_RANDOM_HPP_
