#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vslm {

#ifdef VSLM_REAL64
using real = double;
#else
using real = float;
#endif

// Shape/dimension mismatch between tensors or sequences.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A computation produced or received non-finite values.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible on-disk artifact (dataset, checkpoint, report).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or command usage.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG. The engine is mt19937_64 (bit-exact per the standard);
// all output transforms are implemented here rather than via <random>
// distributions, whose streams vary across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n). Multiply-shift with rejection.
  uint64_t uniform_int(uint64_t n);

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Box-Muller without caching, so every call consumes exactly two uniforms.
  double normal(double mean = 0.0, double stddev = 1.0);

  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
};

// Stable per-item seed derivation (splitmix64 finalizer over base + index).
uint64_t derive_seed(uint64_t base, uint64_t index);

std::string base64_encode(const uint8_t* data, size_t n);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace vslm
