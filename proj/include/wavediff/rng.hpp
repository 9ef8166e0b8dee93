#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "wavediff/tensor.hpp"

namespace wavediff {

/// Counter-based random stream. Each stream is identified by a 64-bit master
/// seed and a substream name; the n-th draw is a pure function of
/// (seed, name, n), so replaying a stream only needs its counter.
///
/// Algorithm: the substream key is seed XOR FNV-1a(name), and draw n produces
/// splitmix64_mix(key + (n+1) * 0x9E3779B97F4A7C15). Uniform doubles take the
/// top 53 bits; normals use Box-Muller on two consecutive uniforms (both
/// consumed every call, nothing cached, so the counter fully describes state).
class RngStream {
 public:
  RngStream() : RngStream(0, "default") {}
  RngStream(uint64_t seed, std::string_view name);

  uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // standard normal

  /// Uniform integer in [0, n), n > 0. Uses rejection-free 128-bit scaling;
  /// negligibly biased for n far below 2^64.
  uint64_t uniform_index(uint64_t n);

  void fill_normal(NDTensor& t);
  NDTensor normal_tensor(Shape shape);

  uint64_t seed() const { return seed_; }
  const std::string& name() const { return name_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  uint64_t seed_ = 0;
  std::string name_;
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace wavediff
