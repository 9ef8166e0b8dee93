#include "wavediff/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace wavediff {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t splitmix_mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed, std::string_view name) : seed_(seed), name_(name) {
  key_ = splitmix_mix(seed ^ fnv1a(name));
}

uint64_t RngStream::next_u64() {
  ++counter_;
  return splitmix_mix(key_ + counter_ * kGolden);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // u1 shifted into (0, 1] so log(u1) is finite.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

uint64_t RngStream::uniform_index(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

void RngStream::fill_normal(NDTensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) t[i] = normal();
}

NDTensor RngStream::normal_tensor(Shape shape) {
  NDTensor t(std::move(shape));
  fill_normal(t);
  return t;
}

}  // namespace wavediff
