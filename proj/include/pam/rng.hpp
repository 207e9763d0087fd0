// Counter-based random streams (Philox4x32-10).
//
// Every random quantity in the library is drawn from an RngStream identified
// by (master seed, stream id). The stream id packs a replica index and a slot
// number, so a replica's draws do not depend on which worker ran it or in
// which order replicas completed.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace pam {

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace detail

using Philox4x32 = std::array<std::uint32_t, 4>;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11 reference constants).
inline Philox4x32 philox4x32(Philox4x32 ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kM0, ctr[0], hi0, lo0);
    detail::mulhilo32(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// Stream id scheme: replica index in the high bits, a per-purpose slot in
/// the low 16 bits.
constexpr std::uint64_t stream_id(std::uint64_t replica, std::uint16_t slot) {
  return (replica << 16) | slot;
}

// Slot numbers used across modules.
namespace slot {
inline constexpr std::uint16_t field = 1;
inline constexpr std::uint16_t environment = 2;
inline constexpr std::uint16_t white_noise = 3;
inline constexpr std::uint16_t gibbs = 4;
inline constexpr std::uint16_t label = 5;
inline constexpr std::uint16_t bootstrap = 6;
/// Field walks use walk_base + walk index; environment walks use
/// env_walk_base + walk index.
inline constexpr std::uint16_t walk_base = 0x100;
inline constexpr std::uint16_t env_walk_base = 0x800;
}  // namespace slot

inline double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits =
      ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;  // 53 bits
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Standard normal drawn from a single Philox block addressed by counter.
/// Used for white-noise increments, which are indexed by (site, step).
inline double counter_normal(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t a, std::uint64_t b) {
  const Philox4x32 out = philox4x32(
      {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
       static_cast<std::uint32_t>(stream),
       static_cast<std::uint32_t>(stream >> 32) ^
           static_cast<std::uint32_t>(a >> 32) ^
           (static_cast<std::uint32_t>(b >> 32) * 0x9E3779B9u)},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  const double u1 = to_unit_open(out[0], out[1]);
  const double u2 = to_unit_open(out[2], out[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

class RngStream {
 public:
  using result_type = std::uint32_t;

  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() {
    const std::uint32_t hi = (*this)();
    const std::uint32_t lo = (*this)();
    return to_unit_open(hi, lo);
  }

  /// Exponential(rate) by inverse CDF.
  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    const auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson(mean) by sequential inversion; intended for mean below ~500.
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    int k = 0;
    while (u > cdf && k < 100000) {
      ++k;
      p *= mean / k;
      cdf += p;
      if (p == 0.0 && cdf < u) break;
    }
    return k;
  }

  bool bernoulli(double prob) { return uniform() < prob; }

  std::uint64_t draws() const { return counter_ * 4 - (4 - used_); }

 private:
  void refill() {
    buffer_ = philox4x32(
        {static_cast<std::uint32_t>(counter_),
         static_cast<std::uint32_t>(counter_ >> 32),
         static_cast<std::uint32_t>(stream_),
         static_cast<std::uint32_t>(stream_ >> 32)},
        key_);
    ++counter_;
    used_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  Philox4x32 buffer_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pam
