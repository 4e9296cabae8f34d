#pragma once
// Counter-based random numbers.
//
// Every draw in the library is a pure function of (master seed, stream,
// counter words), so environment i can be regenerated without touching
// environments 0..i-1 and results do not depend on thread scheduling.

#include <array>
#include <cstdint>
#include <limits>

namespace crossing {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon, Moraes, Dror, Shaw 2011).
constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
  }
  return ctr;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream families. Adding a value here never perturbs
/// existing streams.
enum class Stream : std::uint32_t {
  environment_1d = 1,
  environment_nd = 2,
  path = 3,
  resample = 4,
};

constexpr PhiloxKey stream_key(std::uint64_t master_seed, Stream stream) noexcept {
  const std::uint64_t k =
      splitmix64(master_seed ^ splitmix64(0xC0FFEEull + static_cast<std::uint64_t>(stream)));
  return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

constexpr double to_unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Uniform draw in [0, 1) keyed by two 64-bit counter words.
constexpr double keyed_uniform(std::uint64_t master_seed, Stream stream, std::uint64_t a,
                               std::uint64_t b) noexcept {
  const PhiloxCounter ctr{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  const auto out = philox4x32_10(ctr, stream_key(master_seed, stream));
  return to_unit_interval((std::uint64_t{out[1]} << 32) | out[0]);
}

/// Sequential engine over one (seed, stream, id) triple. Models
/// std::uniform_random_bit_generator.
class PhiloxEngine {
 public:
  using result_type = std::uint64_t;

  PhiloxEngine(std::uint64_t master_seed, Stream stream, std::uint64_t id) noexcept
      : key_(stream_key(master_seed, stream)), id_(id) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (cursor_ == 2) refill();
    return buffer_[cursor_++];
  }

  double uniform() noexcept { return to_unit_interval((*this)()); }

 private:
  void refill() noexcept {
    const PhiloxCounter ctr{static_cast<std::uint32_t>(block_),
                            static_cast<std::uint32_t>(block_ >> 32),
                            static_cast<std::uint32_t>(id_), static_cast<std::uint32_t>(id_ >> 32)};
    const auto out = philox4x32_10(ctr, key_);
    buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
    buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
    ++block_;
    cursor_ = 0;
  }

  PhiloxKey key_;
  std::uint64_t id_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int cursor_ = 2;
};

}  // namespace crossing
