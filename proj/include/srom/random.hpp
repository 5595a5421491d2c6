#pragma once

// Seed derivation and the normal-variate transform used everywhere a random
// number is drawn. Everything here is bit-reproducible across platforms:
//
//   sub_seed(seed, domain, index) = splitmix64(splitmix64(seed ^ tag(domain)) + index)
//   engine                        = std::mt19937_64(sub_seed)
//   uniform in (0, 1]             = ((x >> 11) + 1) * 2^-53
//   normal                        = sqrt(-2 ln u1) * cos(2 pi u2)   (Box-Muller, cosine branch)
//
// Every trajectory / ensemble member owns its own engine, so results do not
// depend on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace srom {

/// Disjoint seed domains, one per purpose.
enum class SeedDomain : std::uint64_t {
  training_ic = 0,
  test_ic = 1,
  ensemble_noise = 2,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t domain_tag(SeedDomain domain) noexcept {
  return splitmix64(0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(domain) + 1));
}

constexpr std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index,
                                 SeedDomain domain = SeedDomain::training_ic) noexcept {
  return splitmix64(splitmix64(seed ^ domain_tag(domain)) + index);
}

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double uniform() noexcept {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace srom
