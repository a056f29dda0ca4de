#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tikhonov {

using Rng = std::mt19937_64;

// Seed-splitting rule used everywhere a module needs an independent stream:
//   derive_seed(seed, label) = splitmix64(seed ^ fnv1a64(label))
//   derive_seed(seed, index) = splitmix64(seed + 0x9e3779b97f4a7c15 * (index + 1))
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

double uniform(Rng& rng, double lo, double hi);
int uniform_int(Rng& rng, int lo, int hi);  // inclusive
double normal(Rng& rng);
double log_uniform(Rng& rng, double lo, double hi);

}  // namespace tikhonov
