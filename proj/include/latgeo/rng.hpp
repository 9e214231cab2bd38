#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace latgeo {

// splitmix64 finalizer; good avalanche, used to derive stream seeds.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over raw bytes folded with a seed through mix64.
std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed);

// One master seed fans out into named, independent streams ("data", "init",
// "dropout", "sampling", ...). Same (seed, name) always yields the same stream.
std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name);

// Distribution helpers with pinned bit-level behaviour; std::*_distribution is
// implementation-defined and would not reproduce across standard libraries.
double uniform01(std::mt19937_64& g);                       // [0, 1)
double uniform(std::mt19937_64& g, double lo, double hi);   // [lo, hi)
double normal(std::mt19937_64& g);                          // Box-Muller, one draw
int uniform_int(std::mt19937_64& g, int lo, int hi);        // inclusive both ends

// mt19937_64 state round-trips through its text representation.
std::string rng_to_string(const std::mt19937_64& g);
std::mt19937_64 rng_from_string(const std::string& s);

// The named streams a training run consumes, checkpointable as a unit.
struct RngHub {
  std::mt19937_64 data;      // epoch shuffling, corpus draws
  std::mt19937_64 init;      // parameter initialization
  std::mt19937_64 dropout;   // dropout masks
  std::mt19937_64 sampling;  // RL temperature sampling

  static RngHub from_seed(std::uint64_t seed);
};

}  // namespace latgeo
