#include "latgeo/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace latgeo {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ mix64(seed));
}

std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t s = hash_bytes(name.data(), name.size(), seed);
  return std::mt19937_64(s);
}

double uniform01(std::mt19937_64& g) {
  // 53 high bits -> [0, 1) with full double resolution.
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

double normal(std::mt19937_64& g) {
  // Box-Muller; u clamped away from 0 so log stays finite.
  double u = uniform01(g);
  if (u < 1e-300) u = 1e-300;
  const double v = uniform01(g);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

int uniform_int(std::mt19937_64& g, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(g() % span);
}

std::string rng_to_string(const std::mt19937_64& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 g;
  std::istringstream is(s);
  is >> g;
  return g;
}

RngHub RngHub::from_seed(std::uint64_t seed) {
  RngHub h;
  h.data = make_stream(seed, "data");
  h.init = make_stream(seed, "init");
  h.dropout = make_stream(seed, "dropout");
  h.sampling = make_stream(seed, "sampling");
  return h;
}

}  // namespace latgeo
