#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace g2pm {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a list of counters into one 64-bit stream key. Order matters.
inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Counter-based stream: every random decision in a run is drawn from a stream
// keyed by (seed, purpose, counters...), so a run can be resumed from any step
// without serialising generator state and results do not depend on scheduling.
inline Rng make_stream(std::initializer_list<std::uint64_t> parts) {
  return Rng(stream_key(parts));
}

// Purpose tags used as the second key component.
enum class Stream : std::uint64_t {
  walks = 1,
  augment = 2,
  mask = 3,
  dropout = 4,
  shuffle = 5,
  init = 6,
  mask_token = 7,
  split = 8,
  negatives = 9,
  probe = 10,
  generator = 11,
};

inline Rng make_stream(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return make_stream({seed, static_cast<std::uint64_t>(s), a, b});
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace g2pm
