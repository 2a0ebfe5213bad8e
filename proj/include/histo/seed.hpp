#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace histo {

/// SplitMix64 output function (Steele, Lea, Flood). Also used as a
/// standalone 64-bit mixer.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t operator()() {
    state_ += 0x9e3779b97f4a7c15ull;
    return splitmix64_mix(state_);
  }

  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi]; returns lo when the range is empty.
  double uniform(double lo, double hi) {
    const double v = lo + (hi - lo) * uniform01();
    return v > hi ? hi : v;
  }

  /// Unbiased integer in [0, n), n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return x % n;
  }

 private:
  std::uint64_t state_;
};

/// FNV-1a, 64 bit. Platform-independent byte hash used for item keys and
/// file digests.
class Fnv1a64 {
 public:
  Fnv1a64& bytes(std::span<const std::uint8_t> data) {
    for (std::uint8_t b : data) {
      h_ ^= b;
      h_ *= 0x100000001b3ull;
    }
    return *this;
  }
  Fnv1a64& str(std::string_view s) {
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    return u8(0);
  }
  Fnv1a64& u8(std::uint8_t v) { return bytes({&v, 1}); }
  Fnv1a64& u64(std::uint64_t v) {
    std::uint8_t le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return bytes(le);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// Identifies one random stream: a patch (plus its dihedral variant) at an
/// epoch and pipeline stage.
struct ItemKey {
  std::string image_id;
  std::int64_t grid_index = 0;
  std::int64_t epoch = 0;
  std::int64_t stage_id = 0;
  std::int64_t variant = 0;

  std::uint64_t hash() const {
    return Fnv1a64()
        .str(image_id)
        .u64(static_cast<std::uint64_t>(grid_index))
        .u64(static_cast<std::uint64_t>(epoch))
        .u64(static_cast<std::uint64_t>(stage_id))
        .u64(static_cast<std::uint64_t>(variant))
        .value();
  }
};

struct SeedContext {
  std::uint64_t master_seed = 0;
  ItemKey item_key;

  std::uint64_t stream_seed() const { return splitmix64_mix(master_seed ^ item_key.hash()); }
  SplitMix64 stream() const { return SplitMix64(stream_seed()); }
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, SplitMix64 rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace histo
