#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "histo/seed.hpp"

using namespace histo;

TEST(SplitMix64, MatchesReferenceSequence) {
  // First outputs for seed 1234567 from the reference C implementation.
  SplitMix64 rng(1234567);
  EXPECT_EQ(rng(), 6457827717110365317ull);
  EXPECT_EQ(rng(), 3203168211198807973ull);
  EXPECT_EQ(rng(), 9817491932198370423ull);
}

TEST(SplitMix64, UniformStaysInRange) {
  SplitMix64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = rng.uniform(0.3, 0.6);
    ASSERT_GE(v, 0.3);
    ASSERT_LE(v, 0.6);
    ASSERT_LT(rng.below(7), 7u);
  }
}

TEST(SeedContext, SameKeySameStream) {
  const SeedContext a{42, {"img", 3, 1, 2, 0}};
  const SeedContext b{42, {"img", 3, 1, 2, 0}};
  EXPECT_EQ(a.stream_seed(), b.stream_seed());
  auto ra = a.stream();
  auto rb = b.stream();
  for (int i = 0; i < 5; ++i) EXPECT_EQ(ra(), rb());
}

TEST(SeedContext, EveryKeyFieldChangesTheStream) {
  const ItemKey base{"img", 3, 1, 2, 0};
  std::set<std::uint64_t> seeds;
  seeds.insert(SeedContext{42, base}.stream_seed());
  seeds.insert(SeedContext{43, base}.stream_seed());
  auto k = base;
  k.image_id = "img2";
  seeds.insert(SeedContext{42, k}.stream_seed());
  k = base;
  k.grid_index = 4;
  seeds.insert(SeedContext{42, k}.stream_seed());
  k = base;
  k.epoch = 2;
  seeds.insert(SeedContext{42, k}.stream_seed());
  k = base;
  k.stage_id = 3;
  seeds.insert(SeedContext{42, k}.stream_seed());
  k = base;
  k.variant = 1;
  seeds.insert(SeedContext{42, k}.stream_seed());
  EXPECT_EQ(seeds.size(), 7u);
}

TEST(Fnv1a64, KnownVectors) {
  EXPECT_EQ(Fnv1a64().value(), 0xcbf29ce484222325ull);
  const std::uint8_t a = 'a';
  EXPECT_EQ(Fnv1a64().bytes({&a, 1}).value(), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cull), "af63dc4c8601ec8c");
}

TEST(SeededPermutation, IsAPermutationAndDeterministic) {
  const auto p = seeded_permutation(100, SplitMix64(5));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(p, seeded_permutation(100, SplitMix64(5)));
  EXPECT_NE(p, seeded_permutation(100, SplitMix64(6)));
}
