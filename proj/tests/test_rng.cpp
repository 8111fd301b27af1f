#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>

#include "obsnet/rng.hpp"

using obsnet::SeededRng;

TEST(SplitMix64, KnownAnswerFromSeedZero) {
  SeededRng r(0);
  EXPECT_EQ(r.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(r.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(r.next_u64(), 0x06C45D188009454FULL);
}

TEST(SplitMix64, SameSeedSameStream) {
  SeededRng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(SplitMix64, DerivedStreamsAreDistinctAndReproducible) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    auto r = SeededRng::derive(7, k);
    firsts.insert(r.next_u64());
    EXPECT_EQ(SeededRng::derive(7, k).next_u64(), SeededRng::derive(7, k).next_u64());
  }
  EXPECT_EQ(firsts.size(), 1000u);
  EXPECT_NE(SeededRng::derive(7, 0).next_u64(), SeededRng::derive(8, 0).next_u64());
}

TEST(SplitMix64, UniformIntCoversInclusiveRange) {
  SeededRng r(3);
  std::array<int, 5> hist{};
  for (int i = 0; i < 50000; ++i) {
    const int v = r.uniform_int(-2, 2);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 2);
    ++hist[static_cast<std::size_t>(v + 2)];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(SplitMix64, UniformAndNormalMoments) {
  SeededRng r(5);
  double su = 0, sn = 0, sn2 = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / N, 0.5, 0.005);
  EXPECT_NEAR(sn / N, 0.0, 0.01);
  EXPECT_NEAR(sn2 / N, 1.0, 0.02);
}
