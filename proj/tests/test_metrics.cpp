#include <gtest/gtest.h>

#include <cmath>

#include "obsnet/metrics.hpp"
#include "oracles.hpp"

using namespace obsnet;
using namespace obsnet::metrics;

namespace {

LabeledScores make(std::initializer_list<std::pair<double, bool>> items) {
  LabeledScores d;
  for (auto [s, p] : items) d.push(s, p);
  return d;
}

LabeledScores separated(std::size_t np, std::size_t nn) {
  LabeledScores d;
  for (std::size_t i = 0; i < np; ++i) d.push(1.0, true);
  for (std::size_t i = 0; i < nn; ++i) d.push(0.0, false);
  return d;
}

}  // namespace

TEST(Auroc, PerfectSeparationIsOne) { EXPECT_DOUBLE_EQ(auroc(separated(25, 30)), 1.0); }

TEST(Auroc, AllTiesIsHalf) {
  LabeledScores d;
  for (int i = 0; i < 10; ++i) d.push(0.3, i % 3 == 0);
  EXPECT_DOUBLE_EQ(auroc(d), 0.5);
}

TEST(Auroc, FourPointExampleMatchesPairCount) {
  // Pairs (pos, neg): (.9,.8) (.9,.1) (.7,.1) win, (.7,.8) loses -> 3/4.
  const auto d = make({{0.9, true}, {0.8, false}, {0.7, true}, {0.1, false}});
  EXPECT_DOUBLE_EQ(auroc(d), 0.75);
  EXPECT_DOUBLE_EQ(oracle::auroc_pairs(d), 0.75);
}

TEST(Auroc, SingleClassIsAnError) {
  EXPECT_THROW(auroc(separated(5, 0)), NumericError);
  EXPECT_THROW(auroc(separated(0, 5)), NumericError);
}

TEST(Aupr, PerfectSeparationIsOne) { EXPECT_DOUBLE_EQ(aupr(separated(25, 30)), 1.0); }

TEST(Aupr, SinglePositiveRankedLastAmongFour) {
  const auto d = make({{0.9, false}, {0.8, false}, {0.7, false}, {0.1, true}});
  EXPECT_DOUBLE_EQ(aupr(d), 0.25);
}

TEST(Aupr, DuplicatingEveryPairLeavesItUnchanged) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = oracle::random_instance(seed, 400);
    LabeledScores twice = d;
    for (std::size_t i = 0; i < d.size(); ++i) twice.push(d.score[i], d.positive[i]);
    EXPECT_NEAR(aupr(twice), aupr(d), 1e-12);
  }
}

TEST(Fpr95, PerfectSeparationIsZero) { EXPECT_DOUBLE_EQ(fpr_at_95_tpr(separated(25, 30)), 0.0); }

TEST(Fpr95, IndistinguishableClassesGiveAboutNinetyFivePercent) {
  auto rng = SeededRng::derive(3, 0);
  LabeledScores d;
  for (int i = 0; i < 100000; ++i) d.push(rng.uniform(), rng.bernoulli(0.5));
  EXPECT_NEAR(fpr_at_95_tpr(d), 0.95, 0.02);
}

TEST(Fpr95, NineteenOfTwentyAboveNegativesIsEnough) {
  // 19/20 = 95% TPR is reached at the top threshold, before any negative.
  LabeledScores d;
  for (int i = 0; i < 19; ++i) d.push(1.0, true);
  d.push(0.0, true);
  for (int i = 0; i < 10; ++i) d.push(0.5, false);
  EXPECT_DOUBLE_EQ(fpr_at_95_tpr(d), 0.0);
  EXPECT_DOUBLE_EQ(oracle::fpr95_scan(d), 0.0);
}

TEST(Fpr95, CapturingALowPositiveForcesEveryNegativeIn) {
  // 18/20 at the top is short of 95%; the next threshold is 0.0, below every negative.
  LabeledScores d;
  for (int i = 0; i < 18; ++i) d.push(1.0, true);
  d.push(0.0, true);
  d.push(0.0, true);
  for (int i = 0; i < 10; ++i) d.push(0.5, false);
  EXPECT_DOUBLE_EQ(fpr_at_95_tpr(d), 1.0);
  EXPECT_DOUBLE_EQ(oracle::fpr95_scan(d), 1.0);
}

TEST(Fpr95, FewerThanTwentyPositivesIsAnError) { EXPECT_THROW(fpr_at_95_tpr(separated(19, 30)), NumericError); }

TEST(Ace, ConfidentAndCorrectIsZero) {
  std::vector<double> conf(30, 1.0);
  std::vector<std::uint8_t> ok(30, 1);
  EXPECT_DOUBLE_EQ(ace(conf, ok), 0.0);
}

TEST(Ace, ConfidentAndHalfCorrectInOneRange) {
  const std::vector<double> conf{1.0, 1.0};
  const std::vector<std::uint8_t> ok{1, 0};
  EXPECT_DOUBLE_EQ(ace(conf, ok, 1), 0.5);
}

TEST(Ace, EqualCountRangesSpreadTheRemainderFirst) {
  // 5 samples, 2 ranges -> sizes 3 and 2.
  const std::vector<double> conf{0.1, 0.2, 0.3, 0.8, 0.9};
  const std::vector<std::uint8_t> ok{0, 0, 1, 1, 1};
  const double r1 = std::abs(1.0 / 3.0 - 0.6 / 3.0), r2 = std::abs(1.0 - 0.85);
  EXPECT_NEAR(ace(conf, ok, 2), (r1 + r2) / 2.0, 1e-15);
}

TEST(Ace, PermutationInvariant) {
  auto rng = SeededRng::derive(9, 0);
  std::vector<double> conf;
  std::vector<std::uint8_t> ok;
  for (int i = 0; i < 500; ++i) {
    conf.push_back(std::round(rng.uniform() * 10.0) / 10.0);  // many ties
    ok.push_back(rng.bernoulli(0.6));
  }
  const double ref = ace(conf, ok);
  for (std::size_t i = conf.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(conf[i - 1], conf[j]);
    std::swap(ok[i - 1], ok[j]);
  }
  EXPECT_DOUBLE_EQ(ace(conf, ok), ref);
}

TEST(Ace, TooFewSamplesIsAnError) {
  const std::vector<double> conf(14, 0.5);
  const std::vector<std::uint8_t> ok(14, 1);
  EXPECT_THROW(ace(conf, ok), NumericError);
}

TEST(MetricOracles, TwoHundredRandomInstancesMatchBruteForce) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto d = oracle::random_instance(seed);
    EXPECT_NEAR(auroc(d), oracle::auroc_pairs(d), 1e-9) << seed;
    EXPECT_NEAR(aupr(d), oracle::aupr_steps(d), 1e-9) << seed;
    EXPECT_EQ(fpr_at_95_tpr(d), oracle::fpr95_scan(d)) << seed;
  }
}

TEST(MetricInvariance, StrictlyIncreasingTransformChangesNothing) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = oracle::random_instance(seed, 500);
    auto t = d;
    for (auto& s : t.score) s = std::exp(3.0 * s) - 7.0;
    EXPECT_EQ(auroc(t), auroc(d));
    EXPECT_EQ(aupr(t), aupr(d));
    EXPECT_EQ(fpr_at_95_tpr(t), fpr_at_95_tpr(d));
  }
}

TEST(MetricInvariance, InputOrderDoesNotMatter) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = oracle::random_instance(seed, 500);
    auto r = d;
    std::reverse(r.score.begin(), r.score.end());
    std::reverse(r.positive.begin(), r.positive.end());
    EXPECT_DOUBLE_EQ(auroc(r), auroc(d));
    EXPECT_DOUBLE_EQ(aupr(r), aupr(d));
    EXPECT_EQ(fpr_at_95_tpr(r), fpr_at_95_tpr(d));
  }
}

class Evaluate : public ::testing::Test {
 protected:
  void SetUp() override {
    auto rng = SeededRng::derive(21, 0);
    for (int n = 0; n < 4; ++n) {
      LabelMap gt(16, 16), pred(16, 16);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gt.data[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
        pred.data[i] = rng.bernoulli(0.8) ? gt.data[i] : static_cast<std::uint8_t>(rng.uniform_int(0, 4));
      }
      for (std::size_t i = 0; i < 40; ++i) gt.data[i] = data::kAnomaly;
      for (std::size_t i = 40; i < 50; ++i) gt.data[i] = data::kVoid;
      gts.push_back(gt);
      preds.push_back(pred);
    }
  }
  std::vector<ImageEval> items(const std::vector<ScoreMap>& s) const {
    std::vector<ImageEval> out;
    for (std::size_t i = 0; i < s.size(); ++i) out.push_back({&s[i], &gts[i], &preds[i], nullptr});
    return out;
  }
  std::vector<LabelMap> gts, preds;
};

TEST_F(Evaluate, ExactErrorTargetIsAPerfectErrorDetector) {
  std::vector<ScoreMap> s;
  for (std::size_t n = 0; n < gts.size(); ++n) {
    ScoreMap m(16, 16);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = preds[n].data[i] != gts[n].data[i] ? 1.0f : 0.0f;
    s.push_back(m);
  }
  const auto r = evaluate(items(s), EvalMode::error, "oracle", 0);
  EXPECT_DOUBLE_EQ(r.auroc, 1.0);
  EXPECT_DOUBLE_EQ(r.fpr95tpr, 0.0);
}

TEST_F(Evaluate, OodMaskIsAPerfectOodDetector) {
  std::vector<ScoreMap> s;
  for (const auto& gt : gts) {
    ScoreMap m(16, 16);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = gt.data[i] == data::kAnomaly ? 1.0f : 0.0f;
    s.push_back(m);
  }
  const auto r = evaluate(items(s), EvalMode::ood, "oracle", 0);
  EXPECT_DOUBLE_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.n_pos, 4u * 40u);
}

TEST_F(Evaluate, ConstantScoreIsUninformativeAndCountsPartitionNonVoidPixels) {
  std::vector<ScoreMap> s(gts.size(), ScoreMap(16, 16, 0.5f));
  const auto r = evaluate(items(s), EvalMode::error, "constant", 3);
  EXPECT_DOUBLE_EQ(r.auroc, 0.5);
  EXPECT_EQ(r.n_pos + r.n_neg, 4u * (256u - 10u));
  EXPECT_EQ(r.seed, 3u);
}

TEST_F(Evaluate, AttackModeRequiresMasks) {
  std::vector<ScoreMap> s(gts.size(), ScoreMap(16, 16, 0.5f));
  EXPECT_THROW(evaluate(items(s), EvalMode::attack, "m", 0), MissingArtifact);
}

TEST(ResultsCsv, HeaderAndRowLayout) {
  EXPECT_STREQ(kResultsHeader, "method,mode,fpr95tpr,auroc,aupr,ace,n_pos,n_neg,seed");
  MetricsReport r{"mcp", EvalMode::error, 0.5, 0.75, 0.25, 0.125, 10, 20, 7};
  EXPECT_EQ(csv_row(r), "mcp,error,0.5,0.75,0.25,0.125,10,20,7");
}

TEST(EvalModes, ParseRoundTrip) {
  for (auto m : {EvalMode::ood, EvalMode::error, EvalMode::attack}) EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_THROW(parse_mode("bogus"), ConfigError);
}
