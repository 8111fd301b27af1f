#include <gtest/gtest.h>

#include <cmath>

#include "obsnet/baselines.hpp"

using namespace obsnet;
using namespace obsnet::base;

namespace {

struct Fixture {
  seg::Params params;
  std::vector<data::Scene> scenes;
  std::vector<data::Image> images;

  Fixture() {
    auto rng = SeededRng::derive(5, 1);
    params = seg::init_seg_params(rng);
    data::DatasetManifest m;
    m.seed = 4;
    m.n_train = 6;
    m.n_test = 3;
    auto ds = data::generate_dataset(m);
    scenes = ds.train;
    for (const auto& s : ds.test) images.push_back(s.image);
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

void expect_valid(const std::vector<ScoreMap>& maps, std::size_t n) {
  ASSERT_EQ(maps.size(), n);
  for (const auto& m : maps)
    for (float v : m.data) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
}

}  // namespace

TEST(SoftmaxFamily, UniformSoftmaxGivesMcpFiveSixths) {
  nd::Array4<float> logits({1, 6, 4, 4});
  const auto s = max_prob_scores(logits, 1.0);
  for (float v : s[0].data) EXPECT_NEAR(v, 5.0 / 6.0, 1e-7);
}

TEST(SoftmaxFamily, UnitTemperatureEqualsMcpExactly) {
  ScoringContext ctx{&fx().params, {}, {}};
  const auto mcp = score_images(Method::mcp, ctx, fx().images);
  ctx.cfg.temperature = 1.0;
  EXPECT_EQ(score_images(Method::tempscale, ctx, fx().images), mcp);
}

TEST(SoftmaxFamily, TemperatureNeverChangesTheArgmax) {
  auto rng = SeededRng::derive(8, 0);
  nd::Array4<float> logits({2, 6, 5, 5});
  for (auto& v : logits.vec()) v = static_cast<float>(rng.uniform(-4.0, 4.0));
  const auto ref = seg::argmax_labels(logits);
  for (double T : {0.5, 2.0, 5.0}) {
    auto scaled = logits;
    for (auto& v : scaled.vec()) v = static_cast<float>(v / T);
    EXPECT_EQ(seg::argmax_labels(scaled), ref);
  }
}

TEST(SoftmaxFamily, VoidScoreIsTheVoidChannel) {
  ScoringContext ctx{&fx().params, {}, {}};
  const auto s = score_images(Method::void_class, ctx, fx().images);
  const auto pass = seg::seg_forward_eval(fx().params, data::to_batch(fx().images));
  const auto& p = pass.softmax();
  for (std::size_t i = 0; i < s[1].size(); ++i) EXPECT_EQ(s[1].data[i], p.sample_ptr(1)[5 * 4096 + i]);
}

TEST(Entropy, OneHotIsZeroAndUniformIsOne) {
  nd::Array4<double> onehot({1, 6, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) onehot[2 * 4 + i] = 1.0;
  const auto h0 = normalized_entropy(onehot);
  for (float v : h0[0].data) EXPECT_EQ(v, 0.0f);
  nd::Array4<double> uniform({1, 6, 2, 2});
  for (auto& v : uniform.vec()) v = 1.0 / 6.0;
  const auto h1 = normalized_entropy(uniform);
  for (float v : h1[0].data) EXPECT_NEAR(v, 1.0f, 1e-6);
}

TEST(SamplingFamily, ZeroSigmaGaussPertEqualsSingleModelEntropy) {
  ScoringContext ctx{&fx().params, {}, {}};
  ctx.cfg.gauss_sigma_rel = 0.0;
  const auto g = score_images(Method::gausspert, ctx, fx().images);
  const auto pass = seg::seg_forward_eval(fx().params, data::to_batch(fx().images));
  nd::Array4<double> p(pass.softmax().shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = pass.softmax()[i];
  const auto single = normalized_entropy(p);
  for (std::size_t n = 0; n < g.size(); ++n)
    for (std::size_t i = 0; i < g[n].size(); ++i) EXPECT_NEAR(g[n].data[i], single[n].data[i], 1e-6);
}

TEST(SamplingFamily, EveryScorerIsBoundedAndDeterministic) {
  std::vector<seg::Params> members;
  for (std::uint64_t k = 0; k < 3; ++k) {
    auto rng = SeededRng::derive(77, k);
    members.push_back(seg::init_seg_params(rng));
  }
  ScoringContext ctx{&fx().params, members, {}};
  ctx.cfg.mc_passes = 4;
  ctx.cfg.mcda_passes = 4;
  ctx.cfg.odin_epsilon = 0.002;
  ctx.cfg.odin_temperature = 2.0;
  const auto before = seg::params_hash(fx().params);
  for (auto m : kMethods) {
    const auto a = score_images(m, ctx, fx().images);
    expect_valid(a, fx().images.size());
    EXPECT_EQ(score_images(m, ctx, fx().images), a) << to_string(m);
  }
  EXPECT_EQ(seg::params_hash(fx().params), before);
}

TEST(SamplingFamily, McDropoutUsesFiftyForwardPassesPerImage) {
  ScoringContext ctx{&fx().params, {}, {}};
  nd::pass_counters() = {};
  score_images(Method::mcdropout, ctx, std::span(fx().images).first(1));
  EXPECT_EQ(nd::pass_counters().forward, 50u);
  EXPECT_EQ(nd::pass_counters().backward, 0u);
}

TEST(SamplingFamily, McDropoutPassesDiffer) {
  ScoringContext ctx{&fx().params, {}, {}};
  ctx.cfg.mc_passes = 1;
  const auto one = score_images(Method::mcdropout, ctx, fx().images);
  ctx.cfg.mc_passes = 2;
  EXPECT_NE(score_images(Method::mcdropout, ctx, fx().images), one);
}

TEST(SamplingFamily, EnsembleWithMissingMembersNamesTheShortfall) {
  std::vector<seg::Params> members(2, fx().params);
  ScoringContext ctx{&fx().params, members, {}};
  try {
    score_images(Method::ensemble, ctx, fx().images);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("3 members required, 2 available"), std::string::npos);
  }
}

TEST(Mcda, AugmentThenInvertIsIdentityOnValidPixels) {
  auto rng = SeededRng::derive(12, 0);
  nd::Array4<float> x({2, 6, 10, 12});
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform());
  for (bool flip : {false, true})
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        const Augmentation a{flip, dy, dx};
        const auto r = invert_augmentation(apply_augmentation(x, a), a);
        std::size_t valid = 0;
        for (std::size_t n = 0; n < 2; ++n)
          for (std::size_t i = 0; i < 120; ++i) {
            if (r.weight.sample_ptr(n)[i] == 0.0) continue;
            ++valid;
            for (std::size_t c = 0; c < 6; ++c)
              ASSERT_EQ(r.probs.sample_ptr(n)[c * 120 + i], x.sample_ptr(n)[c * 120 + i]);
          }
        EXPECT_EQ(valid, 2u * (10u - static_cast<std::size_t>(std::abs(dy))) * (12u - static_cast<std::size_t>(std::abs(dx))));
      }
}

TEST(Mcda, FirstPassIsTheIdentity) {
  auto rng = SeededRng::derive(1, 1);
  const auto plan = mcda_plan(25, rng);
  ASSERT_EQ(plan.size(), 25u);
  EXPECT_FALSE(plan[0].flip);
  EXPECT_EQ(plan[0].dy, 0);
  EXPECT_EQ(plan[0].dx, 0);
  for (const auto& a : plan) {
    EXPECT_LE(std::abs(a.dy), 2);
    EXPECT_LE(std::abs(a.dx), 2);
  }
}

TEST(Odin, ZeroEpsilonUnitTemperatureIsMcp) {
  ScoringContext ctx{&fx().params, {}, {}};
  const auto mcp = score_images(Method::mcp, ctx, fx().images);
  ctx.cfg.odin_temperature = 1.0;
  ctx.cfg.odin_epsilon = 0.0;
  EXPECT_EQ(score_images(Method::odin, ctx, fx().images), mcp);
}

TEST(Odin, OneBackwardPassPerImage) {
  ScoringContext ctx{&fx().params, {}, {}};
  ctx.cfg.odin_epsilon = 0.002;
  nd::pass_counters() = {};
  score_images(Method::odin, ctx, fx().images);
  EXPECT_EQ(nd::pass_counters().backward, fx().images.size());
  EXPECT_EQ(nd::pass_counters().forward, 2 * fx().images.size());
}

TEST(Calibration, FittedTemperatureLiesInTheSearchInterval) {
  const double T = fit_temperature(fx().params, fx().scenes);
  EXPECT_GE(T, kTempLo);
  EXPECT_LE(T, kTempHi);
}

TEST(Calibration, OdinChoiceComesFromTheGrid) {
  const auto c = fit_odin(fx().params, std::span(fx().scenes).first(2));
  EXPECT_NE(std::find(kOdinTemperatures.begin(), kOdinTemperatures.end(), c.temperature), kOdinTemperatures.end());
  EXPECT_NE(std::find(kOdinEpsilons.begin(), kOdinEpsilons.end(), c.epsilon), kOdinEpsilons.end());
}

TEST(ScorerConfig, RejectsNonPositiveTemperatureAndZeroPasses) {
  ScorerConfig c;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.mc_passes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Methods, NamesRoundTrip) {
  for (auto m : kMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("nope"), ConfigError);
}
