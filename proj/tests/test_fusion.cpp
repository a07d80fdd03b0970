#include <gtest/gtest.h>

#include <cmath>

#include "lavpr/datagen.hpp"
#include "lavpr/fusion.hpp"
#include "lavpr/gradcheck.hpp"
#include "lavpr/trainer.hpp"
#include "support.hpp"

namespace lavpr {
namespace {

using testing::gaussian_vector;

std::vector<double> unit(std::mt19937_64& rng, std::size_t d) {
  return l2_normalize(gaussian_vector(rng, d)).value;
}

TEST(Mechanism, ParseRoundTrip) {
  for (auto m : {Mechanism::kCat, Mechanism::kPa, Mechanism::kMlp, Mechanism::kAds}) {
    EXPECT_EQ(parse_mechanism(to_string(m)), m);
  }
  EXPECT_THROW(parse_mechanism("sum"), Error);
}

TEST(FusionConfig, Validation) {
  FusionConfig c;
  c.d_v = 4;
  c.d_t = 0;
  EXPECT_THROW(c.validate(), Error);
  c.d_t = 3;
  EXPECT_NO_THROW(c.validate());
  c.mechanism = Mechanism::kMlp;
  EXPECT_EQ(c.hidden_width(), 7u);
  c.mechanism = Mechanism::kAds;
  EXPECT_EQ(c.output_dim(), 0u);
  c.mechanism = Mechanism::kCat;
  EXPECT_EQ(c.output_dim(), 7u);
}

TEST(FuseCat, HandExample) {
  const std::vector<double> v{1.0, 0.0}, t{0.0, 1.0};
  const auto z = fuse_cat(v, t);
  const double h = 1.0 / std::sqrt(2.0);
  ASSERT_EQ(z.value.size(), 4u);
  EXPECT_NEAR(z.value[0], h, 1e-12);
  EXPECT_NEAR(z.value[3], h, 1e-12);
}

TEST(FuseCat, CosineIsMeanOfModalityCosines) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto v1 = unit(rng, 8), t1 = unit(rng, 5), v2 = unit(rng, 8), t2 = unit(rng, 5);
    const double c = dot(fuse_cat(v1, t1).value, fuse_cat(v2, t2).value);
    EXPECT_NEAR(c, 0.5 * (dot(v1, v2) + dot(t1, t2)), 1e-6);
  }
}

TEST(FuseCat, ParameterFreeHead) {
  FusionConfig c;
  c.d_v = 3;
  c.d_t = 2;
  FusionHead h(c, 0);
  EXPECT_TRUE(h.parameter_free());
  EXPECT_EQ(h.parameter_count(), 0u);
  EXPECT_TRUE(h.params().empty());
}

TEST(FusePa, IdentityBlocksReduceToSum) {
  FusionConfig c;
  c.d_v = 2;
  c.d_t = 2;
  c.d_e = 2;
  c.mechanism = Mechanism::kPa;
  FusionHead h(c, 0);
  auto* p = h.pa();
  p->w_v.value = MatrixD::from_rows({{1, 0}, {0, 1}});
  p->w_t.value = p->w_v.value;
  p->b_v.value.fill(0.0);
  p->b_t.value.fill(0.0);
  const std::vector<double> v{1.0, 0.0}, t{0.0, 1.0};
  const auto z = fuse_pa(v, t, *p);
  EXPECT_NEAR(z.value[0], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(z.value[1], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(FusePa, ZeroWeightsAreDegenerate) {
  FusionConfig c;
  c.d_v = 2;
  c.d_t = 2;
  c.d_e = 3;
  c.mechanism = Mechanism::kPa;
  FusionHead h(c, 0);
  for (auto* p : h.params()) p->value.fill(0.0);
  const std::vector<double> v{1.0, 0.0}, t{0.0, 1.0};
  const auto z = fuse_pa(v, t, *h.pa());
  EXPECT_TRUE(z.degenerate);
}

TEST(AdsWeights, StartUniformAndStayOnSimplex) {
  FusionConfig c;
  c.d_v = 6;
  c.d_t = 4;
  c.mechanism = Mechanism::kAds;
  FusionHead h(c, 3);
  std::mt19937_64 rng(2);
  const auto w0 = ads_weights(unit(rng, 6), unit(rng, 4), *h.ads());
  EXPECT_DOUBLE_EQ(w0[0], 0.5);
  EXPECT_DOUBLE_EQ(w0[1], 0.5);
  h.randomize(9, 3.0);
  for (int i = 0; i < 200; ++i) {
    const auto w = ads_weights(unit(rng, 6), unit(rng, 4), *h.ads());
    EXPECT_GE(w[0], 0.0);
    EXPECT_GE(w[1], 0.0);
    EXPECT_NEAR(w[0] + w[1], 1.0, 1e-12);
  }
}

TEST(AdsJoint, BoundedByModalityScores) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng), b = u(rng);
    const ModalityWeights wi{a, 1.0 - a}, wj{b, 1.0 - b};
    const double sv = s(rng), st = s(rng);
    const double j = ads_joint_similarity(wi, wj, sv, st);
    EXPECT_GE(j, std::min(sv, st) - 1e-12);
    EXPECT_LE(j, std::max(sv, st) + 1e-12);
  }
}

TEST(AdsJoint, UniformWeightsMatchCat) {
  std::mt19937_64 rng(5);
  const ModalityWeights half{0.5, 0.5};
  for (int i = 0; i < 500; ++i) {
    const auto v1 = unit(rng, 6), t1 = unit(rng, 3), v2 = unit(rng, 6), t2 = unit(rng, 3);
    const double ads = ads_joint_similarity(half, half, dot(v1, v2), dot(t1, t2));
    EXPECT_NEAR(ads, dot(fuse_cat(v1, t1).value, fuse_cat(v2, t2).value), 1e-6);
  }
}

TEST(AdsJoint, HandExampleAndRejection) {
  EXPECT_DOUBLE_EQ(ads_joint_similarity({1.0, 0.0}, {0.0, 1.0}, 0.8, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(ads_joint_similarity({1.0, 0.0}, {1.0, 0.0}, 0.8, 0.2), 0.8);
  EXPECT_THROW(ads_joint_similarity({0.7, 0.7}, {0.5, 0.5}, 0.1, 0.1), Error);
}

TEST(Llp, CLSOnlyRejected) {
  FusionConfig c;
  c.d_v = 3;
  c.d_t = 4;
  c.mechanism = Mechanism::kAds;
  c.use_llp = true;
  FusionHead h(c, 0);
  try {
    llp_pool(MatrixD(1, 4, 0.5), *h.llp());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoPoolableTokens);
  }
}

TEST(Llp, OutputIsUnitNorm) {
  FusionConfig c;
  c.d_v = 3;
  c.d_t = 4;
  c.mechanism = Mechanism::kPa;
  c.use_llp = true;
  FusionHead h(c, 1);
  h.randomize(2);
  std::mt19937_64 rng(3);
  const auto toks = testing::gaussian_matrix(rng, 5, 4);
  const auto z = llp_pool(toks, *h.llp());
  EXPECT_NEAR(norm2(z.value), 1.0, 1e-12);
}

struct GradCase {
  Mechanism mech;
  bool llp;
};

class HeadGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(HeadGradient, MatchesFiniteDifferences) {
  SynthConfig sc;
  sc.n_places = 8;
  sc.train_places = 8;
  sc.d_v = 6;
  sc.d_t = 5;
  sc.token_dim = 5;
  sc.latent_dim = 4;
  sc.tokens_per_text = 3;
  sc.seed = 3;
  const auto b = gen_synthetic(sc);
  std::vector<std::string> ids, places;
  for (const auto& r : b.data.vision.records) {
    ids.push_back(r.record_id);
    places.push_back(r.place_id);
  }
  const auto in = gather_inputs(b.data, ids, GetParam().llp);
  FusionConfig fc;
  fc.d_v = 6;
  fc.d_t = 5;
  fc.d_e = 7;
  fc.mechanism = GetParam().mech;
  fc.use_llp = GetParam().llp;
  MsConfig ms = MsConfig::fusion_defaults();
  ms.beta = 10.0;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    FusionHead h(fc, seed);
    h.randomize(seed + 100);
    const auto params = h.params();
    const auto rep = finite_diff_check([&] { return h.loss_and_grad(in, places, ms); }, params);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.failure;
  }
}

INSTANTIATE_TEST_SUITE_P(Heads, HeadGradient,
                         ::testing::Values(GradCase{Mechanism::kPa, false},
                                           GradCase{Mechanism::kPa, true},
                                           GradCase{Mechanism::kMlp, false},
                                           GradCase{Mechanism::kMlp, true},
                                           GradCase{Mechanism::kAds, false},
                                           GradCase{Mechanism::kAds, true}));

TEST(FusionHead, BundleRoundTripPreservesOutputs) {
  std::mt19937_64 rng(6);
  FusionInputs in;
  in.vision = testing::unit_rows(rng, 5, 6);
  in.text = testing::unit_rows(rng, 5, 4);
  for (int i = 0; i < 5; ++i) in.tokens.push_back(testing::gaussian_matrix(rng, 3, 4));
  for (auto mech : {Mechanism::kPa, Mechanism::kMlp, Mechanism::kAds}) {
    FusionConfig c;
    c.d_v = 6;
    c.d_t = 4;
    c.d_e = 5;
    c.mechanism = mech;
    c.use_llp = true;
    FusionHead h(c, 11);
    h.randomize(12);
    const auto back = FusionHead::from_bundle(h.to_bundle());
    const auto a = h.forward(in), b = back.forward(in);
    EXPECT_EQ(a.embedding, b.embedding);
    EXPECT_EQ(a.weights, b.weights);
  }
}

TEST(FusionHead, DimensionMismatchRejected) {
  FusionConfig c;
  c.d_v = 3;
  c.d_t = 2;
  c.mechanism = Mechanism::kPa;
  FusionHead h(c, 0);
  FusionInputs in;
  in.vision = MatrixD(2, 4);
  in.text = MatrixD(2, 2);
  try {
    h.forward(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(FusionHead, SimilarityOfCatMatchesCosine) {
  std::mt19937_64 rng(7);
  FusionInputs in;
  in.vision = testing::unit_rows(rng, 4, 3);
  in.text = testing::unit_rows(rng, 4, 3);
  FusionConfig c;
  c.d_v = 3;
  c.d_t = 3;
  FusionHead h(c, 0);
  const auto f = h.forward(in);
  const auto s = FusionHead::similarity(f, f);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(s(i, j), 0.5 * (dot(in.vision.row(i), in.vision.row(j)) +
                                  dot(in.text.row(i), in.text.row(j))),
                  1e-12);
    }
  }
}

}  // namespace
}  // namespace lavpr
