#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "lavpr/datagen.hpp"
#include "lavpr/encoder.hpp"
#include "lavpr/gradcheck.hpp"
#include "lavpr/lora.hpp"
#include "lavpr/trainer.hpp"
#include "support.hpp"

namespace lavpr {
namespace {

using testing::gaussian_matrix;

LoraLayer make_layer(std::mt19937_64& rng, std::size_t out, std::size_t in) {
  LoraLayer l;
  l.name = "l";
  l.w0 = gaussian_matrix(rng, out, in);
  l.bias = gaussian_matrix(rng, 1, out);
  return l;
}

Eigen::Index numeric_rank(const MatrixD& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  svd.setThreshold(1e-9);
  return svd.rank();
}

TEST(Lora, ZeroInitLeavesOutputUnchanged) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto layer = make_layer(rng, 7, 5);
    const auto x = gaussian_matrix(rng, 4, 5);
    const auto before = lora_forward(x, layer);
    layer.attach(3, 1.0, rng);
    EXPECT_EQ(lora_forward(x, layer), before);
    EXPECT_EQ(merge_lora(layer), layer.w0);
  }
}

TEST(Lora, MergedUpdateRankBoundedByR) {
  std::mt19937_64 rng(2);
  for (std::size_t r : {1u, 2u, 4u, 5u}) {
    auto layer = make_layer(rng, 9, 5);
    layer.attach(r, 0.7, rng);
    layer.b->value = gaussian_matrix(rng, 9, r);
    MatrixD delta = merge_lora(layer);
    for (std::size_t i = 0; i < delta.size(); ++i) delta.data()[i] -= layer.w0.data()[i];
    EXPECT_LE(numeric_rank(delta), static_cast<Eigen::Index>(r));
    EXPECT_EQ(numeric_rank(delta), static_cast<Eigen::Index>(r));
  }
}

TEST(Lora, RankBoundsEnforced) {
  std::mt19937_64 rng(3);
  auto layer = make_layer(rng, 4, 6);
  try {
    layer.attach(0, 1.0, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankViolation);
  }
  EXPECT_THROW(layer.attach(5, 1.0, rng), Error);
  EXPECT_NO_THROW(layer.attach(4, 1.0, rng));
}

TEST(Lora, TrainableCount) {
  std::mt19937_64 rng(4);
  auto layer = make_layer(rng, 8, 6);
  EXPECT_EQ(layer.trainable_count(), 0u);
  layer.attach(2, 1.0, rng);
  EXPECT_EQ(layer.trainable_count(), 2u * (8 + 6));
}

TEST(Lora, ForwardMatchesMergedWeights) {
  std::mt19937_64 rng(5);
  auto layer = make_layer(rng, 6, 4);
  layer.attach(2, 0.5, rng);
  layer.b->value = gaussian_matrix(rng, 6, 2);
  const auto x = gaussian_matrix(rng, 3, 4);
  const auto a = lora_forward(x, layer);
  const auto b = affine(x, merge_lora(layer), layer.bias);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Lora, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto layer = make_layer(rng, 5, 4);
  layer.attach(2, 1.3, rng);
  layer.b->value = gaussian_matrix(rng, 5, 2);
  const auto x = gaussian_matrix(rng, 3, 4);
  const auto w = gaussian_matrix(rng, 3, 5);
  auto loss = [&] {
    const auto y = lora_forward(x, layer);
    layer.a->zero_grad();
    layer.b->zero_grad();
    lora_backward(x, layer, w);
    double l = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) l += y.data()[i] * w.data()[i];
    return l;
  };
  Param* params[] = {&*layer.a, &*layer.b};
  EXPECT_TRUE(finite_diff_check(loss, params).passed);
}

TEST(LoraTarget, ParseRoundTrip) {
  EXPECT_EQ(parse_lora_target("qkv"), LoraTarget::kQkv);
  EXPECT_EQ(parse_lora_target("all"), LoraTarget::kAllLinear);
  EXPECT_EQ(parse_lora_target(to_string(LoraTarget::kAllLinear)), LoraTarget::kAllLinear);
  EXPECT_THROW(parse_lora_target("mlp"), Error);
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.input_dim = 5;
  c.model_dim = 8;
  c.heads = 2;
  c.ff_dim = 6;
  c.blocks = 2;
  c.output_dim = 4;
  c.max_seq_len = 6;
  return c;
}

TEST(Encoder, ConfigValidation) {
  auto c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Encoder, OutputIsUnitNormAndDeterministic) {
  ToyEncoder a(small_config(), 7), b(small_config(), 7);
  std::mt19937_64 rng(1);
  const auto x = gaussian_matrix(rng, 4, 5);
  const auto z = a.encode(x);
  EXPECT_NEAR(norm2(z), 1.0, 1e-12);
  EXPECT_EQ(z, b.encode(x));
  EXPECT_EQ(a.frozen_hash(), b.frozen_hash());
  EXPECT_NE(a.frozen_hash(), ToyEncoder(small_config(), 8).frozen_hash());
}

TEST(Encoder, InputErrors) {
  ToyEncoder e(small_config(), 0);
  try {
    e.encode(MatrixD(7, 5));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::kSequenceTooLong);
  }
  EXPECT_THROW(e.encode(MatrixD(0, 5)), Error);
  EXPECT_THROW(e.encode(MatrixD(2, 4)), Error);
}

TEST(Encoder, ApplyLoraCountsAndTargets) {
  const auto c = small_config();
  ToyEncoder qkv(c, 0), all(c, 0);
  const std::size_t r = 2;
  const std::size_t d = c.model_dim, f = c.ff_dim;
  EXPECT_EQ(apply_lora(qkv, {LoraTarget::kQkv, r, 1.0}, 1), c.blocks * 3 * r * (d + d));
  EXPECT_EQ(apply_lora(all, {LoraTarget::kAllLinear, r, 1.0}, 1),
            c.blocks * (4 * r * (d + d) + r * (f + d) + r * (d + f)));
  EXPECT_EQ(all.trainable_parameter_count(),
            c.blocks * (4 * r * (d + d) + r * (f + d) + r * (d + f)));
  EXPECT_EQ(all.trainable().size(), c.blocks * 6 * 2);
  const auto layers = all.layers();
  EXPECT_FALSE(layers.front()->adapted());
  EXPECT_FALSE(layers.back()->adapted());
}

TEST(Encoder, ZeroInitAdaptersKeepEmbedding) {
  ToyEncoder e(small_config(), 3);
  std::mt19937_64 rng(2);
  const auto x = gaussian_matrix(rng, 5, 5);
  const auto before = e.encode(x);
  apply_lora(e, {LoraTarget::kAllLinear, 2, 1.0}, 4);
  EXPECT_EQ(e.encode(x), before);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  SynthConfig sc;
  sc.n_places = 8;
  sc.train_places = 8;
  sc.d_v = 6;
  sc.d_t = 5;
  sc.token_dim = 5;
  sc.latent_dim = 4;
  sc.tokens_per_text = 3;
  sc.patches_per_image = 3;
  sc.seed = 3;
  const auto b = gen_synthetic(sc);
  Batch batch;
  for (const auto& r : b.data.vision.records) {
    batch.record_ids.push_back(r.record_id);
    batch.place_ids.push_back(r.place_id);
  }
  auto ec = small_config();
  auto ev = ec;
  ev.input_dim = 6;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    auto m = make_crossmodal_model(ec, ev, LoraSpec{LoraTarget::kAllLinear, 2, 1.0}, seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.3);
    std::vector<Param*> params = m.text.trainable();
    for (auto* p : m.vision.trainable()) params.push_back(p);
    for (auto* p : params) {
      for (auto& v : p->value.data()) v += nd(rng);
    }
    for (auto loss : {CrossLoss::kMs, CrossLoss::kContrastive}) {
      TrainConfig tc = TrainConfig::crossmodal_defaults();
      tc.cross_loss = loss;
      const auto rep = finite_diff_check(
          [&] { return crossmodal_loss_and_grad(m, b.data, batch, tc); }, params);
      EXPECT_TRUE(rep.passed) << to_string(loss) << " " << rep.max_rel_error;
    }
  }
}

TEST(Encoder, BundlesRoundTrip) {
  ToyEncoder e(small_config(), 5);
  apply_lora(e, {LoraTarget::kQkv, 2, 0.5}, 6);
  std::mt19937_64 rng(3);
  for (auto* p : e.trainable()) p->value = gaussian_matrix(rng, p->value.rows(), p->value.cols());
  const auto base = e.base_bundle();
  const auto adapters = e.adapter_bundle();
  const auto back = ToyEncoder::from_bundles(base, &adapters);
  const auto x = gaussian_matrix(rng, 3, 5);
  EXPECT_EQ(back.encode(x), e.encode(x));
  EXPECT_EQ(back.frozen_hash(), e.frozen_hash());
  EXPECT_THROW(ToyEncoder::from_bundles(adapters, nullptr), Error);
}

TEST(Encoder, NonEmbeddingParameterCount) {
  const auto c = small_config();
  ToyEncoder e(c, 0);
  const std::size_t d = c.model_dim, f = c.ff_dim;
  const std::size_t per_block = 4 * (d * d + d) + (f * d + f) + (d * f + d);
  EXPECT_EQ(e.non_embedding_parameter_count(), c.blocks * per_block + c.output_dim * d + c.output_dim);
  EXPECT_EQ(e.parameter_count(),
            e.non_embedding_parameter_count() + d * c.input_dim + d);
}

}  // namespace
}  // namespace lavpr
