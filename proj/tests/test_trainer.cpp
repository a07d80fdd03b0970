#include <gtest/gtest.h>

#include <set>

#include "lavpr/datagen.hpp"
#include "lavpr/trainer.hpp"
#include "support.hpp"

namespace lavpr {
namespace {

SynthBenchmark small_bench(std::size_t places = 60, std::size_t train = 40) {
  SynthConfig sc;
  sc.n_places = places;
  sc.train_places = train;
  sc.d_v = 16;
  sc.d_t = 12;
  sc.token_dim = 12;
  sc.latent_dim = 8;
  sc.tokens_per_text = 3;
  sc.sigma_v = 0.8;
  sc.sigma_t = 0.8;
  sc.seed = 5;
  return gen_synthetic(sc);
}

TEST(Schedule, StepDecayEveryTwoEpochs) {
  TrainConfig c;
  c.lr0 = 0.05;
  const double want[] = {0.05, 0.05, 0.05 / 3, 0.05 / 3, 0.05 / 9, 0.05 / 9, 0.05 / 27};
  for (std::size_t e = 0; e < 7; ++e) EXPECT_NEAR(lr_at_epoch(c, e), want[e], 1e-15) << e;
}

TEST(Schedule, Defaults) {
  const auto f = TrainConfig::fusion_defaults();
  EXPECT_EQ(f.places_per_batch, 120u);
  EXPECT_EQ(f.batch_size(), 480u);
  EXPECT_EQ(f.ms.beta, 50.0);
  const auto c = TrainConfig::crossmodal_defaults();
  EXPECT_EQ(c.places_per_batch, 60u);
  EXPECT_EQ(c.ms.alpha, 2.0);
  EXPECT_EQ(c.ms.lambda, 0.5);
}

TEST(Schedule, Validation) {
  TrainConfig c;
  c.places_per_batch = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.images_per_place = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.lr0 = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Sgd, TwoStepsByHand) {
  Param p("w", MatrixD(1, 1, 1.0));
  Param* ps[] = {&p};
  p.grad(0, 0) = 0.5;
  sgd_step(ps, 0.1, 0.9, 0.001);
  EXPECT_NEAR(p.momentum(0, 0), 0.501, 1e-15);
  EXPECT_NEAR(p.value(0, 0), 0.9499, 1e-15);
  sgd_step(ps, 0.1, 0.9, 0.001);
  const double v2 = 0.9 * 0.501 + 0.5 + 0.001 * 0.9499;
  EXPECT_NEAR(p.momentum(0, 0), v2, 1e-15);
  EXPECT_NEAR(p.value(0, 0), 0.9499 - 0.1 * v2, 1e-15);
}

TEST(Sampling, DistinctPlacesWithFullGroups) {
  const auto b = small_bench();
  const auto pool = build_pool(b.data.manifest, Split::kTrain, 4);
  EXPECT_EQ(pool.place_ids.size(), 40u);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto batch = sample_batch(pool, 10, 3, rng);
    ASSERT_EQ(batch.record_ids.size(), 30u);
    std::map<std::string, int> per_place;
    for (const auto& p : batch.place_ids) ++per_place[p];
    EXPECT_EQ(per_place.size(), 10u);
    for (const auto& [p, n] : per_place) EXPECT_EQ(n, 3);
    EXPECT_EQ(std::set<std::string>(batch.record_ids.begin(), batch.record_ids.end()).size(), 30u);
    for (std::size_t i = 0; i < batch.record_ids.size(); ++i) {
      EXPECT_EQ(batch.record_ids[i].substr(1, 5), batch.place_ids[i].substr(1, 5));
    }
  }
}

TEST(Sampling, DeterministicPerSeed) {
  const auto b = small_bench();
  std::mt19937_64 r1(9), r2(9);
  EXPECT_EQ(sample_batch(b.data.manifest, 5, 2, r1).record_ids,
            sample_batch(b.data.manifest, 5, 2, r2).record_ids);
}

TEST(Sampling, InsufficientPlaces) {
  const auto b = small_bench(10, 5);
  const auto pool = build_pool(b.data.manifest, Split::kTrain, 4);
  std::mt19937_64 rng(0);
  try {
    sample_batch(pool, 6, 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientPlaces);
  }
}

TEST(Sampling, SmallPlacesExcluded) {
  const auto b = small_bench(10, 5);
  const auto pool = build_pool(b.data.manifest, Split::kTrain, 5);
  EXPECT_EQ(pool.place_ids.size(), 0u);
  EXPECT_EQ(pool.excluded, 5u);
}

TEST(Gather, UnknownRecordAndMissingTokens) {
  auto b = small_bench(4, 4);
  const std::vector<std::string> ids{"nope"};
  try {
    gather_rows(b.data.vision, ids);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownRecord);
  }
  b.data.text_tokens = TokenSet{};
  const auto train = split_ids(b.data.manifest, Split::kTrain);
  EXPECT_THROW(gather_inputs(b.data, train, true), Error);
  EXPECT_NO_THROW(gather_inputs(b.data, train, false));
}

TEST(TrainFusion, CatTakesNoSteps) {
  const auto b = small_bench();
  FusionConfig c;
  const auto run = train_fusion(TrainConfig::fusion_defaults(), c, b.data);
  EXPECT_EQ(run.history.total_steps, 0u);
  EXPECT_TRUE(run.head.parameter_free());
  EXPECT_EQ(run.head.config().d_v, 16u);
}

TrainConfig quick_config() {
  TrainConfig tc = TrainConfig::fusion_defaults();
  tc.places_per_batch = 8;
  tc.max_epochs = 4;
  tc.lr0 = 0.1;
  return tc;
}

TEST(TrainFusion, PaLossDecreasesAndHistoryComplete) {
  const auto b = small_bench();
  FusionConfig c;
  c.mechanism = Mechanism::kPa;
  c.d_e = 16;
  const auto run = train_fusion(quick_config(), c, b.data);
  ASSERT_EQ(run.history.epochs.size(), 4u);
  EXPECT_LT(run.history.epochs.back().mean_loss, run.history.epochs.front().mean_loss);
  ASSERT_TRUE(run.history.best_epoch.has_value());
  for (const auto& e : run.history.epochs) {
    EXPECT_TRUE(e.val_recall1.has_value());
    EXPECT_GT(e.steps, 0u);
  }
  EXPECT_NEAR(run.history.epochs[2].lr, 0.1 / 3.0, 1e-15);
  const auto csv = history_csv(run.history);
  EXPECT_EQ(csv.rfind("epoch,mean_loss,lr,steps,val_recall1,wall_ms\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(TrainFusion, DeterministicForSeed) {
  const auto b = small_bench();
  FusionConfig c;
  c.mechanism = Mechanism::kAds;
  c.use_llp = true;
  auto tc = quick_config();
  tc.max_epochs = 2;
  const auto a = train_fusion(tc, c, b.data);
  const auto again = train_fusion(tc, c, b.data);
  EXPECT_EQ(a.head.to_bundle().tensors, again.head.to_bundle().tensors);
}

TEST(TrainFusion, DivergenceReportsNanLoss) {
  const auto b = small_bench();
  FusionConfig c;
  c.mechanism = Mechanism::kMlp;
  c.d_e = 8;
  auto tc = quick_config();
  tc.lr0 = 1e300;
  try {
    train_fusion(tc, c, b.data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNanLoss);
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}

TEST(EvaluateFusion, CatBeatsNothingAndNamesMechanism) {
  const auto b = small_bench();
  FusionConfig c;
  const auto run = train_fusion(TrainConfig::fusion_defaults(), c, b.data);
  const auto r = evaluate_fusion(run.head, b.data);
  EXPECT_EQ(r.mechanism, "cat");
  EXPECT_EQ(r.query_count, 20u);
  EXPECT_EQ(r.dim, 28u);
  EXPECT_GT(r.at(1), 0.05);
}

EncoderConfig tiny_encoder(std::size_t in) {
  EncoderConfig e;
  e.input_dim = in;
  e.model_dim = 8;
  e.heads = 2;
  e.ff_dim = 8;
  e.blocks = 1;
  e.output_dim = 8;
  e.max_seq_len = 8;
  return e;
}

TEST(TrainCrossModal, OnlyAdaptersMove) {
  SynthConfig sc;
  sc.n_places = 30;
  sc.train_places = 20;
  sc.d_v = sc.d_t = sc.token_dim = 8;
  sc.latent_dim = 4;
  sc.tokens_per_text = 2;
  sc.patches_per_image = 2;
  const auto b = gen_synthetic(sc);
  auto model = make_crossmodal_model(tiny_encoder(8), tiny_encoder(8),
                                     LoraSpec{LoraTarget::kQkv, 2, 1.0}, 1);
  const auto th = model.text.frozen_hash(), vh = model.vision.frozen_hash();
  TrainConfig tc = TrainConfig::crossmodal_defaults();
  tc.places_per_batch = 6;
  tc.max_epochs = 2;
  tc.lr0 = 0.5;
  const auto run = train_crossmodal(tc, std::move(model), b.data);
  EXPECT_EQ(run.model.text.frozen_hash(), th);
  EXPECT_EQ(run.model.vision.frozen_hash(), vh);
  double moved = 0.0;
  for (auto* p : const_cast<ToyEncoder&>(run.model.text).trainable()) {
    if (p->name.ends_with(".B")) {
      for (double v : p->value.data()) moved += std::abs(v);
    }
  }
  EXPECT_GT(moved, 0.0);
  const auto r = evaluate_crossmodal(run.model, b.data);
  EXPECT_EQ(r.mechanism, "text->image");
  EXPECT_EQ(r.query_count, 10u);
}

TEST(CrossLoss, ParseRoundTrip) {
  EXPECT_EQ(parse_cross_loss("ms"), CrossLoss::kMs);
  EXPECT_EQ(parse_cross_loss(to_string(CrossLoss::kContrastive)), CrossLoss::kContrastive);
  EXPECT_THROW(parse_cross_loss("triplet"), Error);
}

}  // namespace
}  // namespace lavpr
