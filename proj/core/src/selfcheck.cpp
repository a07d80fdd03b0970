#include "lavpr/selfcheck.hpp"

#include "lavpr/datagen.hpp"
#include "lavpr/trainer.hpp"

namespace lavpr {

namespace {

SynthBenchmark tiny_benchmark(std::uint64_t seed) {
  SynthConfig sc;
  sc.n_places = 8;
  sc.train_places = 8;
  sc.d_v = 6;
  sc.d_t = 5;
  sc.token_dim = 5;
  sc.latent_dim = 4;
  sc.tokens_per_text = 3;
  sc.patches_per_image = 3;
  sc.seed = seed;
  return gen_synthetic(sc);
}

EncoderConfig tiny_encoder(std::size_t input_dim) {
  EncoderConfig e;
  e.input_dim = input_dim;
  e.model_dim = 8;
  e.heads = 2;
  e.ff_dim = 6;
  e.blocks = 2;
  e.output_dim = 4;
  e.max_seq_len = 8;
  return e;
}

}  // namespace

std::vector<GradientCase> gradient_suite(std::uint64_t first_seed, std::size_t seeds,
                                         const GradCheckOptions& options) {
  std::vector<GradientCase> out;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    const auto bench = tiny_benchmark(seed);
    const auto& data = bench.data;
    Batch batch;
    for (const auto& r : data.vision.records) {
      batch.record_ids.push_back(r.record_id);
      batch.place_ids.push_back(r.place_id);
    }
    // A softer beta keeps the negative term away from float saturation.
    MsConfig ms = MsConfig::fusion_defaults();
    ms.beta = 10.0;

    for (auto mech : {Mechanism::kPa, Mechanism::kMlp, Mechanism::kAds}) {
      for (bool llp : {false, true}) {
        FusionConfig fc;
        fc.d_v = data.vision.dim;
        fc.d_t = data.text.dim;
        fc.d_e = 7;
        fc.mechanism = mech;
        fc.use_llp = llp;
        FusionHead head(fc, seed);
        head.randomize(seed + 1000);
        const auto in = gather_inputs(data, batch.record_ids, llp);
        const auto params = head.params();
        GradientCase c;
        c.name = std::string(to_string(mech)) + (llp ? "+llp" : "");
        c.seed = seed;
        c.report = finite_diff_check([&] { return head.loss_and_grad(in, batch.place_ids, ms); },
                                     params, options);
        out.push_back(std::move(c));
      }
    }

    auto model = make_crossmodal_model(tiny_encoder(data.text_tokens.token_dim),
                                       tiny_encoder(data.vision_patches.token_dim),
                                       LoraSpec{LoraTarget::kAllLinear, 2, 1.0}, seed);
    std::vector<Param*> params = model.text.trainable();
    for (auto* p : model.vision.trainable()) params.push_back(p);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto* p : params) {
      for (auto& v : p->value.data()) v += nd(rng);
    }
    for (auto loss : {CrossLoss::kMs, CrossLoss::kContrastive}) {
      TrainConfig tc = TrainConfig::crossmodal_defaults();
      tc.cross_loss = loss;
      GradientCase c;
      c.name = "encoder/" + std::string(to_string(loss));
      c.seed = seed;
      c.report = finite_diff_check(
          [&] { return crossmodal_loss_and_grad(model, data, batch, tc); }, params, options);
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace lavpr
