#include "lavpr/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_map>

namespace lavpr {

std::string_view to_string(CrossLoss l) { return l == CrossLoss::kMs ? "ms" : "contrastive"; }

CrossLoss parse_cross_loss(std::string_view s) {
  if (s == "ms") return CrossLoss::kMs;
  if (s == "contrastive") return CrossLoss::kContrastive;
  throw Error(ErrorCode::kInvalidArgument, "unknown loss '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (places_per_batch == 0 || images_per_place == 0 || decay_every_epochs == 0 ||
      max_epochs == 0) {
    throw Error(ErrorCode::kInvalidArgument, "train config: counts must be positive");
  }
  if (!(lr0 > 0.0) || !(lr_decay_factor > 0.0) || momentum < 0.0 || momentum >= 1.0 ||
      weight_decay < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "train config: invalid optimizer settings");
  }
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "train config: val_fraction must be in [0, 1)");
  }
  if (!(temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train config: temperature must be positive");
  }
  ms.validate();
}

TrainConfig TrainConfig::fusion_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::crossmodal_defaults() {
  TrainConfig cfg;
  cfg.places_per_batch = 60;
  cfg.ms = MsConfig::crossmodal_defaults();
  return cfg;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  const auto steps = static_cast<double>(epoch / cfg.decay_every_epochs);
  return cfg.lr0 / std::pow(cfg.lr_decay_factor, steps);
}

void sgd_step(std::span<Param* const> params, double lr, double momentum, double weight_decay) {
  for (Param* p : params) {
    auto w = p->value.data();
    auto g = p->grad.data();
    auto v = p->momentum.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

// ---------------------------------------------------------------------------

PlacePool build_pool(const Manifest& manifest, std::optional<Split> split,
                     std::size_t images_per_place) {
  PlacePool pool;
  for (const auto& place : manifest.places) {
    std::vector<std::string> members;
    for (const auto& id : place.vision) {
      auto it = place.splits.find(id);
      if (!split || (it != place.splits.end() && it->second == *split)) members.push_back(id);
    }
    if (members.empty()) continue;
    if (members.size() < images_per_place) {
      ++pool.excluded;
      continue;
    }
    pool.place_ids.push_back(place.place_id);
    pool.members.push_back(std::move(members));
  }
  if (pool.excluded > 0) {
    std::clog << "sampler: excluded " << pool.excluded << " place(s) with fewer than "
              << images_per_place << " images\n";
  }
  return pool;
}

Batch sample_batch(const PlacePool& pool, std::size_t places, std::size_t images_per_place,
                   std::mt19937_64& rng) {
  if (places == 0 || images_per_place == 0) {
    throw Error(ErrorCode::kInvalidArgument, "batch shape must be positive");
  }
  if (pool.place_ids.size() < places) {
    throw Error(ErrorCode::kInsufficientPlaces,
                "need " + std::to_string(places) + " places with >= " +
                    std::to_string(images_per_place) + " images, have " +
                    std::to_string(pool.place_ids.size()));
  }
  std::vector<std::size_t> order(pool.place_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Partial Fisher-Yates: the first `places` slots are a uniform sample.
  for (std::size_t i = 0; i < places; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  Batch b;
  b.record_ids.reserve(places * images_per_place);
  for (std::size_t i = 0; i < places; ++i) {
    const auto& members = pool.members[order[i]];
    if (members.size() < images_per_place) {
      throw Error(ErrorCode::kInsufficientPlaces, "place below images_per_place in pool");
    }
    std::vector<std::size_t> idx(members.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    for (std::size_t j = 0; j < images_per_place; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, idx.size() - 1);
      std::swap(idx[j], idx[pick(rng)]);
      b.record_ids.push_back(members[idx[j]]);
      b.place_ids.push_back(pool.place_ids[order[i]]);
    }
  }
  return b;
}

Batch sample_batch(const Manifest& manifest, std::size_t places, std::size_t images_per_place,
                   std::mt19937_64& rng) {
  return sample_batch(build_pool(manifest, std::nullopt, images_per_place), places,
                      images_per_place, rng);
}

// ---------------------------------------------------------------------------

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class Set>
std::unordered_map<std::string_view, std::size_t> id_lookup(const Set& set) {
  std::unordered_map<std::string_view, std::size_t> out;
  out.reserve(set.records.size());
  for (std::size_t i = 0; i < set.records.size(); ++i) out.emplace(set.records[i].record_id, i);
  return out;
}

std::size_t lookup(const std::unordered_map<std::string_view, std::size_t>& ids,
                   const std::string& id, std::string_view what) {
  auto it = ids.find(id);
  if (it == ids.end()) {
    throw Error(ErrorCode::kUnknownRecord, std::string(what) + ": unknown record '" + id + "'");
  }
  return it->second;
}

std::vector<RecordMeta> metas(const DescriptorSet& set, std::span<const std::string> ids) {
  const auto lut = id_lookup(set);
  std::vector<RecordMeta> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(set.records[lookup(lut, id, "descriptors")]);
  return out;
}

RankedIds rank_all(const Index& index, const std::vector<Ranking>& rankings,
                   std::span<const std::string> query_ids) {
  RankedIds out;
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    out[query_ids[i]] = ranked_ids(index, rankings[i]);
  }
  return out;
}

std::size_t max_k(std::span<const std::size_t> ks) {
  return ks.empty() ? 1 : *std::max_element(ks.begin(), ks.end());
}

// Copy of `data` whose manifest keeps only `places`, re-split so that the
// first vision record of each place is a query and the rest database.
Dataset holdout_view(const Dataset& data, const std::vector<std::string>& places) {
  Dataset view;
  view.vision = data.vision;
  view.text = data.text;
  view.text_tokens = data.text_tokens;
  view.vision_patches = data.vision_patches;
  for (const auto& place : data.manifest.places) {
    if (std::find(places.begin(), places.end(), place.place_id) == places.end()) continue;
    PlaceEntry e = place;
    e.positives.clear();
    for (std::size_t i = 0; i < e.vision.size(); ++i) {
      e.splits[e.vision[i]] = i == 0 ? Split::kQuery : Split::kDatabase;
    }
    for (const auto& id : e.text) {
      if (!e.splits.count(id)) e.splits[id] = Split::kDatabase;
    }
    view.manifest.places.push_back(std::move(e));
  }
  return view;
}

// Training pool and validation places drawn from the train split.
struct TrainSplit {
  PlacePool pool;
  std::vector<std::string> val_places;
};

TrainSplit split_training(const TrainConfig& cfg, const Manifest& manifest) {
  PlacePool all = build_pool(manifest, Split::kTrain, cfg.images_per_place);
  std::size_t n_val = 0;
  if (cfg.val_fraction > 0.0 && all.place_ids.size() >= 2) {
    n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.val_fraction * all.place_ids.size())));
    n_val = std::min(n_val, all.place_ids.size() - 1);
  }
  TrainSplit out;
  const std::size_t n_train = all.place_ids.size() - n_val;
  for (std::size_t i = 0; i < all.place_ids.size(); ++i) {
    if (i < n_train) {
      out.pool.place_ids.push_back(all.place_ids[i]);
      out.pool.members.push_back(all.members[i]);
    } else {
      out.val_places.push_back(all.place_ids[i]);
    }
  }
  out.pool.excluded = all.excluded;
  if (out.pool.place_ids.size() < cfg.places_per_batch) {
    throw Error(ErrorCode::kInsufficientPlaces,
                "training pool has " + std::to_string(out.pool.place_ids.size()) +
                    " places, batch needs " + std::to_string(cfg.places_per_batch));
  }
  return out;
}

std::size_t batches_per_epoch(const TrainConfig& cfg, const PlacePool& pool) {
  if (cfg.batches_per_epoch) return cfg.batches_per_epoch;
  return std::max<std::size_t>(1, pool.place_ids.size() / cfg.places_per_batch);
}

// Evaluates one batch loss; a non-finite loss, or a non-finite value hit on
// the way (a diverged head), is reported with its position in the schedule.
template <class F>
double guarded_loss(F&& compute, std::size_t epoch, std::size_t batch, double lr) {
  auto fail = [&] {
    return Error(ErrorCode::kNanLoss, "non-finite loss at epoch " + std::to_string(epoch) +
                                          " batch " + std::to_string(batch) +
                                          " (lr=" + shortest(lr) + ")");
  };
  double loss = 0.0;
  try {
    loss = compute();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFinite) throw;
    throw fail();
  }
  if (!std::isfinite(loss)) throw fail();
  return loss;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,mean_loss,lr,steps,val_recall1,wall_ms\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ',' << shortest(e.mean_loss) << ',' << shortest(e.lr) << ',' << e.steps
        << ',' << (e.val_recall1 ? shortest(*e.val_recall1) : std::string()) << ','
        << shortest(std::round(e.wall_ms * 1000.0) / 1000.0) << '\n';
  }
  return out.str();
}

MatrixD gather_rows(const DescriptorSet& set, std::span<const std::string> ids) {
  const auto lut = id_lookup(set);
  MatrixD out(ids.size(), set.dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = set.matrix.row(lookup(lut, ids[i], "descriptors"));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  l2_normalize_rows(out);
  return out;
}

std::vector<MatrixD> gather_tokens(const TokenSet& set, std::span<const std::string> ids) {
  const auto lut = id_lookup(set);
  std::vector<MatrixD> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(to_double(set.sequences[lookup(lut, id, "tokens")]));
  return out;
}

FusionInputs gather_inputs(const Dataset& data, std::span<const std::string> ids,
                           bool with_tokens) {
  FusionInputs in;
  in.vision = gather_rows(data.vision, ids);
  in.text = gather_rows(data.text, ids);
  if (with_tokens) {
    if (data.text_tokens.records.empty()) {
      throw Error(ErrorCode::kMissingModality, "LLP needs text token sequences");
    }
    in.tokens = gather_tokens(data.text_tokens, ids);
  }
  return in;
}

std::vector<std::string> split_ids(const Manifest& manifest, Split split) {
  std::vector<std::string> out;
  for (const auto& place : manifest.places) {
    for (const auto& id : place.vision) {
      auto it = place.splits.find(id);
      if (it != place.splits.end() && it->second == split) out.push_back(id);
    }
  }
  return out;
}

RecallReport evaluate_modality(const Dataset& data, Modality modality,
                               std::span<const std::size_t> ks) {
  const auto& set = modality == Modality::kVision ? data.vision : data.text;
  const auto queries = split_ids(data.manifest, Split::kQuery);
  const auto db = split_ids(data.manifest, Split::kDatabase);
  const Index index = build_index(gather_rows(set, db), metas(data.vision, db));
  const auto rankings = search_batch(index, gather_rows(set, queries), max_k(ks));
  auto rep = recall_at_k(rank_all(index, rankings, queries), ground_truth(data.manifest), ks);
  rep.mechanism = std::string(to_string(modality));
  rep.dim = set.dim;
  return rep;
}

RerankComparison compare_joint_sequential(const Dataset& data, Modality first,
                                          std::size_t top_n, std::span<const std::size_t> ks) {
  if (top_n == 0) throw Error(ErrorCode::kInvalidArgument, "rerank: top_n must be positive");
  const auto queries = split_ids(data.manifest, Split::kQuery);
  const auto db = split_ids(data.manifest, Split::kDatabase);
  const auto records = metas(data.vision, db);
  const Index iv = build_index(gather_rows(data.vision, db), records);
  const Index it = build_index(gather_rows(data.text, db), records);
  const MatrixD qv = gather_rows(data.vision, queries);
  const MatrixD qt = gather_rows(data.text, queries);
  const GroundTruth truth = ground_truth(data.manifest);
  const std::size_t depth = max_k(ks);

  RerankComparison out;
  out.query_count = queries.size();
  RankedIds joint, sequential;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto sv = score_all(iv, qv.row(i));
    const auto st = score_all(it, qt.row(i));
    std::vector<double> mean(sv.size());
    for (std::size_t r = 0; r < mean.size(); ++r) mean[r] = 0.5 * (sv[r] + st[r]);
    joint[queries[i]] = ranked_ids(iv, rank_by_scores(mean, depth));

    const bool vision_first = first == Modality::kVision;
    const Ranking shortlist = rank_by_scores(vision_first ? sv : st, top_n);
    const Ranking reranked = sequential_rerank(shortlist, vision_first ? st : sv, top_n);
    auto ids = ranked_ids(iv, reranked);
    const auto& pos = truth.at(queries[i]);
    if (std::none_of(ids.begin(), ids.end(), [&](const auto& id) { return pos.count(id) > 0; })) {
      ++out.shortlist_misses;
    }
    sequential[queries[i]] = std::move(ids);
  }
  out.joint = recall_at_k(joint, truth, ks);
  out.joint.mechanism = "joint";
  out.joint.dim = data.vision.dim + data.text.dim;
  out.sequential = recall_at_k(sequential, truth, ks);
  out.sequential.mechanism =
      first == Modality::kVision ? "sequential vision->text" : "sequential text->vision";
  out.sequential.dim = out.joint.dim;
  return out;
}

RecallReport evaluate_fusion(const FusionHead& head, const Dataset& data,
                             std::span<const std::size_t> ks) {
  const bool llp = head.config().use_llp;
  const auto queries = split_ids(data.manifest, Split::kQuery);
  const auto db = split_ids(data.manifest, Split::kDatabase);
  const FusedBatch fq = head.forward(gather_inputs(data, queries, llp));
  const FusedBatch fd = head.forward(gather_inputs(data, db, llp));
  std::vector<Ranking> rankings;
  Index index;
  if (head.config().mechanism == Mechanism::kAds) {
    index = build_joint_index(fd, metas(data.vision, db));
    rankings = joint_search_batch(index, fq, max_k(ks));
  } else {
    index = build_index(fd.embedding, metas(data.vision, db));
    rankings = search_batch(index, fq.embedding, max_k(ks));
  }
  auto rep = recall_at_k(rank_all(index, rankings, queries), ground_truth(data.manifest), ks);
  rep.mechanism = std::string(to_string(head.config().mechanism)) + (llp ? "+llp" : "");
  rep.dim = head.config().output_dim();
  return rep;
}

FusionRun train_fusion(const TrainConfig& cfg, const FusionConfig& fusion, const Dataset& data) {
  cfg.validate();
  FusionConfig fc = fusion;
  if (fc.d_v == 0) fc.d_v = data.vision.dim;
  if (fc.d_t == 0) fc.d_t = fc.use_llp ? data.text_tokens.token_dim : data.text.dim;
  FusionRun run{FusionHead(fc, cfg.seed), {}};
  if (run.head.parameter_free()) return run;

  const TrainSplit split = split_training(cfg, data.manifest);
  const Dataset val = holdout_view(data, split.val_places);
  const std::size_t n_batches = batches_per_epoch(cfg, split.pool);
  std::mt19937_64 rng(cfg.seed ^ 0x5A3C96E1F00DBA11ull);
  std::optional<FusionHead> best;
  double best_val = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const Batch batch = sample_batch(split.pool, cfg.places_per_batch, cfg.images_per_place, rng);
      const FusionInputs in = gather_inputs(data, batch.record_ids, fc.use_llp);
      const double loss = guarded_loss(
          [&] { return run.head.loss_and_grad(in, batch.place_ids, cfg.ms); }, epoch,
          run.history.total_steps, lr);
      sgd_step(run.head.params(), lr, cfg.momentum, cfg.weight_decay);
      loss_sum += loss;
      ++run.history.total_steps;
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(n_batches), lr, n_batches, {}, 0.0};
    if (!split.val_places.empty()) {
      const std::size_t k1[] = {1};
      stats.val_recall1 = evaluate_fusion(run.head, val, k1).recall[0];
      if (*stats.val_recall1 > best_val) {
        best_val = *stats.val_recall1;
        best = run.head;
        run.history.best_epoch = epoch;
      }
    }
    stats.wall_ms = elapsed_ms(start);
    run.history.epochs.push_back(stats);
  }
  if (best) run.head = std::move(*best);
  return run;
}

// ---------------------------------------------------------------------------

CrossModalModel make_crossmodal_model(const EncoderConfig& text_cfg,
                                      const EncoderConfig& vision_cfg, const LoraSpec& lora,
                                      std::uint64_t seed) {
  CrossModalModel m{ToyEncoder(text_cfg, seed * 4 + 1), ToyEncoder(vision_cfg, seed * 4 + 2)};
  apply_lora(m.text, lora, seed * 4 + 3);
  apply_lora(m.vision, lora, seed * 4 + 4);
  return m;
}

namespace {

void require_sequences(const Dataset& data) {
  if (data.text_tokens.records.empty() || data.vision_patches.records.empty()) {
    throw Error(ErrorCode::kMissingModality,
                "cross-modal training needs text tokens and image patches");
  }
}

}  // namespace

RecallReport evaluate_crossmodal(const CrossModalModel& model, const Dataset& data,
                                 std::span<const std::size_t> ks) {
  require_sequences(data);
  const auto queries = split_ids(data.manifest, Split::kQuery);
  const auto db = split_ids(data.manifest, Split::kDatabase);
  const MatrixD q = model.text.encode_batch(gather_tokens(data.text_tokens, queries));
  const MatrixD d = model.vision.encode_batch(gather_tokens(data.vision_patches, db));
  const Index index = build_index(d, metas(data.vision, db));
  const auto rankings = search_batch(index, q, max_k(ks));
  auto rep = recall_at_k(rank_all(index, rankings, queries), ground_truth(data.manifest), ks);
  rep.mechanism = "text->image";
  rep.dim = d.cols();
  return rep;
}

double crossmodal_loss_and_grad(CrossModalModel& model, const Dataset& data, const Batch& batch,
                                const TrainConfig& cfg) {
  require_sequences(data);
  model.text.zero_grad();
  model.vision.zero_grad();
  const auto tokens = gather_tokens(data.text_tokens, batch.record_ids);
  const auto patches = gather_tokens(data.vision_patches, batch.record_ids);
  const std::size_t n = batch.record_ids.size();

  std::vector<ToyEncoder::Trace> tt, vt;
  tt.reserve(n);
  vt.reserve(n);
  MatrixD t(n, model.text.config().output_dim);
  MatrixD v(n, model.vision.config().output_dim);
  if (t.cols() != v.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "text and image encoders disagree on output dim");
  }
  for (std::size_t i = 0; i < n; ++i) {
    tt.push_back(model.text.forward(tokens[i]));
    vt.push_back(model.vision.forward(patches[i]));
    std::copy(tt.back().out.value.begin(), tt.back().out.value.end(), t.row(i).begin());
    std::copy(vt.back().out.value.begin(), vt.back().out.value.end(), v.row(i).begin());
  }
  const MatrixD s = matmul_nt(t, v);  // text anchors x image references

  double loss = 0.0;
  MatrixD g;
  if (cfg.cross_loss == CrossLoss::kMs) {
    const BatchMasks masks = build_cross_masks(batch.place_ids, batch.place_ids);
    const LossResult fwd = ms_loss(s, masks, cfg.ms);
    const LossResult rev = ms_loss(transpose(s), masks, cfg.ms);
    loss = 0.5 * (fwd.loss + rev.loss);
    g = fwd.grad;
    add_inplace(g, transpose(rev.grad));
    scale_inplace(g, 0.5);
  } else {
    std::vector<std::size_t> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = i;
    LossResult r = contrastive_loss(s, diag, cfg.temperature);
    loss = r.loss;
    g = std::move(r.grad);
  }

  const MatrixD dt = matmul(g, v);
  const MatrixD dv = matmul_tn(g, t);
  for (std::size_t i = 0; i < n; ++i) {
    model.text.backward(tt[i], dt.row(i));
    model.vision.backward(vt[i], dv.row(i));
  }
  return loss;
}

CrossModalRun train_crossmodal(const TrainConfig& cfg, CrossModalModel model,
                               const Dataset& data) {
  cfg.validate();
  require_sequences(data);
  CrossModalRun run{std::move(model), {}};
  const TrainSplit split = split_training(cfg, data.manifest);
  const Dataset val = holdout_view(data, split.val_places);
  const std::size_t n_batches = batches_per_epoch(cfg, split.pool);
  std::mt19937_64 rng(cfg.seed ^ 0x2C1B3C6D4E5F6071ull);
  std::optional<CrossModalModel> best;
  double best_val = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const Batch batch = sample_batch(split.pool, cfg.places_per_batch, cfg.images_per_place, rng);
      const double loss = guarded_loss(
          [&] { return crossmodal_loss_and_grad(run.model, data, batch, cfg); }, epoch,
          run.history.total_steps, lr);
      std::vector<Param*> params = run.model.text.trainable();
      const auto more = run.model.vision.trainable();
      params.insert(params.end(), more.begin(), more.end());
      sgd_step(params, lr, cfg.momentum, cfg.weight_decay);
      loss_sum += loss;
      ++run.history.total_steps;
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(n_batches), lr, n_batches, {}, 0.0};
    if (!split.val_places.empty()) {
      const std::size_t k1[] = {1};
      stats.val_recall1 = evaluate_crossmodal(run.model, val, k1).recall[0];
      if (*stats.val_recall1 > best_val) {
        best_val = *stats.val_recall1;
        best = run.model;
        run.history.best_epoch = epoch;
      }
    }
    stats.wall_ms = elapsed_ms(start);
    run.history.epochs.push_back(stats);
  }
  if (best) run.model = std::move(*best);
  return run;
}

}  // namespace lavpr
