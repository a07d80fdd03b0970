#pragma once

// Batch sampling, SGD with a step schedule, and the two training loops:
// fusion heads over frozen descriptors, and LoRA alignment of two toy
// encoders (text tokens -> image patches).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lavpr/encoder.hpp"
#include "lavpr/fusion.hpp"
#include "lavpr/losses.hpp"
#include "lavpr/retrieval.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {

enum class CrossLoss { kMs, kContrastive };

std::string_view to_string(CrossLoss l);
CrossLoss parse_cross_loss(std::string_view s);

struct TrainConfig {
  std::size_t places_per_batch = 120;
  std::size_t images_per_place = 4;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.001;
  double lr_decay_factor = 3.0;
  std::size_t decay_every_epochs = 2;
  std::size_t max_epochs = 10;
  // 0 derives the count from the pool: floor(places / places_per_batch), at least 1.
  std::size_t batches_per_epoch = 0;
  // Trailing fraction of training places held out for per-epoch validation
  // and best-epoch selection. 0 keeps the last epoch.
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  MsConfig ms = MsConfig::fusion_defaults();
  CrossLoss cross_loss = CrossLoss::kMs;
  double temperature = kDefaultTemperature;

  std::size_t batch_size() const { return places_per_batch * images_per_place; }
  void validate() const;

  /// Fusion heads: P=120, MS(1, 50, 0).
  static TrainConfig fusion_defaults();
  /// Cross-modal alignment: P=60, MS(2, 40, 0.5).
  static TrainConfig crossmodal_defaults();
};

/// lr0 / factor^floor(epoch / decay_every).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// v = momentum * v + (g + weight_decay * w);  w -= lr * v.
void sgd_step(std::span<Param* const> params, double lr, double momentum, double weight_decay);

// ---------------------------------------------------------------------------
// Sampling

/// Places eligible for P x K batches: those with at least images_per_place
/// vision records in the chosen split.
struct PlacePool {
  std::vector<std::string> place_ids;
  std::vector<std::vector<std::string>> members;  // vision record ids
  std::size_t excluded = 0;                       // places dropped as too small
};

/// Restricts to `split` when given. Excluded places are logged once to
/// std::clog.
PlacePool build_pool(const Manifest& manifest, std::optional<Split> split,
                     std::size_t images_per_place);

struct Batch {
  std::vector<std::string> record_ids;
  std::vector<std::string> place_ids;  // parallel to record_ids
};

/// P distinct places, images_per_place records each, drawn without
/// replacement. Throws kInsufficientPlaces when the pool is too small.
Batch sample_batch(const PlacePool& pool, std::size_t places, std::size_t images_per_place,
                   std::mt19937_64& rng);
Batch sample_batch(const Manifest& manifest, std::size_t places, std::size_t images_per_place,
                   std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// History

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  std::size_t steps = 0;
  std::optional<double> val_recall1;
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::optional<std::size_t> best_epoch;
  std::size_t total_steps = 0;
};

std::string history_csv(const TrainHistory& history);

// ---------------------------------------------------------------------------
// Evaluation helpers shared by training, the CLI and the acceptance suite.

/// Unit-norm double rows for the given record ids (looked up by id).
MatrixD gather_rows(const DescriptorSet& set, std::span<const std::string> ids);
std::vector<MatrixD> gather_tokens(const TokenSet& set, std::span<const std::string> ids);
FusionInputs gather_inputs(const Dataset& data, std::span<const std::string> ids, bool with_tokens);

/// Vision record ids of a split, in manifest order.
std::vector<std::string> split_ids(const Manifest& manifest, Split split);

/// Query split against database split with a single modality.
RecallReport evaluate_modality(const Dataset& data, Modality modality,
                               std::span<const std::size_t> ks = kDefaultKs);
/// Query split against database split through a fusion head (joint scoring
/// for ADS).
RecallReport evaluate_fusion(const FusionHead& head, const Dataset& data,
                             std::span<const std::size_t> ks = kDefaultKs);

/// Two-stage retrieval against single-stage joint scoring on the query and
/// database splits. The joint score is the mean of the vision and text
/// cosines over the whole database. The sequential pipeline shortlists the
/// top `top_n` rows by the `first` modality and reorders them by the other.
struct RerankComparison {
  RecallReport joint;
  RecallReport sequential;
  std::size_t shortlist_misses = 0;  // queries with no positive in the shortlist
  std::size_t query_count = 0;
};

RerankComparison compare_joint_sequential(const Dataset& data, Modality first,
                                          std::size_t top_n,
                                          std::span<const std::size_t> ks = kDefaultKs);

// ---------------------------------------------------------------------------
// Fusion training

struct FusionRun {
  FusionHead head;
  TrainHistory history;
};

/// Trains on the train split of `data`. CAT returns immediately with zero
/// optimizer steps. Throws kNanLoss (with lr and batch id) on a non-finite
/// loss.
FusionRun train_fusion(const TrainConfig& cfg, const FusionConfig& fusion, const Dataset& data);

// ---------------------------------------------------------------------------
// Cross-modal LoRA alignment

struct CrossModalModel {
  ToyEncoder text;    // consumes text token sequences
  ToyEncoder vision;  // consumes image patch sequences
};

CrossModalModel make_crossmodal_model(const EncoderConfig& text_cfg,
                                      const EncoderConfig& vision_cfg, const LoraSpec& lora,
                                      std::uint64_t seed);

/// Text query split against the image database split.
RecallReport evaluate_crossmodal(const CrossModalModel& model, const Dataset& data,
                                 std::span<const std::size_t> ks = kDefaultKs);

struct CrossModalRun {
  CrossModalModel model;
  TrainHistory history;
};

/// Loss and adapter gradients for one batch: text anchors x image references.
/// MS averages the text->image and image->text directions; contrastive is
/// symmetric InfoNCE with the paired record as the positive.
double crossmodal_loss_and_grad(CrossModalModel& model, const Dataset& data, const Batch& batch,
                                const TrainConfig& cfg);

/// Only adapter parameters move. Validation recall is text->image Recall@1
/// on the held-out places.
CrossModalRun train_crossmodal(const TrainConfig& cfg, CrossModalModel model,
                               const Dataset& data);

}  // namespace lavpr
