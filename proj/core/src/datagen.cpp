#include "lavpr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>

namespace lavpr {

namespace {

enum StreamTag : std::uint64_t {
  kModalityMatrix = 0,
  kLatent = 1,
  kVisionRecord = 2,
  kTextRecord = 3,
  kTextTokens = 4,
  kVisionPatches = 5,
  kDegradeSelect = 6,
  kDistractorVocab = 7,
  kDegradeNoise = 8,
};

constexpr std::size_t kDistractorVocabSize = 4;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> g(n);
  for (auto& v : g) v = nd(rng);
  return g;
}

// normalize(base + sigma * g / sqrt(d))
std::vector<double> noisy_unit(std::span<const double> base, double sigma, std::mt19937_64& rng) {
  const std::size_t d = base.size();
  std::vector<double> v(base.begin(), base.end());
  if (sigma > 0.0) {
    const auto g = gaussian(rng, d);
    const double s = sigma / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) v[i] += s * g[i];
  }
  return l2_normalize(v).value;
}

std::string place_name(std::size_t p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%05zu", p);
  return buf;
}

std::string record_name(std::size_t p, std::size_t k) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "r%05zu_%zu", p, k);
  return buf;
}

MatrixD random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  MatrixD m(rows, cols);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : m.data()) v = nd(rng);
  return m;
}

void copy_row(std::span<const double> src, std::span<float> dst) {
  std::transform(src.begin(), src.end(), dst.begin(),
                 [](double v) { return static_cast<float>(v); });
}

}  // namespace

std::mt19937_64 derive_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64((tag << 48) ^ index)));
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidArgument, m); };
  if (n_places == 0) fail("n_places must be positive");
  if (images_per_place == 0) fail("images_per_place must be positive");
  if (train_places > n_places) fail("train_places exceeds n_places");
  if (train_places < n_places && queries_per_place >= images_per_place) {
    fail("evaluation places need at least one database image (queries_per_place < images_per_place)");
  }
  if (d_v == 0 || d_t == 0 || latent_dim == 0) fail("dimensions must be positive");
  if (tokens_per_text > 0 && token_dim != d_t) fail("token_dim must equal d_t");
  if (distractor_tokens > tokens_per_text) fail("distractor_tokens exceeds tokens_per_text");
  if (!(sigma_v >= 0.0) || !(sigma_t >= 0.0) || !(sigma_degrade >= 0.0)) {
    fail("noise scales must be non-negative");
  }
  if (degrade_fraction > 0.0 && sigma_degrade < sigma_v) fail("sigma_degrade must be >= sigma_v");
  if (!(degrade_fraction >= 0.0 && degrade_fraction <= 1.0)) {
    fail("degrade_fraction must lie in [0, 1]");
  }
}

SynthBenchmark gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthBenchmark out;

  auto mrng = derive_stream(cfg.seed, kModalityMatrix, 0);
  const MatrixD mv = random_matrix(mrng, cfg.d_v, cfg.latent_dim);
  const MatrixD mt = random_matrix(mrng, cfg.d_t, cfg.latent_dim);

  out.vision_prototypes = MatrixD(cfg.n_places, cfg.d_v);
  out.text_prototypes = MatrixD(cfg.n_places, cfg.d_t);
  for (std::size_t p = 0; p < cfg.n_places; ++p) {
    auto rng = derive_stream(cfg.seed, kLatent, p);
    MatrixD u(1, cfg.latent_dim);
    const auto g = gaussian(rng, cfg.latent_dim);
    std::copy(g.begin(), g.end(), u.data().begin());
    const auto pv = l2_normalize(matmul_nt(u, mv).row(0)).value;
    const auto pt = l2_normalize(matmul_nt(u, mt).row(0)).value;
    std::copy(pv.begin(), pv.end(), out.vision_prototypes.row(p).begin());
    std::copy(pt.begin(), pt.end(), out.text_prototypes.row(p).begin());
  }

  MatrixD vocab(kDistractorVocabSize, cfg.d_t);
  {
    auto rng = derive_stream(cfg.seed, kDistractorVocab, 0);
    for (std::size_t i = 0; i < kDistractorVocabSize; ++i) {
      const auto g = gaussian(rng, cfg.d_t);
      const auto u = l2_normalize(g).value;
      std::copy(u.begin(), u.end(), vocab.row(i).begin());
    }
  }

  // Records in place-major order; pick degraded queries up front.
  const std::size_t n = cfg.n_places * cfg.images_per_place;
  std::vector<RecordMeta> metas;
  metas.reserve(n);
  std::vector<std::size_t> queries;
  for (std::size_t p = 0; p < cfg.n_places; ++p) {
    PlaceEntry entry;
    entry.place_id = place_name(p);
    for (std::size_t k = 0; k < cfg.images_per_place; ++k) {
      Split split = Split::kTrain;
      if (p >= cfg.train_places) split = k < cfg.queries_per_place ? Split::kQuery : Split::kDatabase;
      const auto id = record_name(p, k);
      if (split == Split::kQuery) queries.push_back(metas.size());
      metas.push_back({id, entry.place_id, Modality::kVision, split});
      entry.vision.push_back(id);
      entry.text.push_back(id);
      entry.splits[id] = split;
    }
    out.data.manifest.places.push_back(std::move(entry));
  }
  std::vector<bool> degraded(n, false);
  {
    auto rng = derive_stream(cfg.seed, kDegradeSelect, 0);
    std::shuffle(queries.begin(), queries.end(), rng);
    const auto count = static_cast<std::size_t>(
        std::llround(cfg.degrade_fraction * static_cast<double>(queries.size())));
    for (std::size_t i = 0; i < count; ++i) degraded[queries[i]] = true;
  }

  auto& vision = out.data.vision;
  auto& text = out.data.text;
  vision.dim = static_cast<std::uint32_t>(cfg.d_v);
  text.dim = static_cast<std::uint32_t>(cfg.d_t);
  vision.matrix = Matrix(n, cfg.d_v);
  text.matrix = Matrix(n, cfg.d_t);
  if (cfg.tokens_per_text > 0) out.data.text_tokens.token_dim = static_cast<std::uint32_t>(cfg.d_t);
  if (cfg.patches_per_image > 0) {
    out.data.vision_patches.token_dim = static_cast<std::uint32_t>(cfg.d_v);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = i / cfg.images_per_place;
    const double sv = degraded[i] ? cfg.sigma_degrade : cfg.sigma_v;
    if (degraded[i]) out.degraded_ids.push_back(metas[i].record_id);

    auto vrng = derive_stream(cfg.seed, kVisionRecord, i);
    const auto zv = noisy_unit(out.vision_prototypes.row(p), sv, vrng);
    copy_row(zv, vision.matrix.row(i));
    vision.records.push_back(metas[i]);

    auto trng = derive_stream(cfg.seed, kTextRecord, i);
    const auto zt = noisy_unit(out.text_prototypes.row(p), cfg.sigma_t, trng);
    copy_row(zt, text.matrix.row(i));
    RecordMeta tm = metas[i];
    tm.modality = Modality::kText;
    text.records.push_back(tm);

    if (cfg.tokens_per_text > 0) {
      auto krng = derive_stream(cfg.seed, kTextTokens, i);
      Matrix seq(1 + cfg.tokens_per_text, cfg.d_t);
      copy_row(zt, seq.row(0));
      const std::size_t informative = cfg.tokens_per_text - cfg.distractor_tokens;
      for (std::size_t k = 0; k < cfg.tokens_per_text; ++k) {
        std::vector<double> tok;
        if (k < informative) {
          tok = noisy_unit(out.text_prototypes.row(p), cfg.sigma_t, krng);
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, kDistractorVocabSize - 1);
          tok = noisy_unit(vocab.row(pick(krng)), cfg.sigma_t, krng);
        }
        copy_row(tok, seq.row(1 + k));
      }
      out.data.text_tokens.records.push_back(tm);
      out.data.text_tokens.sequences.push_back(std::move(seq));
    }
    if (cfg.patches_per_image > 0) {
      auto prng = derive_stream(cfg.seed, kVisionPatches, i);
      Matrix seq(1 + cfg.patches_per_image, cfg.d_v);
      copy_row(zv, seq.row(0));
      for (std::size_t k = 0; k < cfg.patches_per_image; ++k) {
        copy_row(noisy_unit(out.vision_prototypes.row(p), sv, prng), seq.row(1 + k));
      }
      out.data.vision_patches.records.push_back(metas[i]);
      out.data.vision_patches.sequences.push_back(std::move(seq));
    }
  }
  return out;
}

DescriptorSet degrade(const DescriptorSet& set, std::span<const std::string> record_ids,
                      double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "degrade: sigma must be >= 0");
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < set.records.size(); ++i) index.emplace(set.records[i].record_id, i);
  std::set<std::size_t> rows;
  for (const auto& id : record_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorCode::kUnknownRecord, "degrade: unknown record '" + id + "'");
    rows.insert(it->second);
  }
  DescriptorSet out = set;
  if (sigma == 0.0) return out;
  for (std::size_t r : rows) {
    auto rng = derive_stream(seed, kDegradeNoise, r);
    std::vector<double> base(set.matrix.row(r).begin(), set.matrix.row(r).end());
    copy_row(noisy_unit(base, sigma, rng), out.matrix.row(r));
  }
  return out;
}

}  // namespace lavpr
