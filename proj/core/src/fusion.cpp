#include "lavpr/fusion.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

namespace lavpr {

std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::kCat: return "cat";
    case Mechanism::kPa: return "pa";
    case Mechanism::kMlp: return "mlp";
    case Mechanism::kAds: return "ads";
  }
  return "cat";
}

Mechanism parse_mechanism(std::string_view s) {
  if (s == "cat") return Mechanism::kCat;
  if (s == "pa") return Mechanism::kPa;
  if (s == "mlp") return Mechanism::kMlp;
  if (s == "ads") return Mechanism::kAds;
  throw Error(ErrorCode::kInvalidArgument, "unknown fusion mechanism '" + std::string(s) + "'");
}

void FusionConfig::validate() const {
  if (d_v == 0 || d_t == 0) throw Error(ErrorCode::kInvalidArgument, "fusion: input dims must be positive");
  if ((mechanism == Mechanism::kPa || mechanism == Mechanism::kMlp) && d_e == 0) {
    throw Error(ErrorCode::kInvalidArgument, "fusion: d_e must be positive for PA/MLP");
  }
}

std::size_t FusionConfig::hidden_width() const {
  if (hidden != 0) return hidden;
  if (mechanism == Mechanism::kAds) return std::max<std::size_t>(1, (d_v + d_t) / 2);
  return d_v + d_t;
}

std::size_t FusionConfig::output_dim() const {
  switch (mechanism) {
    case Mechanism::kCat: return d_v + d_t;
    case Mechanism::kPa:
    case Mechanism::kMlp: return d_e;
    case Mechanism::kAds: return 0;
  }
  return 0;
}

namespace {

MatrixD row_matrix(std::span<const double> v) {
  MatrixD m(1, v.size());
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

void check_dim(std::span<const double> v, std::size_t expected, const char* what) {
  if (v.size() != expected) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + ": dimension mismatch");
  }
}

Param gaussian_param(std::string name, std::size_t rows, std::size_t cols, double stddev,
                     std::mt19937_64& rng) {
  MatrixD m(rows, cols);
  if (stddev > 0.0) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : m.data()) v = nd(rng);
  }
  return Param(std::move(name), std::move(m));
}

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

// Two-layer perceptron trace shared by MLP and ADS.
struct PerceptronTrace {
  MatrixD input;
  MatrixD pre;
  MatrixD act;
  MatrixD out;
};

PerceptronTrace perceptron(const MatrixD& x, const Param& w1, const Param& b1, const Param& w2,
                           const Param& b2) {
  PerceptronTrace t;
  t.input = x;
  t.pre = affine(x, w1.value, b1.value);
  t.act = t.pre;
  for (auto& v : t.act.data()) v = relu(v);
  t.out = affine(t.act, w2.value, b2.value);
  return t;
}

// Returns dL/dinput.
MatrixD perceptron_backward(const PerceptronTrace& t, const MatrixD& dout, Param& w1, Param& b1,
                            Param& w2, Param& b2) {
  MatrixD dact = affine_backward(t.act, w2.value, dout, &w2.grad, &b2.grad);
  for (std::size_t i = 0; i < dact.size(); ++i) {
    if (!(t.pre.data()[i] > 0.0)) dact.data()[i] = 0.0;
  }
  return affine_backward(t.input, w1.value, dact, &w1.grad, &b1.grad);
}

MatrixD rows_normalized(MatrixD e, std::vector<double>& norms, std::vector<bool>& degenerate) {
  norms = l2_normalize_rows(e, &degenerate);
  return e;
}

MatrixD normalize_rows_backward(const MatrixD& y, const std::vector<double>& norms,
                                const MatrixD& dy) {
  MatrixD dx(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) normalize_backward(y.row(r), norms[r], dy.row(r), dx.row(r));
  return dx;
}

struct LlpTrace {
  std::vector<double> attn;
  std::vector<double> concat;
  std::vector<double> act;
  Normalized out;
};

LlpTrace llp_trace(const MatrixD& tokens, const LlpParams& p) {
  const std::size_t td = p.score_w.value.cols();
  if (tokens.cols() != td) throw Error(ErrorCode::kDimensionMismatch, "llp_pool: token dim mismatch");
  if (tokens.rows() < 2) {
    throw Error(ErrorCode::kNoPoolableTokens, "llp_pool: sequence has only a CLS token");
  }
  const std::size_t m = tokens.rows() - 1;
  LlpTrace t;
  std::vector<double> scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    scores[i] = dot(p.score_w.value.row(0), tokens.row(i + 1)) + p.score_b.value(0, 0);
  }
  t.attn = softmax(scores);
  t.concat.assign(2 * td, 0.0);
  std::copy(tokens.row(0).begin(), tokens.row(0).end(), t.concat.begin());
  for (std::size_t k = 0; k < td; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += t.attn[i] * tokens(i + 1, k);
    t.concat[td + k] = acc;
  }
  t.act.resize(td);
  for (std::size_t k = 0; k < td; ++k) {
    t.act[k] = std::tanh(dot(p.out_w.value.row(k), t.concat) + p.out_b.value(0, k));
  }
  t.out = l2_normalize(t.act);
  return t;
}

void llp_backward(const MatrixD& tokens, const LlpTrace& t, std::span<const double> dz,
                  LlpParams& p) {
  const std::size_t td = p.score_w.value.cols();
  const std::size_t m = tokens.rows() - 1;
  std::vector<double> dy(td);
  normalize_backward(t.out.value, t.out.norm, dz, dy);
  std::vector<double> dc(2 * td, 0.0);
  for (std::size_t k = 0; k < td; ++k) {
    const double dh = dy[k] * (1.0 - t.act[k] * t.act[k]);
    if (dh == 0.0) continue;
    p.out_b.grad(0, k) += dh;
    auto grow = p.out_w.grad.row(k);
    auto wrow = p.out_w.value.row(k);
    for (std::size_t j = 0; j < 2 * td; ++j) {
      grow[j] += dh * t.concat[j];
      dc[j] += dh * wrow[j];
    }
  }
  std::span<const double> dpooled(dc.data() + td, td);
  std::vector<double> da(m);
  double mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    da[i] = dot(dpooled, tokens.row(i + 1));
    mean += t.attn[i] * da[i];
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double ds = t.attn[i] * (da[i] - mean);
    p.score_b.grad(0, 0) += ds;
    auto g = p.score_w.grad.row(0);
    auto tok = tokens.row(i + 1);
    for (std::size_t k = 0; k < td; ++k) g[k] += ds * tok[k];
  }
}

void check_ads_weights(const ModalityWeights& w) {
  if (std::abs(w[0] + w[1] - 1.0) > 1e-5) {
    throw Error(ErrorCode::kInvalidArgument, "ads: modality weights must sum to 1");
  }
}

}  // namespace

Normalized fuse_cat(std::span<const double> z_v, std::span<const double> z_t) {
  std::vector<double> x(z_v.begin(), z_v.end());
  x.insert(x.end(), z_t.begin(), z_t.end());
  return l2_normalize(x);
}

Normalized fuse_pa(std::span<const double> z_v, std::span<const double> z_t, const PaParams& p) {
  check_dim(z_v, p.w_v.value.cols(), "fuse_pa");
  check_dim(z_t, p.w_t.value.cols(), "fuse_pa");
  MatrixD e = affine(row_matrix(z_v), p.w_v.value, p.b_v.value);
  add_inplace(e, affine(row_matrix(z_t), p.w_t.value, p.b_t.value));
  return l2_normalize(e.row(0));
}

Normalized fuse_mlp(std::span<const double> z_v, std::span<const double> z_t, const MlpParams& p) {
  if (z_v.size() + z_t.size() != p.w1.value.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "fuse_mlp: dimension mismatch");
  }
  const auto t = perceptron(hconcat(row_matrix(z_v), row_matrix(z_t)), p.w1, p.b1, p.w2, p.b2);
  return l2_normalize(t.out.row(0));
}

ModalityWeights ads_weights(std::span<const double> z_v, std::span<const double> z_t,
                            const AdsParams& p) {
  if (z_v.size() + z_t.size() != p.w1.value.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "ads_weights: dimension mismatch");
  }
  const auto t = perceptron(hconcat(row_matrix(z_v), row_matrix(z_t)), p.w1, p.b1, p.w2, p.b2);
  const auto w = softmax(t.out.row(0));
  return {w[0], w[1]};
}

double ads_joint_similarity(const ModalityWeights& w_i, const ModalityWeights& w_j, double s_v,
                            double s_t) {
  check_ads_weights(w_i);
  check_ads_weights(w_j);
  const double wv = 0.5 * (w_i[0] + w_j[0]);
  const double wt = 0.5 * (w_i[1] + w_j[1]);
  return wv * s_v + wt * s_t;
}

Normalized llp_pool(const MatrixD& tokens, const LlpParams& p) { return llp_trace(tokens, p).out; }

FusionHead::FusionHead(const FusionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t dv = cfg_.d_v;
  const std::size_t dt = cfg_.d_t;
  const std::size_t h = cfg_.hidden_width();
  switch (cfg_.mechanism) {
    case Mechanism::kCat:
      break;
    case Mechanism::kPa:
      pa_ = PaParams{gaussian_param("pa.w_v", cfg_.d_e, dv, fan_in_std(dv), rng),
                     gaussian_param("pa.b_v", 1, cfg_.d_e, 0.0, rng),
                     gaussian_param("pa.w_t", cfg_.d_e, dt, fan_in_std(dt), rng),
                     gaussian_param("pa.b_t", 1, cfg_.d_e, 0.0, rng)};
      break;
    case Mechanism::kMlp:
      mlp_ = MlpParams{gaussian_param("mlp.w1", h, dv + dt, fan_in_std(dv + dt), rng),
                       gaussian_param("mlp.b1", 1, h, 0.0, rng),
                       gaussian_param("mlp.w2", cfg_.d_e, h, fan_in_std(h), rng),
                       gaussian_param("mlp.b2", 1, cfg_.d_e, 0.0, rng)};
      break;
    case Mechanism::kAds:
      ads_ = AdsParams{gaussian_param("ads.w1", h, dv + dt, fan_in_std(dv + dt), rng),
                       gaussian_param("ads.b1", 1, h, 0.0, rng),
                       gaussian_param("ads.w2", 2, h, 0.0, rng),
                       gaussian_param("ads.b2", 1, 2, 0.0, rng)};
      break;
  }
  if (cfg_.use_llp) {
    llp_ = LlpParams{gaussian_param("llp.score_w", 1, dt, fan_in_std(dt), rng),
                     gaussian_param("llp.score_b", 1, 1, 0.0, rng),
                     gaussian_param("llp.out_w", dt, 2 * dt, fan_in_std(2 * dt), rng),
                     gaussian_param("llp.out_b", 1, dt, 0.0, rng)};
  }
}

std::vector<Param*> FusionHead::params() {
  std::vector<Param*> out;
  if (pa_) out.insert(out.end(), {&pa_->w_v, &pa_->b_v, &pa_->w_t, &pa_->b_t});
  if (mlp_) out.insert(out.end(), {&mlp_->w1, &mlp_->b1, &mlp_->w2, &mlp_->b2});
  if (ads_) out.insert(out.end(), {&ads_->w1, &ads_->b1, &ads_->w2, &ads_->b2});
  if (llp_) {
    out.insert(out.end(), {&llp_->score_w, &llp_->score_b, &llp_->out_w, &llp_->out_b});
  }
  return out;
}

std::size_t FusionHead::parameter_count() const {
  std::size_t n = 0;
  for (Param* p : const_cast<FusionHead*>(this)->params()) n += p->value.size();
  return n;
}

void FusionHead::randomize(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  for (Param* p : params()) {
    std::normal_distribution<double> nd(0.0, scale * fan_in_std(std::max<std::size_t>(1, p->value.cols())));
    for (auto& v : p->value.data()) v = nd(rng);
    p->momentum.fill(0.0);
  }
}

namespace {

struct TextPath {
  MatrixD text;
  std::vector<LlpTrace> traces;
};

TextPath text_path(const FusionConfig& cfg, const std::optional<LlpParams>& llp,
                   const FusionInputs& in) {
  TextPath tp;
  if (!cfg.use_llp) {
    if (in.text.cols() != cfg.d_t) throw Error(ErrorCode::kDimensionMismatch, "fusion: text dim mismatch");
    tp.text = in.text;
    return tp;
  }
  if (in.tokens.size() != in.vision.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "fusion: LLP needs one token sequence per record");
  }
  tp.text = MatrixD(in.tokens.size(), cfg.d_t);
  tp.traces.reserve(in.tokens.size());
  for (std::size_t i = 0; i < in.tokens.size(); ++i) {
    tp.traces.push_back(llp_trace(in.tokens[i], *llp));
    const auto& v = tp.traces.back().out.value;
    std::copy(v.begin(), v.end(), tp.text.row(i).begin());
  }
  return tp;
}

}  // namespace

FusedBatch FusionHead::forward(const FusionInputs& in) const {
  if (in.vision.cols() != cfg_.d_v) throw Error(ErrorCode::kDimensionMismatch, "fusion: vision dim mismatch");
  auto tp = text_path(cfg_, llp_, in);
  if (tp.text.rows() != in.vision.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "fusion: modality row counts differ");
  }
  FusedBatch out;
  out.mechanism = cfg_.mechanism;
  std::vector<double> norms;
  switch (cfg_.mechanism) {
    case Mechanism::kCat:
      out.embedding = rows_normalized(hconcat(in.vision, tp.text), norms, out.degenerate);
      break;
    case Mechanism::kPa: {
      MatrixD e = affine(in.vision, pa_->w_v.value, pa_->b_v.value);
      add_inplace(e, affine(tp.text, pa_->w_t.value, pa_->b_t.value));
      out.embedding = rows_normalized(std::move(e), norms, out.degenerate);
      break;
    }
    case Mechanism::kMlp: {
      auto t = perceptron(hconcat(in.vision, tp.text), mlp_->w1, mlp_->b1, mlp_->w2, mlp_->b2);
      out.embedding = rows_normalized(std::move(t.out), norms, out.degenerate);
      break;
    }
    case Mechanism::kAds: {
      auto t = perceptron(hconcat(in.vision, tp.text), ads_->w1, ads_->b1, ads_->w2, ads_->b2);
      out.vision = in.vision;
      out.text = tp.text;
      out.weights.reserve(t.out.rows());
      for (std::size_t r = 0; r < t.out.rows(); ++r) {
        const auto w = softmax(t.out.row(r));
        out.weights.push_back({w[0], w[1]});
      }
      break;
    }
  }
  return out;
}

MatrixD FusionHead::similarity(const FusedBatch& q, const FusedBatch& r) {
  if (q.mechanism != r.mechanism) {
    throw Error(ErrorCode::kInvalidArgument, "similarity: batches come from different heads");
  }
  if (q.mechanism != Mechanism::kAds) return matmul_nt(q.embedding, r.embedding);
  const MatrixD sv = matmul_nt(q.vision, r.vision);
  const MatrixD st = matmul_nt(q.text, r.text);
  MatrixD s(sv.rows(), sv.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) {
      const double wv = 0.5 * (q.weights[i][0] + r.weights[j][0]);
      const double wt = 0.5 * (q.weights[i][1] + r.weights[j][1]);
      s(i, j) = wv * sv(i, j) + wt * st(i, j);
    }
  }
  return s;
}

double FusionHead::loss_and_grad(const FusionInputs& batch, std::span<const std::string> place_ids,
                                 const MsConfig& ms) {
  for (Param* p : params()) p->zero_grad();
  if (place_ids.size() != batch.vision.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "loss_and_grad: one place id per record expected");
  }
  const auto masks = build_batch_masks(place_ids);
  auto tp = text_path(cfg_, llp_, batch);
  const MatrixD& zv = batch.vision;
  const MatrixD& zt = tp.text;
  const std::size_t n = zv.rows();
  MatrixD dzt;
  double loss = 0.0;

  if (cfg_.mechanism == Mechanism::kAds) {
    auto t = perceptron(hconcat(zv, zt), ads_->w1, ads_->b1, ads_->w2, ads_->b2);
    MatrixD w(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
      const auto sm = softmax(t.out.row(r));
      w(r, 0) = sm[0];
      w(r, 1) = sm[1];
    }
    const MatrixD sv = matmul_nt(zv, zv);
    const MatrixD st = matmul_nt(zt, zt);
    MatrixD s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        s(i, j) = 0.5 * (w(i, 0) + w(j, 0)) * sv(i, j) + 0.5 * (w(i, 1) + w(j, 1)) * st(i, j);
      }
    }
    const auto res = ms_loss(s, masks, ms);
    loss = res.loss;
    const MatrixD& g = res.grad;

    MatrixD dw(n, 2);
    MatrixD gt(n, n);  // dL/dS_t
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        dw(i, 0) += 0.5 * gij * sv(i, j);
        dw(j, 0) += 0.5 * gij * sv(i, j);
        dw(i, 1) += 0.5 * gij * st(i, j);
        dw(j, 1) += 0.5 * gij * st(i, j);
        gt(i, j) = gij * 0.5 * (w(i, 1) + w(j, 1));
      }
    }
    MatrixD dlogits(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
      const double m = w(r, 0) * dw(r, 0) + w(r, 1) * dw(r, 1);
      dlogits(r, 0) = w(r, 0) * (dw(r, 0) - m);
      dlogits(r, 1) = w(r, 1) * (dw(r, 1) - m);
    }
    MatrixD dx = perceptron_backward(t, dlogits, ads_->w1, ads_->b1, ads_->w2, ads_->b2);
    if (cfg_.use_llp) {
      // Through S_t = Zt Zt^T and through the weight network's text input.
      MatrixD gsym = gt;
      add_inplace(gsym, transpose(gt));
      dzt = matmul(gsym, zt);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < cfg_.d_t; ++k) dzt(r, k) += dx(r, cfg_.d_v + k);
      }
    }
  } else {
    MatrixD e;
    PerceptronTrace mt;
    MatrixD cat_in;
    switch (cfg_.mechanism) {
      case Mechanism::kCat:
        cat_in = hconcat(zv, zt);
        e = cat_in;
        break;
      case Mechanism::kPa:
        e = affine(zv, pa_->w_v.value, pa_->b_v.value);
        add_inplace(e, affine(zt, pa_->w_t.value, pa_->b_t.value));
        break;
      case Mechanism::kMlp:
        mt = perceptron(hconcat(zv, zt), mlp_->w1, mlp_->b1, mlp_->w2, mlp_->b2);
        e = mt.out;
        break;
      case Mechanism::kAds:
        break;
    }
    std::vector<double> norms;
    std::vector<bool> degenerate;
    const MatrixD z = rows_normalized(std::move(e), norms, degenerate);
    const auto res = ms_loss(matmul_nt(z, z), masks, ms);
    loss = res.loss;
    MatrixD gsym = res.grad;
    add_inplace(gsym, transpose(res.grad));
    const MatrixD dz = matmul(gsym, z);
    const MatrixD de = normalize_rows_backward(z, norms, dz);
    switch (cfg_.mechanism) {
      case Mechanism::kCat:
        if (cfg_.use_llp) {
          dzt = MatrixD(n, cfg_.d_t);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < cfg_.d_t; ++k) dzt(r, k) = de(r, cfg_.d_v + k);
          }
        }
        break;
      case Mechanism::kPa:
        affine_backward(zv, pa_->w_v.value, de, &pa_->w_v.grad, &pa_->b_v.grad);
        dzt = affine_backward(zt, pa_->w_t.value, de, &pa_->w_t.grad, &pa_->b_t.grad);
        break;
      case Mechanism::kMlp: {
        MatrixD dx = perceptron_backward(mt, de, mlp_->w1, mlp_->b1, mlp_->w2, mlp_->b2);
        if (cfg_.use_llp) {
          dzt = MatrixD(n, cfg_.d_t);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < cfg_.d_t; ++k) dzt(r, k) = dx(r, cfg_.d_v + k);
          }
        }
        break;
      }
      case Mechanism::kAds:
        break;
    }
  }

  if (cfg_.use_llp) {
    for (std::size_t r = 0; r < n; ++r) llp_backward(batch.tokens[r], tp.traces[r], dzt.row(r), *llp_);
  }
  return loss;
}

TensorBundle FusionHead::to_bundle() const {
  TensorBundle b;
  b.kind = FileKind::kFusionHead;
  nlohmann::json meta = {{"mechanism", to_string(cfg_.mechanism)},
                         {"d_v", cfg_.d_v},
                         {"d_t", cfg_.d_t},
                         {"d_e", cfg_.d_e},
                         {"use_llp", cfg_.use_llp},
                         {"hidden", cfg_.hidden}};
  b.metadata_json = meta.dump();
  for (Param* p : const_cast<FusionHead*>(this)->params()) b.tensors.emplace_back(p->name, p->value);
  return b;
}

FusionHead FusionHead::from_bundle(const TensorBundle& bundle) {
  if (bundle.kind != FileKind::kFusionHead) {
    throw Error(ErrorCode::kKindMismatch, "checkpoint is not a fusion head");
  }
  FusionConfig cfg;
  try {
    const auto meta = nlohmann::json::parse(bundle.metadata_json);
    cfg.mechanism = parse_mechanism(meta.at("mechanism").get<std::string>());
    cfg.d_v = meta.at("d_v").get<std::size_t>();
    cfg.d_t = meta.at("d_t").get<std::size_t>();
    cfg.d_e = meta.at("d_e").get<std::size_t>();
    cfg.use_llp = meta.at("use_llp").get<bool>();
    cfg.hidden = meta.at("hidden").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("fusion checkpoint: ") + e.what());
  }
  FusionHead head(cfg, 0);
  for (Param* p : head.params()) {
    const MatrixD& v = bundle.at(p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "fusion checkpoint: shape of " + p->name);
    }
    p->value = v;
  }
  return head;
}

}  // namespace lavpr
