#include "lavpr/encoder.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "json.hpp"

namespace lavpr {

std::string_view to_string(LoraTarget t) { return t == LoraTarget::kQkv ? "qkv" : "all"; }

LoraTarget parse_lora_target(std::string_view s) {
  if (s == "qkv") return LoraTarget::kQkv;
  if (s == "all") return LoraTarget::kAllLinear;
  throw Error(ErrorCode::kInvalidArgument, "unknown LoRA target '" + std::string(s) + "'");
}

void EncoderConfig::validate() const {
  if (input_dim == 0 || model_dim == 0 || heads == 0 || ff_dim == 0 || output_dim == 0 ||
      max_seq_len == 0) {
    throw Error(ErrorCode::kInvalidArgument, "encoder: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw Error(ErrorCode::kInvalidArgument, "encoder: model_dim must be divisible by heads");
  }
}

namespace {

LoraLayer make_layer(std::string name, std::size_t out, std::size_t in, std::mt19937_64& rng) {
  LoraLayer l;
  l.name = std::move(name);
  l.w0 = MatrixD(out, in);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  for (auto& v : l.w0.data()) v = nd(rng);
  l.bias = MatrixD(1, out);
  std::normal_distribution<double> nb(0.0, 0.02);
  for (auto& v : l.bias.data()) v = nb(rng);
  return l;
}

// Columns [c0, c0 + n) of m.
MatrixD column_block(const MatrixD& m, std::size_t c0, std::size_t n) {
  MatrixD out(m.rows(), n);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out(r, c) = m(r, c0 + c);
  }
  return out;
}

void add_column_block(MatrixD& m, std::size_t c0, const MatrixD& block) {
  for (std::size_t r = 0; r < block.rows(); ++r) {
    for (std::size_t c = 0; c < block.cols(); ++c) m(r, c0 + c) += block(r, c);
  }
}

std::uint64_t fnv1a(std::uint64_t h, std::span<const double> data) {
  for (double v : data) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

}  // namespace

ToyEncoder::ToyEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t m = cfg_.model_dim;
  embed_ = make_layer("embed", m, cfg_.input_dim, rng);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    blocks_.push_back(Block{make_layer(p + "q", m, m, rng), make_layer(p + "k", m, m, rng),
                            make_layer(p + "v", m, m, rng), make_layer(p + "o", m, m, rng),
                            make_layer(p + "ff1", cfg_.ff_dim, m, rng),
                            make_layer(p + "ff2", m, cfg_.ff_dim, rng)});
  }
  proj_ = make_layer("proj", cfg_.output_dim, m, rng);
}

std::vector<LoraLayer*> ToyEncoder::layers() {
  std::vector<LoraLayer*> out{&embed_};
  for (auto& b : blocks_) out.insert(out.end(), {&b.q, &b.k, &b.v, &b.o, &b.ff1, &b.ff2});
  out.push_back(&proj_);
  return out;
}

std::vector<const LoraLayer*> ToyEncoder::layers() const {
  std::vector<const LoraLayer*> out;
  for (auto* l : const_cast<ToyEncoder*>(this)->layers()) out.push_back(l);
  return out;
}

std::size_t apply_lora(ToyEncoder& enc, const LoraSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t count = 0;
  for (auto& b : enc.blocks_) {
    std::vector<LoraLayer*> targets{&b.q, &b.k, &b.v};
    if (spec.target == LoraTarget::kAllLinear) targets.insert(targets.end(), {&b.o, &b.ff1, &b.ff2});
    for (auto* l : targets) {
      l->attach(spec.rank, spec.scale, rng);
      count += l->trainable_count();
    }
  }
  enc.lora_ = spec;
  return count;
}

std::vector<Param*> ToyEncoder::trainable() {
  std::vector<Param*> out;
  for (auto* l : layers()) {
    if (l->adapted()) {
      out.push_back(&*l->a);
      out.push_back(&*l->b);
    }
  }
  return out;
}

void ToyEncoder::zero_grad() {
  for (auto* p : trainable()) p->zero_grad();
}

std::size_t ToyEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += l->w0.size() + l->bias.size();
  return n;
}

std::size_t ToyEncoder::non_embedding_parameter_count() const {
  return parameter_count() - embed_.w0.size() - embed_.bias.size();
}

std::size_t ToyEncoder::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += l->trainable_count();
  return n;
}

std::uint64_t ToyEncoder::frozen_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto* l : layers()) {
    h = fnv1a(h, l->w0.data());
    h = fnv1a(h, l->bias.data());
  }
  return h;
}

ToyEncoder::Trace ToyEncoder::forward(const MatrixD& sequence) const {
  if (sequence.rows() == 0) throw Error(ErrorCode::kEmptyInput, "encoder: empty sequence");
  if (sequence.rows() > cfg_.max_seq_len) {
    throw Error(ErrorCode::kSequenceTooLong,
                "encoder: sequence length " + std::to_string(sequence.rows()) + " exceeds " +
                    std::to_string(cfg_.max_seq_len));
  }
  if (sequence.cols() != cfg_.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "encoder: token dim mismatch");
  }
  const std::size_t s = sequence.rows();
  const std::size_t dh = cfg_.model_dim / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Trace t;
  t.seq_len = s;
  MatrixD h = lora_forward(sequence, embed_);
  for (const auto& b : blocks_) {
    Trace::BlockTrace bt;
    bt.input = h;
    bt.q = lora_forward(h, b.q);
    bt.k = lora_forward(h, b.k);
    bt.v = lora_forward(h, b.v);
    bt.mixed = MatrixD(s, cfg_.model_dim);
    for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
      const MatrixD qh = column_block(bt.q, hd * dh, dh);
      const MatrixD kh = column_block(bt.k, hd * dh, dh);
      const MatrixD vh = column_block(bt.v, hd * dh, dh);
      MatrixD scores = matmul_nt(qh, kh);
      for (std::size_t r = 0; r < s; ++r) {
        auto row = scores.row(r);
        for (auto& x : row) x *= inv_sqrt;
        const auto p = softmax(row);
        std::copy(p.begin(), p.end(), row.begin());
      }
      add_column_block(bt.mixed, hd * dh, matmul(scores, vh));
      bt.attn.push_back(std::move(scores));
    }
    bt.h1 = h;
    add_inplace(bt.h1, lora_forward(bt.mixed, b.o));
    bt.pre_ff = lora_forward(bt.h1, b.ff1);
    bt.act_ff = bt.pre_ff;
    for (auto& x : bt.act_ff.data()) x = gelu(x);
    h = bt.h1;
    add_inplace(h, lora_forward(bt.act_ff, b.ff2));
    t.blocks.push_back(std::move(bt));
  }
  t.pooled = MatrixD(1, cfg_.model_dim);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < cfg_.model_dim; ++c) t.pooled(0, c) += h(r, c);
  }
  scale_inplace(t.pooled, 1.0 / static_cast<double>(s));
  const MatrixD y = lora_forward(t.pooled, proj_);
  t.out = l2_normalize(y.row(0));
  return t;
}

std::vector<double> ToyEncoder::encode(const MatrixD& sequence) const {
  return forward(sequence).out.value;
}

MatrixD ToyEncoder::encode_batch(const std::vector<MatrixD>& sequences) const {
  MatrixD out(sequences.size(), cfg_.output_dim);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto e = encode(sequences[i]);
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

void ToyEncoder::backward(const Trace& t, std::span<const double> d_embedding) {
  const std::size_t s = t.seq_len;
  const std::size_t dh = cfg_.model_dim / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixD dy(1, cfg_.output_dim);
  normalize_backward(t.out.value, t.out.norm, d_embedding, dy.row(0));
  const MatrixD dpooled = lora_backward(t.pooled, proj_, dy);
  MatrixD dh_out(s, cfg_.model_dim);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < cfg_.model_dim; ++c) {
      dh_out(r, c) = dpooled(0, c) / static_cast<double>(s);
    }
  }

  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    Block& b = blocks_[bi];
    const auto& bt = t.blocks[bi];
    // H2 = H1 + ff2(gelu(ff1(H1)))
    MatrixD dact = lora_backward(bt.act_ff, b.ff2, dh_out);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(bt.pre_ff.data()[i]);
    MatrixD dh1 = dh_out;
    add_inplace(dh1, lora_backward(bt.h1, b.ff1, dact));
    // H1 = H + o(MHA)
    const MatrixD dmixed = lora_backward(bt.mixed, b.o, dh1);
    MatrixD dq(s, cfg_.model_dim), dk(s, cfg_.model_dim), dv(s, cfg_.model_dim);
    for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
      const MatrixD qh = column_block(bt.q, hd * dh, dh);
      const MatrixD kh = column_block(bt.k, hd * dh, dh);
      const MatrixD vh = column_block(bt.v, hd * dh, dh);
      const MatrixD doh = column_block(dmixed, hd * dh, dh);
      const MatrixD& p = bt.attn[hd];
      MatrixD dp = matmul_nt(doh, vh);
      add_column_block(dv, hd * dh, matmul_tn(p, doh));
      MatrixD dscores(s, s);
      for (std::size_t r = 0; r < s; ++r) {
        const double m = dot(dp.row(r), p.row(r));
        for (std::size_t c = 0; c < s; ++c) dscores(r, c) = p(r, c) * (dp(r, c) - m) * inv_sqrt;
      }
      add_column_block(dq, hd * dh, matmul(dscores, kh));
      add_column_block(dk, hd * dh, matmul_tn(dscores, qh));
    }
    MatrixD dh_in = dh1;
    add_inplace(dh_in, lora_backward(bt.input, b.q, dq));
    add_inplace(dh_in, lora_backward(bt.input, b.k, dk));
    add_inplace(dh_in, lora_backward(bt.input, b.v, dv));
    dh_out = std::move(dh_in);
  }
  // The embedding layer never carries an adapter, so the pass stops here.
}

TensorBundle ToyEncoder::base_bundle() const {
  TensorBundle b;
  b.kind = FileKind::kEncoderBase;
  b.metadata_json = nlohmann::json{{"input_dim", cfg_.input_dim},
                                   {"model_dim", cfg_.model_dim},
                                   {"heads", cfg_.heads},
                                   {"ff_dim", cfg_.ff_dim},
                                   {"blocks", cfg_.blocks},
                                   {"output_dim", cfg_.output_dim},
                                   {"max_seq_len", cfg_.max_seq_len}}
                        .dump();
  for (const auto* l : layers()) {
    b.tensors.emplace_back(l->name + ".w", l->w0);
    b.tensors.emplace_back(l->name + ".b", l->bias);
  }
  return b;
}

TensorBundle ToyEncoder::adapter_bundle() const {
  TensorBundle b;
  b.kind = FileKind::kLoraAdapters;
  nlohmann::json meta = nlohmann::json::object();
  if (lora_) {
    meta = {{"target", to_string(lora_->target)}, {"rank", lora_->rank}, {"scale", lora_->scale}};
  }
  b.metadata_json = meta.dump();
  for (const auto* l : layers()) {
    if (!l->adapted()) continue;
    b.tensors.emplace_back(l->a->name, l->a->value);
    b.tensors.emplace_back(l->b->name, l->b->value);
  }
  return b;
}

ToyEncoder ToyEncoder::from_bundles(const TensorBundle& base, const TensorBundle* adapters) {
  if (base.kind != FileKind::kEncoderBase) {
    throw Error(ErrorCode::kKindMismatch, "checkpoint is not an encoder base");
  }
  EncoderConfig cfg;
  try {
    const auto j = nlohmann::json::parse(base.metadata_json);
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.model_dim = j.at("model_dim").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ff_dim = j.at("ff_dim").get<std::size_t>();
    cfg.blocks = j.at("blocks").get<std::size_t>();
    cfg.output_dim = j.at("output_dim").get<std::size_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("encoder checkpoint: ") + e.what());
  }
  ToyEncoder enc(cfg, 0);
  for (auto* l : enc.layers()) {
    l->w0 = base.at(l->name + ".w");
    l->bias = base.at(l->name + ".b");
  }
  if (adapters && !adapters->tensors.empty()) {
    if (adapters->kind != FileKind::kLoraAdapters) {
      throw Error(ErrorCode::kKindMismatch, "checkpoint is not a LoRA adapter set");
    }
    LoraSpec spec;
    try {
      const auto j = nlohmann::json::parse(adapters->metadata_json);
      spec.target = parse_lora_target(j.at("target").get<std::string>());
      spec.rank = j.at("rank").get<std::size_t>();
      spec.scale = j.at("scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kBadMetadata, std::string("adapter checkpoint: ") + e.what());
    }
    apply_lora(enc, spec, 0);
    for (auto* l : enc.layers()) {
      if (!l->adapted()) continue;
      l->a->value = adapters->at(l->a->name);
      l->b->value = adapters->at(l->b->name);
    }
  }
  return enc;
}

}  // namespace lavpr
