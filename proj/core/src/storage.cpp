#include "lavpr/storage.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "json.hpp"

namespace lavpr {

using nlohmann::json;

std::string_view to_string(Modality m) { return m == Modality::kVision ? "vision" : "text"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kDatabase: return "database";
    case Split::kQuery: return "query";
    case Split::kTrain: return "train";
  }
  return "database";
}

Modality parse_modality(std::string_view s) {
  if (s == "vision") return Modality::kVision;
  if (s == "text") return Modality::kText;
  throw Error(ErrorCode::kBadMetadata, "unknown modality '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "database") return Split::kDatabase;
  if (s == "query") return Split::kQuery;
  if (s == "train") return Split::kTrain;
  throw Error(ErrorCode::kBadMetadata, "unknown split '" + std::string(s) + "'");
}

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorCode::kTruncated, "unexpected end of file");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

struct Header {
  FileKind kind;
  std::uint32_t count;
  std::uint32_t dim;
};

void write_header(ByteWriter& w, FileKind kind, std::uint32_t count, std::uint32_t dim,
                  const std::string& metadata) {
  w.bytes(std::string_view(kMagic, 4));
  w.u8(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(count);
  w.u32(dim);
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  w.bytes(metadata);
}

Header read_header(ByteReader& r, FileKind expected) {
  if (r.remaining() < 4) throw Error(ErrorCode::kTruncated, "file shorter than magic");
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::kBadMagic, "bad magic (expected LVPR)");
  }
  const auto version = r.u8();
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "unsupported format version " + std::to_string(version));
  }
  const auto kind = static_cast<FileKind>(r.u8());
  if (kind != expected) {
    throw Error(ErrorCode::kKindMismatch,
                "file kind " + std::to_string(static_cast<int>(kind)) + ", expected " +
                    std::to_string(static_cast<int>(expected)));
  }
  Header h{kind, r.u32(), r.u32()};
  return h;
}

json parse_metadata(ByteReader& r) {
  const auto len = r.u32();
  const auto text = r.bytes(len);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("metadata JSON: ") + e.what());
  }
}

json records_to_json(const std::vector<RecordMeta>& records) {
  json arr = json::array();
  for (const auto& r : records) {
    arr.push_back({{"id", r.record_id},
                   {"place", r.place_id},
                   {"modality", to_string(r.modality)},
                   {"split", to_string(r.split)}});
  }
  return arr;
}

std::vector<RecordMeta> records_from_json(const json& meta, std::size_t count) {
  std::vector<RecordMeta> out;
  try {
    const auto& arr = meta.at("records");
    if (!arr.is_array() || arr.size() != count) {
      throw Error(ErrorCode::kBadMetadata, "record metadata count does not match header");
    }
    out.reserve(count);
    for (const auto& j : arr) {
      out.push_back({j.at("id").get<std::string>(), j.at("place").get<std::string>(),
                     parse_modality(j.at("modality").get<std::string>()),
                     parse_split(j.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("record metadata: ") + e.what());
  }
  return out;
}

void check_unique_ids(const std::vector<RecordMeta>& records) {
  std::set<std::string_view> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.record_id).second) {
      throw Error(ErrorCode::kDuplicateRecord, "duplicate record id '" + r.record_id + "'");
    }
  }
}

std::optional<std::size_t> find_record(const std::vector<RecordMeta>& records,
                                       std::string_view id) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].record_id == id) return i;
  }
  return std::nullopt;
}

}  // namespace

void DescriptorSet::validate() const {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "descriptor dim must be positive");
  if (matrix.rows() != records.size() || (matrix.rows() && matrix.cols() != dim)) {
    throw Error(ErrorCode::kDimensionMismatch, "descriptor matrix shape does not match records");
  }
  if (!all_finite(matrix.data())) {
    throw Error(ErrorCode::kNonFinite, "descriptor matrix contains NaN/Inf");
  }
  check_unique_ids(records);
}

std::optional<std::size_t> DescriptorSet::find(std::string_view record_id) const {
  return find_record(records, record_id);
}

void TokenSet::validate() const {
  if (token_dim == 0) throw Error(ErrorCode::kInvalidArgument, "token dim must be positive");
  if (sequences.size() != records.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "token sequence count does not match records");
  }
  for (const auto& s : sequences) {
    if (s.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "empty token sequence");
    if (s.cols() != token_dim) {
      throw Error(ErrorCode::kDimensionMismatch, "token sequence dim mismatch");
    }
    if (!all_finite(s.data())) throw Error(ErrorCode::kNonFinite, "token values contain NaN/Inf");
  }
  check_unique_ids(records);
}

std::optional<std::size_t> TokenSet::find(std::string_view record_id) const {
  return find_record(records, record_id);
}

DescriptorSet select_split(const DescriptorSet& set, Split split) {
  DescriptorSet out;
  out.dim = set.dim;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (set.records[i].split == split) rows.push_back(i);
  }
  out.matrix = Matrix(rows.size(), set.dim);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.records.push_back(set.records[rows[k]]);
    auto src = set.matrix.row(rows[k]);
    std::copy(src.begin(), src.end(), out.matrix.row(k).begin());
  }
  return out;
}

TokenSet select_split(const TokenSet& set, Split split) {
  TokenSet out;
  out.token_dim = set.token_dim;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    if (set.records[i].split != split) continue;
    out.records.push_back(set.records[i]);
    out.sequences.push_back(set.sequences[i]);
  }
  return out;
}

const MatrixD& TensorBundle::at(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw Error(ErrorCode::kBadMetadata, "checkpoint has no tensor '" + std::string(name) + "'");
}

std::string encode_descriptors(const DescriptorSet& set) {
  set.validate();
  ByteWriter w;
  json meta = {{"records", records_to_json(set.records)}};
  write_header(w, FileKind::kDescriptors, static_cast<std::uint32_t>(set.records.size()), set.dim,
               meta.dump());
  for (float v : set.matrix.data()) w.f32(v);
  return w.take();
}

DescriptorSet decode_descriptors(std::string_view bytes) {
  ByteReader r(bytes);
  const auto h = read_header(r, FileKind::kDescriptors);
  DescriptorSet set;
  set.dim = h.dim;
  set.records = records_from_json(parse_metadata(r), h.count);
  const std::size_t n = static_cast<std::size_t>(h.count) * h.dim;
  if (r.remaining() < n * 4) throw Error(ErrorCode::kTruncated, "descriptor payload truncated");
  set.matrix = Matrix(h.count, h.dim);
  for (auto& v : set.matrix.data()) v = r.f32();
  if (r.remaining() != 0) throw Error(ErrorCode::kBadMetadata, "trailing bytes after payload");
  set.validate();
  return set;
}

std::string encode_tokens(const TokenSet& set) {
  set.validate();
  ByteWriter w;
  json meta = {{"records", records_to_json(set.records)}};
  write_header(w, FileKind::kTokens, static_cast<std::uint32_t>(set.records.size()),
               set.token_dim, meta.dump());
  for (const auto& seq : set.sequences) {
    w.u32(static_cast<std::uint32_t>(seq.rows()));
    for (float v : seq.data()) w.f32(v);
  }
  return w.take();
}

TokenSet decode_tokens(std::string_view bytes) {
  ByteReader r(bytes);
  const auto h = read_header(r, FileKind::kTokens);
  TokenSet set;
  set.token_dim = h.dim;
  set.records = records_from_json(parse_metadata(r), h.count);
  set.sequences.reserve(h.count);
  for (std::uint32_t i = 0; i < h.count; ++i) {
    const auto len = r.u32();
    if (r.remaining() < static_cast<std::size_t>(len) * h.dim * 4) {
      throw Error(ErrorCode::kTruncated, "token payload truncated");
    }
    Matrix seq(len, h.dim);
    for (auto& v : seq.data()) v = r.f32();
    set.sequences.push_back(std::move(seq));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kBadMetadata, "trailing bytes after payload");
  set.validate();
  return set;
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::kIo, "rename to " + path.string() + " failed: " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_descriptors(const DescriptorSet& set, const std::filesystem::path& path) {
  atomic_write(path, encode_descriptors(set));
}

DescriptorSet read_descriptors(const std::filesystem::path& path) {
  return decode_descriptors(read_file(path));
}

void write_tokens(const TokenSet& set, const std::filesystem::path& path) {
  atomic_write(path, encode_tokens(set));
}

TokenSet read_tokens(const std::filesystem::path& path) { return decode_tokens(read_file(path)); }

void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  json tensors = json::array();
  for (const auto& [name, m] : bundle.tensors) {
    if (!all_finite(m.data())) {
      throw Error(ErrorCode::kNonFinite, "checkpoint tensor '" + name + "' is not finite");
    }
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  json meta;
  try {
    meta = {{"dtype", "f64"}, {"tensors", tensors}, {"meta", json::parse(bundle.metadata_json)}};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("checkpoint metadata: ") + e.what());
  }
  ByteWriter w;
  write_header(w, bundle.kind, static_cast<std::uint32_t>(bundle.tensors.size()), 0, meta.dump());
  for (const auto& [name, m] : bundle.tensors) {
    for (double v : m.data()) w.f64(v);
  }
  atomic_write(path, w.take());
}

TensorBundle read_bundle(const std::filesystem::path& path, FileKind expected) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  const auto h = read_header(r, expected);
  const auto meta = parse_metadata(r);
  TensorBundle b;
  b.kind = h.kind;
  try {
    b.metadata_json = meta.at("meta").dump();
    const auto& ts = meta.at("tensors");
    if (ts.size() != h.count) throw Error(ErrorCode::kBadMetadata, "tensor count mismatch");
    for (const auto& t : ts) {
      MatrixD m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
      if (r.remaining() < m.size() * 8) throw Error(ErrorCode::kTruncated, "tensor truncated");
      for (auto& v : m.data()) v = r.f64();
      if (!all_finite(m.data())) throw Error(ErrorCode::kNonFinite, "checkpoint has NaN/Inf");
      b.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadMetadata, std::string("checkpoint metadata: ") + e.what());
  }
  return b;
}

}  // namespace lavpr
