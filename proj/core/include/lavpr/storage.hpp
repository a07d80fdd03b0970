#pragma once

// On-disk formats shared with external exporters.
//
// Every binary file starts with the same 14-byte little-endian header:
//
//   offset  size  field
//   0       4     magic "LVPR"
//   4       1     version (= 1)
//   5       1     kind (FileKind)
//   6       4     count   (records, or tensors for checkpoints)
//   10      4     dim     (descriptor / token dim; 0 for checkpoints)
//
// followed by a u32 byte length and that many bytes of UTF-8 JSON metadata,
// then the payload:
//   descriptors: count*dim f32, row-major
//   tokens:      per record, u32 length then length*dim f32
//   checkpoints: per tensor (in metadata order), rows*cols f64, row-major

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lavpr/numeric.hpp"

namespace lavpr {

inline constexpr char kMagic[4] = {'L', 'V', 'P', 'R'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 14;

enum class FileKind : std::uint8_t {
  kDescriptors = 0,
  kTokens = 1,
  kFusionHead = 2,
  kLoraAdapters = 3,
  kEncoderBase = 4,
};

enum class Modality : std::uint8_t { kVision, kText };
enum class Split : std::uint8_t { kDatabase, kQuery, kTrain };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);

struct RecordMeta {
  std::string record_id;
  std::string place_id;
  Modality modality = Modality::kVision;
  Split split = Split::kDatabase;

  friend bool operator==(const RecordMeta&, const RecordMeta&) = default;
};

struct DescriptorSet {
  std::uint32_t dim = 0;
  std::vector<RecordMeta> records;
  Matrix matrix;  // records.size() x dim

  /// Throws on any broken invariant (row count, unique ids, finite values).
  void validate() const;
  std::optional<std::size_t> find(std::string_view record_id) const;

  friend bool operator==(const DescriptorSet&, const DescriptorSet&) = default;
};

struct TokenSet {
  std::uint32_t token_dim = 0;
  std::vector<RecordMeta> records;
  std::vector<Matrix> sequences;  // sequences[i] is length_i x token_dim; row 0 is CLS

  void validate() const;
  std::optional<std::size_t> find(std::string_view record_id) const;

  friend bool operator==(const TokenSet&, const TokenSet&) = default;
};

/// Subset of `set` restricted to one split, preserving record order.
DescriptorSet select_split(const DescriptorSet& set, Split split);
TokenSet select_split(const TokenSet& set, Split split);

/// Named float64 tensors plus free-form JSON metadata; used for head and
/// adapter checkpoints.
struct TensorBundle {
  FileKind kind = FileKind::kFusionHead;
  std::string metadata_json = "{}";
  std::vector<std::pair<std::string, MatrixD>> tensors;

  const MatrixD& at(std::string_view name) const;
};

void write_descriptors(const DescriptorSet& set, const std::filesystem::path& path);
DescriptorSet read_descriptors(const std::filesystem::path& path);

void write_tokens(const TokenSet& set, const std::filesystem::path& path);
TokenSet read_tokens(const std::filesystem::path& path);

void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path);
TensorBundle read_bundle(const std::filesystem::path& path, FileKind expected);

// Stream-level entry points; the path versions wrap these.
std::string encode_descriptors(const DescriptorSet& set);
DescriptorSet decode_descriptors(std::string_view bytes);
std::string encode_tokens(const TokenSet& set);
TokenSet decode_tokens(std::string_view bytes);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest: JSON lines, one place per line:
//   {"place_id": "p0001",
//    "vision": ["r0001_0", ...], "text": ["r0001_0", ...],
//    "splits": {"r0001_0": "query", ...},
//    "geo": [lat, lon],                      (optional)
//    "positives": {"r0001_0": ["rX", ...]}}  (optional; overrides same-place)

struct PlaceEntry {
  std::string place_id;
  std::vector<std::string> vision;
  std::vector<std::string> text;
  std::map<std::string, Split> splits;
  std::optional<std::pair<double, double>> geo;
  std::map<std::string, std::vector<std::string>> positives;

  friend bool operator==(const PlaceEntry&, const PlaceEntry&) = default;
};

struct Manifest {
  std::vector<PlaceEntry> places;

  std::size_t place_count() const { return places.size(); }
  std::size_t image_count() const;

  /// Structural checks: unique ids per modality, every record has a split,
  /// every place with queries has at least one database member.
  void validate() const;

  /// Every manifest record of a modality present in `sets` must exist in one
  /// of those sets; throws kDanglingReference otherwise.
  void cross_check(const std::vector<const DescriptorSet*>& sets) const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

Manifest parse_manifest(std::istream& in);
std::string encode_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path,
                       const std::vector<const DescriptorSet*>& cross_check_against = {});
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// A dataset directory: manifest.jsonl plus one file per modality and split
// (vision_<split>.lvpr, text_<split>.lvpr, tokens_text_<split>.lvpr,
// tokens_vision_<split>.lvpr). Empty splits are not written.

struct Dataset {
  Manifest manifest;
  DescriptorSet vision;
  DescriptorSet text;
  TokenSet text_tokens;     // may be empty (token_dim == 0)
  TokenSet vision_patches;  // may be empty
};

DescriptorSet concat(const DescriptorSet& a, const DescriptorSet& b);
TokenSet concat(const TokenSet& a, const TokenSet& b);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Loads every present split file, merges them in database/query/train order
/// and cross-checks the manifest against the descriptor sets.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace lavpr
