#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {

using nlohmann::json;

std::size_t Manifest::image_count() const {
  std::size_t n = 0;
  for (const auto& p : places) n += p.vision.size();
  return n;
}

void Manifest::validate() const {
  std::set<std::string> place_ids;
  std::set<std::string> seen_vision;
  std::set<std::string> seen_text;
  for (const auto& p : places) {
    if (!place_ids.insert(p.place_id).second) {
      throw Error(ErrorCode::kDuplicateRecord, "duplicate place id '" + p.place_id + "'");
    }
    auto check_list = [&](const std::vector<std::string>& ids, std::set<std::string>& seen,
                          std::string_view modality) {
      for (const auto& id : ids) {
        if (!seen.insert(id).second) {
          throw Error(ErrorCode::kDuplicateRecord, "record '" + id + "' appears twice in " +
                                                       std::string(modality) + " lists");
        }
        if (!p.splits.contains(id)) {
          throw Error(ErrorCode::kBadMetadata, "record '" + id + "' has no split assignment");
        }
      }
    };
    check_list(p.vision, seen_vision, "vision");
    check_list(p.text, seen_text, "text");

    bool has_query = false;
    bool has_database = false;
    for (const auto& id : p.vision) {
      const Split s = p.splits.at(id);
      has_query |= s == Split::kQuery;
      has_database |= s == Split::kDatabase;
    }
    if (has_query && !has_database) {
      throw Error(ErrorCode::kNoDatabaseMembers,
                  "place '" + p.place_id + "' has queries but no database images");
    }
  }
}

void Manifest::cross_check(const std::vector<const DescriptorSet*>& sets) const {
  std::set<std::string> known[2];
  bool present[2] = {false, false};
  for (const auto* s : sets) {
    for (const auto& r : s->records) {
      const auto m = static_cast<std::size_t>(r.modality);
      present[m] = true;
      known[m].insert(r.record_id);
    }
  }
  for (const auto& p : places) {
    for (std::size_t m = 0; m < 2; ++m) {
      if (!present[m]) continue;
      const auto& ids = m == 0 ? p.vision : p.text;
      for (const auto& id : ids) {
        if (!known[m].contains(id)) {
          throw Error(ErrorCode::kDanglingReference,
                      "manifest references missing " +
                          std::string(to_string(static_cast<Modality>(m))) + " record '" + id +
                          "'");
        }
      }
    }
  }
}

Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      PlaceEntry p;
      p.place_id = j.at("place_id").get<std::string>();
      if (j.contains("vision")) p.vision = j["vision"].get<std::vector<std::string>>();
      if (j.contains("text")) p.text = j["text"].get<std::vector<std::string>>();
      if (j.contains("splits")) {
        for (const auto& [id, s] : j["splits"].items()) {
          p.splits[id] = parse_split(s.get<std::string>());
        }
      }
      if (j.contains("geo")) {
        const auto g = j["geo"].get<std::vector<double>>();
        if (g.size() != 2) throw Error(ErrorCode::kBadMetadata, "geo must be [lat, lon]");
        p.geo = std::make_pair(g[0], g[1]);
      }
      if (j.contains("positives")) {
        p.positives = j["positives"].get<std::map<std::string, std::vector<std::string>>>();
      }
      m.places.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kBadMetadata,
                  "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

std::string encode_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& p : manifest.places) {
    json j = {{"place_id", p.place_id}, {"vision", p.vision}, {"text", p.text}};
    json splits = json::object();
    for (const auto& [id, s] : p.splits) splits[id] = to_string(s);
    j["splits"] = splits;
    if (p.geo) j["geo"] = {p.geo->first, p.geo->second};
    if (!p.positives.empty()) j["positives"] = p.positives;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path,
                       const std::vector<const DescriptorSet*>& cross_check_against) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  auto m = parse_manifest(in);
  if (!cross_check_against.empty()) m.cross_check(cross_check_against);
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  atomic_write(path, encode_manifest(manifest));
}

}  // namespace lavpr

namespace lavpr {

DescriptorSet concat(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.records.empty()) return b;
  if (b.records.empty()) return a;
  if (a.dim != b.dim) throw Error(ErrorCode::kDimensionMismatch, "concat: descriptor dims differ");
  DescriptorSet out;
  out.dim = a.dim;
  out.records = a.records;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  out.matrix = Matrix(out.records.size(), a.dim);
  auto dst = out.matrix.data();
  std::copy(a.matrix.data().begin(), a.matrix.data().end(), dst.begin());
  std::copy(b.matrix.data().begin(), b.matrix.data().end(),
            dst.begin() + static_cast<std::ptrdiff_t>(a.matrix.size()));
  return out;
}

TokenSet concat(const TokenSet& a, const TokenSet& b) {
  if (a.records.empty()) return b;
  if (b.records.empty()) return a;
  if (a.token_dim != b.token_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "concat: token dims differ");
  }
  TokenSet out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  out.sequences.insert(out.sequences.end(), b.sequences.begin(), b.sequences.end());
  return out;
}

namespace {
constexpr Split kSplits[] = {Split::kDatabase, Split::kQuery, Split::kTrain};

std::filesystem::path split_file(const std::filesystem::path& dir, std::string_view prefix,
                                 Split s) {
  return dir / (std::string(prefix) + "_" + std::string(to_string(s)) + ".lvpr");
}
}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_manifest(dataset.manifest, dir / "manifest.jsonl");
  for (Split s : kSplits) {
    if (!dataset.vision.records.empty()) {
      auto part = select_split(dataset.vision, s);
      if (!part.records.empty()) write_descriptors(part, split_file(dir, "vision", s));
    }
    if (!dataset.text.records.empty()) {
      auto part = select_split(dataset.text, s);
      if (!part.records.empty()) write_descriptors(part, split_file(dir, "text", s));
    }
    if (!dataset.text_tokens.records.empty()) {
      auto part = select_split(dataset.text_tokens, s);
      if (!part.records.empty()) write_tokens(part, split_file(dir, "tokens_text", s));
    }
    if (!dataset.vision_patches.records.empty()) {
      auto part = select_split(dataset.vision_patches, s);
      if (!part.records.empty()) write_tokens(part, split_file(dir, "tokens_vision", s));
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.jsonl")) {
    throw Error(ErrorCode::kIo, "no dataset at '" + dir.string() + "' (manifest.jsonl missing)");
  }
  Dataset d;
  for (Split s : kSplits) {
    if (auto f = split_file(dir, "vision", s); std::filesystem::exists(f)) {
      d.vision = concat(d.vision, read_descriptors(f));
    }
    if (auto f = split_file(dir, "text", s); std::filesystem::exists(f)) {
      d.text = concat(d.text, read_descriptors(f));
    }
    if (auto f = split_file(dir, "tokens_text", s); std::filesystem::exists(f)) {
      d.text_tokens = concat(d.text_tokens, read_tokens(f));
    }
    if (auto f = split_file(dir, "tokens_vision", s); std::filesystem::exists(f)) {
      d.vision_patches = concat(d.vision_patches, read_tokens(f));
    }
  }
  d.vision.validate();
  std::vector<const DescriptorSet*> sets{&d.vision};
  if (!d.text.records.empty()) sets.push_back(&d.text);
  d.manifest = read_manifest(dir / "manifest.jsonl", sets);
  return d;
}

}  // namespace lavpr
