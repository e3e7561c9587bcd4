#pragma once

// Visual training data: scenes of localized entity instances (JSON lines) and
// precomputed CNN activation vectors (PFV1 binary).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ctxvec/binary_io.hpp"
#include "ctxvec/error.hpp"
#include "ctxvec/log.hpp"
#include "ctxvec/textcorpus.hpp"

namespace ctxvec {

// Pixel box, y grows downward.
struct BBox {
  double x = 0, y = 0, w = 1, h = 1;

  double center_x() const { return x + w / 2; }
  double center_y() const { return y + h / 2; }
  bool within(double img_w, double img_h) const {
    return x >= 0 && y >= 0 && x + w <= img_w && y + h <= img_h;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct EntityInstance {
  WordId word = 0;
  std::optional<BBox> bbox;
  std::uint32_t source_index = 0;  // position in the record's objects array; keys features
  friend bool operator==(const EntityInstance&, const EntityInstance&) = default;
};

struct SceneRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<EntityInstance> instances;

  bool has_boxes() const {
    for (const auto& in : instances)
      if (!in.bbox) return false;
    return true;
  }
  BBox image_box() const { return BBox{0, 0, double(width), double(height)}; }
  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

struct SceneLoadStats {
  std::size_t lines = 0;
  std::size_t scenes = 0;
  std::size_t dropped_instances = 0;  // out-of-vocabulary words
  std::size_t dropped_scenes = 0;     // no usable instance left
};

// C_e for entity i: every other instance in the scene, duplicates included.
inline std::vector<std::size_t> object_contexts(const SceneRecord& scene, std::size_t i) {
  std::vector<std::size_t> out;
  if (scene.instances.size() > 1) out.reserve(scene.instances.size() - 1);
  for (std::size_t j = 0; j < scene.instances.size(); ++j)
    if (j != i) out.push_back(j);
  return out;
}

namespace detail {

inline double json_number(const nlohmann::json& j, const char* what, std::size_t line) {
  if (!j.is_number()) throw ParseError(std::string(what) + " must be a number", line);
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(std::string(what) + " must be finite", line);
  return v;
}

}  // namespace detail

inline std::vector<SceneRecord> parse_scenes(std::istream& is, const Vocabulary& vocab,
                                             SceneLoadStats* stats_out = nullptr) {
  using nlohmann::json;
  SceneLoadStats stats;
  std::vector<SceneRecord> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++stats.lines;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record must be a JSON object", lineno);
    if (!j.contains("image_id") || !j["image_id"].is_string())
      throw ParseError("missing string field image_id", lineno);
    if (!j.contains("width") || !j["width"].is_number_integer() || !j.contains("height") ||
        !j["height"].is_number_integer())
      throw ParseError("width and height must be integers", lineno);
    if (!j.contains("objects") || !j["objects"].is_array())
      throw ParseError("missing array field objects", lineno);

    SceneRecord scene;
    scene.image_id = j["image_id"].get<std::string>();
    scene.width = j["width"].get<int>();
    scene.height = j["height"].get<int>();
    if (scene.width <= 0 || scene.height <= 0)
      throw ParseError("image dimensions must be positive", lineno);

    std::uint32_t position = 0;
    for (const auto& obj : j["objects"]) {
      const auto source_index = position++;
      if (!obj.is_object() || !obj.contains("word") || !obj["word"].is_string())
        throw ParseError("object needs a string field word", lineno);
      EntityInstance inst;
      if (obj.contains("bbox")) {
        const auto& b = obj["bbox"];
        if (!b.is_array() || b.size() != 4) throw ParseError("bbox must be [x,y,w,h]", lineno);
        BBox box{detail::json_number(b[0], "bbox.x", lineno),
                 detail::json_number(b[1], "bbox.y", lineno),
                 detail::json_number(b[2], "bbox.w", lineno),
                 detail::json_number(b[3], "bbox.h", lineno)};
        if (box.w <= 0 || box.h <= 0) throw ParseError("bbox width/height must be > 0", lineno);
        if (!box.within(scene.width, scene.height))
          throw ParseError("bbox lies outside the image", lineno);
        inst.bbox = box;
      }
      auto id = vocab.find(obj["word"].get<std::string>());
      if (!id) {
        ++stats.dropped_instances;
        continue;
      }
      inst.word = *id;
      inst.source_index = source_index;
      scene.instances.push_back(inst);
    }
    if (scene.instances.empty()) {
      ++stats.dropped_scenes;
      continue;
    }
    scenes.push_back(std::move(scene));
  }
  stats.scenes = scenes.size();
  if (stats.dropped_instances > 0 || stats.dropped_scenes > 0)
    log::warn("dropped scene data", "oov_instances", stats.dropped_instances, "empty_scenes",
              stats.dropped_scenes);
  if (stats_out) *stats_out = stats;
  if (scenes.empty()) throw EmptyDataset("no usable scene");
  return scenes;
}

inline std::vector<SceneRecord> load_scenes(const std::string& path, const Vocabulary& vocab,
                                            SceneLoadStats* stats = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open scene file: " + path);
  return parse_scenes(is, vocab, stats);
}

// Scans a scene file for object words without resolving them; used to build a
// vocabulary when no text corpus is given.
inline std::vector<std::string> scan_scene_words(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open scene file: " + path);
  std::vector<std::string> words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!j.contains("objects") || !j["objects"].is_array())
      throw ParseError("missing array field objects", lineno);
    for (const auto& obj : j["objects"])
      if (obj.is_object() && obj.contains("word") && obj["word"].is_string())
        words.push_back(obj["word"].get<std::string>());
  }
  return words;
}

inline std::string scene_to_json(const SceneRecord& s, const Vocabulary& vocab) {
  nlohmann::json j;
  j["image_id"] = s.image_id;
  j["width"] = s.width;
  j["height"] = s.height;
  j["objects"] = nlohmann::json::array();
  for (const auto& in : s.instances) {
    nlohmann::json o;
    o["word"] = vocab.word(in.word);
    if (in.bbox) o["bbox"] = {in.bbox->x, in.bbox->y, in.bbox->w, in.bbox->h};
    j["objects"].push_back(std::move(o));
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Patch features

enum class FeatureKind : std::uint8_t { FullMasked = 0, Patch = 1 };

struct FeatureKey {
  std::string image_id;
  std::uint32_t instance = 0;
  FeatureKind kind = FeatureKind::Patch;
  std::uint32_t ordinal = 0;

  auto tie() const { return std::tie(image_id, instance, kind, ordinal); }
  friend bool operator<(const FeatureKey& a, const FeatureKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const FeatureKey& a, const FeatureKey& b) { return a.tie() == b.tie(); }
};

struct FeatureEntry {
  FeatureKey key;
  std::vector<float> values;
  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
};

class PatchFeatureSet {
 public:
  explicit PatchFeatureSet(std::uint32_t feature_dim = 0) : dim_(feature_dim) {}

  std::uint32_t feature_dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<FeatureEntry>& entries() const noexcept { return entries_; }

  void add(FeatureKey key, std::vector<float> values) {
    if (values.size() != dim_) throw FormatError("feature vector length does not match B");
    for (float v : values)
      if (!std::isfinite(v)) throw FormatError("non-finite feature value");
    index_[key] = entries_.size();
    entries_.push_back({std::move(key), std::move(values)});
  }

  const std::vector<float>* find(const FeatureKey& key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &entries_[it->second].values;
  }

  bool has_kind(FeatureKind k) const {
    for (const auto& e : entries_)
      if (e.key.kind == k) return true;
    return false;
  }

  void write(std::ostream& os) const {
    os.write("PFV1", 4);
    binio::write_le<std::uint32_t>(os, dim_);
    binio::write_le<std::uint64_t>(os, entries_.size());
    for (const auto& e : entries_) {
      if (e.key.image_id.size() > 0xFFFF) throw FormatError("image_id longer than 65535 bytes");
      binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.key.image_id.size()));
      binio::write_bytes(os, e.key.image_id);
      binio::write_le<std::uint32_t>(os, e.key.instance);
      binio::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.key.kind));
      binio::write_le<std::uint32_t>(os, e.key.ordinal);
      for (float v : e.values) binio::write_f32(os, v);
    }
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open for writing: " + path);
    write(os);
  }

  static PatchFeatureSet read(std::istream& is) {
    binio::expect_magic(is, "PFV1");
    const auto dim = binio::read_le<std::uint32_t>(is, "feature_dim");
    const auto count = binio::read_le<std::uint64_t>(is, "entry count");
    if (dim == 0) throw FormatError("feature_dim must be >= 1");
    PatchFeatureSet set(dim);
    for (std::uint64_t n = 0; n < count; ++n) {
      FeatureKey key;
      const auto len = binio::read_le<std::uint16_t>(is, "image_id length");
      key.image_id = binio::read_bytes(is, len, "image_id");
      key.instance = binio::read_le<std::uint32_t>(is, "instance index");
      const auto tag = binio::read_le<std::uint8_t>(is, "kind tag");
      if (tag > 1) throw FormatError("unknown feature kind tag " + std::to_string(tag));
      key.kind = static_cast<FeatureKind>(tag);
      key.ordinal = binio::read_le<std::uint32_t>(is, "patch ordinal");
      std::vector<float> values(dim);
      for (auto& v : values) v = binio::read_f32(is, "feature values");
      set.add(std::move(key), std::move(values));
    }
    if (!binio::at_eof(is))
      throw FormatError("trailing bytes after declared entries (dimension mismatch?)");
    return set;
  }

  static PatchFeatureSet load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open feature file: " + path);
    return read(is);
  }

  friend bool operator==(const PatchFeatureSet& a, const PatchFeatureSet& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_;
  }

 private:
  std::uint32_t dim_;
  std::vector<FeatureEntry> entries_;
  std::map<FeatureKey, std::size_t> index_;
};

inline PatchFeatureSet load_patch_features(const std::string& path) {
  return PatchFeatureSet::load(path);
}

}  // namespace ctxvec
