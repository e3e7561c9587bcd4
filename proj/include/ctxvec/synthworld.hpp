#pragma once

// Synthetic corpora and scenes with planted category structure: words of the
// same category co-occur (in sentences and in scenes) with a given affinity,
// object placements obey a rule table of spatial relations, and activation
// vectors are noisy category signatures.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxvec/error.hpp"
#include "ctxvec/params.hpp"
#include "ctxvec/scenegraph.hpp"
#include "ctxvec/spatial.hpp"
#include "ctxvec/textcorpus.hpp"
#include "ctxvec/trainer.hpp"

namespace ctxvec::synth {

enum class Relation { Below, Beside, Above, Bigger };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Below: return "below";
    case Relation::Beside: return "beside";
    case Relation::Above: return "above";
    case Relation::Bigger: return "bigger";
  }
  return "?";
}

inline Relation parse_relation(const std::string& s) {
  if (s == "below") return Relation::Below;
  if (s == "beside") return Relation::Beside;
  if (s == "above") return Relation::Above;
  if (s == "bigger") return Relation::Bigger;
  throw UsageError("unknown relation '" + s + "' (below|beside|above|bigger)");
}

// Objects of context_category are <relation> objects of entity_category, i.e.
// categorical_vec(entity_box, context_box) has the relation's indicator set.
struct SpatialRule {
  std::size_t context_category = 0;
  Relation relation = Relation::Below;
  std::size_t entity_category = 0;
};

inline bool rule_holds(const SpatialRule& r, const BBox& entity, const BBox& context, double w,
                       double h) {
  const auto s = categorical_vec(entity, context, w, h);
  switch (r.relation) {
    case Relation::Below: return s[kBelow] == 1;
    case Relation::Beside: return s[kBeside] == 1;
    case Relation::Above: return s[kAbove] == 1;
    case Relation::Bigger: return s[kBigger] == 1;
  }
  return false;
}

struct WorldSpec {
  std::size_t n_categories = 4;
  std::size_t words_per_category = 10;
  std::size_t scenes = 2000;
  std::size_t objects_per_scene = 6;
  double affinity = 0.9;
  std::vector<SpatialRule> rules;
  std::size_t sentences = 2000;
  std::size_t sentence_length = 10;
  double visual_fraction = 1.0;
  std::size_t feature_dim = 64;
  std::size_t patches_per_entity = 3;
  double feature_noise = 0.3;
  int image_size = 512;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_categories < 1 || words_per_category < 1) throw ConfigError("world needs >= 1 category and word");
    if (objects_per_scene < 1 || sentence_length < 1 || feature_dim < 1 || patches_per_entity < 1)
      throw ConfigError("world counts must be >= 1");
    if (!(affinity >= 0 && affinity <= 1)) throw ConfigError("affinity must lie in [0,1]");
    if (!(visual_fraction >= 0 && visual_fraction <= 1))
      throw ConfigError("visual_fraction must lie in [0,1]");
    if (scenes > 0 && visual_fraction == 0) throw ConfigError("scenes need visual_fraction > 0");
    if (image_size < 16) throw ConfigError("image_size must be >= 16");
    for (const auto& r : rules)
      if (r.context_category >= n_categories || r.entity_category >= n_categories)
        throw ConfigError("spatial rule references an unknown category");
  }
};

struct SynthObject {
  std::size_t word = 0;
  BBox box;
};

struct SynthScene {
  std::string image_id;
  std::size_t dominant = 0;
  std::vector<SynthObject> objects;
};

struct World {
  WorldSpec spec;
  std::vector<std::string> words;
  std::vector<std::size_t> category;   // per word
  std::vector<bool> visible;           // appears in scenes
  std::vector<Sentence> sentences;
  std::vector<SynthScene> scenes;
  PatchFeatureSet features;
  TextEmbeddings<float> appearance;    // visible words only, length B
  std::size_t dropped_objects = 0;     // placements that could not satisfy the rules

  std::vector<std::size_t> words_of(std::size_t cat, bool visible_only) const {
    std::vector<std::size_t> out;
    for (std::size_t w = 0; w < words.size(); ++w)
      if (category[w] == cat && (!visible_only || visible[w])) out.push_back(w);
    return out;
  }
};

inline std::string word_name(std::size_t cat, std::size_t i) {
  return "c" + std::to_string(cat) + "w" + std::to_string(i);
}

namespace detail {

inline std::size_t other_category(std::size_t cat, std::size_t n, Rng& rng) {
  if (n == 1) return cat;
  auto o = static_cast<std::size_t>(rng.below(n - 1));
  return o >= cat ? o + 1 : o;
}

inline bool placement_ok(const World& w, const std::vector<SynthObject>& placed,
                         const SynthObject& cand) {
  const double S = w.spec.image_size;
  for (const auto& r : w.spec.rules) {
    for (const auto& p : placed) {
      const auto cp = w.category[p.word], cc = w.category[cand.word];
      if (cc == r.context_category && cp == r.entity_category && !rule_holds(r, p.box, cand.box, S, S))
        return false;
      if (cp == r.context_category && cc == r.entity_category && !rule_holds(r, cand.box, p.box, S, S))
        return false;
    }
  }
  return true;
}

}  // namespace detail

inline World generate(const WorldSpec& spec) {
  spec.validate();
  World w;
  w.spec = spec;
  const std::size_t C = spec.n_categories, K = spec.words_per_category;
  const auto n_visible = static_cast<std::size_t>(std::ceil(spec.visual_fraction * double(K)));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < K; ++i) {
      w.words.push_back(word_name(c, i));
      w.category.push_back(c);
      w.visible.push_back(i < n_visible);
    }

  // Text: one covering sentence per category, then topic sentences.
  Rng text_rng = Rng::stream(spec.seed, 1);
  if (spec.sentences > 0) {
    for (std::size_t c = 0; c < C; ++c) {
      auto ids = w.words_of(c, false);
      text_rng.shuffle(ids);
      Sentence s;
      for (auto id : ids) s.push_back(w.words[id]);
      w.sentences.push_back(std::move(s));
    }
    for (std::size_t n = 0; n < spec.sentences; ++n) {
      const auto topic = static_cast<std::size_t>(text_rng.below(C));
      Sentence s;
      for (std::size_t t = 0; t < spec.sentence_length; ++t) {
        const std::size_t cat =
            text_rng.bernoulli(spec.affinity) ? topic : detail::other_category(topic, C, text_rng);
        s.push_back(w.words[cat * K + text_rng.below(K)]);
      }
      w.sentences.push_back(std::move(s));
    }
  }

  // Scenes.
  Rng scene_rng = Rng::stream(spec.seed, 2);
  const double S = spec.image_size;
  for (std::size_t n = 0; n < spec.scenes; ++n) {
    SynthScene scene;
    scene.image_id = "img" + std::to_string(n);
    scene.dominant = static_cast<std::size_t>(scene_rng.below(C));
    for (std::size_t o = 0; o < spec.objects_per_scene; ++o) {
      const std::size_t cat = scene_rng.bernoulli(spec.affinity)
                                  ? scene.dominant
                                  : detail::other_category(scene.dominant, C, scene_rng);
      const auto pool = w.words_of(cat, true);
      SynthObject obj;
      obj.word = pool[scene_rng.below(pool.size())];
      bool placed = false;
      for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
        const double bw = std::round(scene_rng.uniform(0.05, 0.2) * S);
        const double bh = std::round(scene_rng.uniform(0.05, 0.2) * S);
        const double x = std::round(scene_rng.uniform(0, S - bw));
        const double y = std::round(scene_rng.uniform(0, S - bh));
        obj.box = BBox{x, y, bw, bh};
        placed = detail::placement_ok(w, scene.objects, obj);
      }
      if (placed) scene.objects.push_back(obj);
      else ++w.dropped_objects;
    }
    w.scenes.push_back(std::move(scene));
  }

  // Features: category signatures plus noise, clamped at 0.
  Rng feat_rng = Rng::stream(spec.seed, 3);
  const std::size_t B = spec.feature_dim;
  std::vector<std::vector<double>> signature(C, std::vector<double>(B));
  for (auto& sig : signature)
    for (auto& v : sig) v = feat_rng.uniform();
  auto noisy = [&](const std::vector<double>& base) {
    std::vector<float> out(B);
    for (std::size_t b = 0; b < B; ++b)
      out[b] = static_cast<float>(std::max(0.0, base[b] + spec.feature_noise * feat_rng.normal()));
    return out;
  };
  w.features = PatchFeatureSet(static_cast<std::uint32_t>(B));
  if (spec.scenes > 0) {
    for (const auto& scene : w.scenes) {
      const std::size_t n = scene.objects.size();
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> mean(B, 0.0);
        if (n == 1) {
          mean = signature[scene.dominant];
        } else {
          for (std::size_t j = 0; j < n; ++j)
            if (j != i)
              for (std::size_t b = 0; b < B; ++b)
                mean[b] += signature[w.category[scene.objects[j].word]][b] / double(n - 1);
        }
        w.features.add({scene.image_id, std::uint32_t(i), FeatureKind::FullMasked, 0}, noisy(mean));
        for (std::size_t p = 0; p < spec.patches_per_entity; ++p) {
          std::size_t src_cat = scene.dominant;
          if (n > 1) {
            auto j = static_cast<std::size_t>(feat_rng.below(n - 1));
            if (j >= i) ++j;
            src_cat = w.category[scene.objects[j].word];
          }
          w.features.add({scene.image_id, std::uint32_t(i), FeatureKind::Patch, std::uint32_t(p)},
                         noisy(signature[src_cat]));
        }
      }
    }
  }

  // Appearance vectors for visible words.
  std::vector<std::size_t> vis;
  for (std::size_t i = 0; i < w.words.size(); ++i)
    if (w.visible[i]) vis.push_back(i);
  w.appearance.vectors = Matrix<float>(vis.size(), B);
  for (std::size_t r = 0; r < vis.size(); ++r) {
    w.appearance.words.push_back(w.words[vis[r]]);
    auto v = noisy(signature[w.category[vis[r]]]);
    std::copy(v.begin(), v.end(), w.appearance.vectors.row(r).begin());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Files

struct WorldFiles {
  static constexpr const char* corpus = "corpus.txt";
  static constexpr const char* scenes = "scenes.jsonl";
  static constexpr const char* features = "features.pfv";
  static constexpr const char* appearance = "appearance.txt";
  static constexpr const char* categories = "categories.tsv";
  static constexpr const char* visibility = "visibility.tsv";
  static constexpr const char* rules = "rules.tsv";
  static constexpr const char* similarity = "similarity.tsv";
  static constexpr const char* concreteness = "concreteness.tsv";
  static constexpr const char* norms = "norms.tsv";
  static constexpr const char* norm_categories = "norm_categories.tsv";
};

inline std::string scene_json(const World& w, const SynthScene& s) {
  nlohmann::json j;
  j["image_id"] = s.image_id;
  j["width"] = w.spec.image_size;
  j["height"] = w.spec.image_size;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : s.objects)
    j["objects"].push_back({{"word", w.words[o.word]}, {"bbox", {o.box.x, o.box.y, o.box.w, o.box.h}}});
  return j.dump();
}

// Concreteness gold: visible words rate high, the rest low, with jitter.
inline std::vector<std::pair<std::string, double>> concreteness_gold(const World& w) {
  Rng rng = Rng::stream(w.spec.seed, 4);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < w.words.size(); ++i)
    out.emplace_back(w.words[i], w.visible[i] ? rng.uniform(4.0, 5.0) : rng.uniform(1.0, 2.0));
  return out;
}

// Similarity gold over every unordered word pair: 1 for same category, else 0.
inline std::vector<std::tuple<std::string, std::string, double>> similarity_gold(const World& w) {
  std::vector<std::tuple<std::string, std::string, double>> out;
  for (std::size_t a = 0; a < w.words.size(); ++a)
    for (std::size_t b = a + 1; b < w.words.size(); ++b)
      out.emplace_back(w.words[a], w.words[b], w.category[a] == w.category[b] ? 1.0 : 0.0);
  return out;
}

inline void write_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open(WorldFiles::corpus);
    for (const auto& s : w.sentences) {
      for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
      os << '\n';
    }
  }
  {
    auto os = open(WorldFiles::scenes);
    for (const auto& s : w.scenes)
      if (!s.objects.empty()) os << scene_json(w, s) << '\n';
  }
  {
    auto os = open(WorldFiles::features);
    w.features.write(os);
  }
  {
    auto os = open(WorldFiles::appearance);
    write_text_embeddings(os, w.appearance.words, w.appearance.vectors);
  }
  {
    auto os = open(WorldFiles::categories);
    for (std::size_t i = 0; i < w.words.size(); ++i) os << w.words[i] << '\t' << w.category[i] << '\n';
  }
  {
    auto os = open(WorldFiles::visibility);
    for (std::size_t i = 0; i < w.words.size(); ++i) os << w.words[i] << '\t' << (w.visible[i] ? 1 : 0) << '\n';
  }
  {
    auto os = open(WorldFiles::rules);
    for (const auto& r : w.spec.rules)
      os << r.context_category << '\t' << relation_name(r.relation) << '\t' << r.entity_category << '\n';
  }
  {
    auto os = open(WorldFiles::similarity);
    for (const auto& [a, b, g] : similarity_gold(w)) os << a << '\t' << b << '\t' << g << '\n';
  }
  {
    auto os = open(WorldFiles::concreteness);
    os << std::setprecision(9);
    for (const auto& [word, r] : concreteness_gold(w)) os << word << '\t' << r << '\n';
  }
  {
    // One characteristic per category ("is_c<k>", category "taxonomic") and
    // "is_visible" (category "visual").
    auto os = open(WorldFiles::norms);
    os << "entity";
    for (std::size_t c = 0; c < w.spec.n_categories; ++c) os << "\tis_c" << c;
    os << "\tis_visible\n";
    for (std::size_t i = 0; i < w.words.size(); ++i) {
      os << w.words[i];
      for (std::size_t c = 0; c < w.spec.n_categories; ++c) os << '\t' << (w.category[i] == c ? 1 : 0);
      os << '\t' << (w.visible[i] ? 1 : 0) << '\n';
    }
    auto cs = open(WorldFiles::norm_categories);
    for (std::size_t c = 0; c < w.spec.n_categories; ++c) cs << "is_c" << c << "\ttaxonomic\n";
    cs << "is_visible\tvisual\n";
  }
}

// ---------------------------------------------------------------------------
// In-memory conversion to training inputs, equivalent to loading the files.

struct TrainInputs {
  Vocabulary vocab;
  TrainData data;
};

inline TrainInputs to_train_inputs(const World& w, bool with_text = true) {
  TrainInputs in;
  if (with_text && !w.sentences.empty()) {
    in.vocab = build_vocab(w.sentences, 1);
    for (const auto& s : w.sentences) in.data.sentences.push_back(encode(in.vocab, s));
  } else {
    std::vector<std::string> tokens;
    for (const auto& s : w.scenes)
      for (const auto& o : s.objects) tokens.push_back(w.words[o.word]);
    in.vocab = build_vocab(tokens, 1);
  }
  for (const auto& s : w.scenes) {
    if (s.objects.empty()) continue;
    SceneRecord r;
    r.image_id = s.image_id;
    r.width = r.height = w.spec.image_size;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      auto id = in.vocab.find(w.words[s.objects[i].word]);
      if (!id) throw Error("synthetic scene word missing from vocabulary");
      r.instances.push_back({*id, s.objects[i].box, std::uint32_t(i)});
    }
    in.data.scenes.push_back(std::move(r));
  }
  in.data.features = w.features;
  in.data.appearance = AppearanceTable::from_embeddings(w.appearance, in.vocab);
  in.data.word_counts = in.vocab.counts();
  return in;
}

// Categories of each vocabulary word, -1 when the word is not a world word.
inline std::vector<int> vocab_categories(const World& w, const Vocabulary& vocab) {
  std::vector<int> out(vocab.size(), -1);
  for (std::size_t i = 0; i < w.words.size(); ++i)
    if (auto id = vocab.find(w.words[i])) out[*id] = int(w.category[i]);
  return out;
}

}  // namespace ctxvec::synth
