#pragma once

// SGD over L = L_text + alpha * Σ_k w_k L_k, interleaving text and visual
// mini-batches. Deterministic mode applies one batch at a time from a fixed
// snapshot; parallel mode lets workers update rows without locks.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxvec/error.hpp"
#include "ctxvec/log.hpp"
#include "ctxvec/model.hpp"
#include "ctxvec/objectives.hpp"
#include "ctxvec/params.hpp"
#include "ctxvec/scenegraph.hpp"
#include "ctxvec/spatial.hpp"
#include "ctxvec/textcorpus.hpp"

namespace ctxvec {

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  double alpha = 0.2;
  double lambda = 0.1;  // L2 weight decay on N
  double mu = 0.1;      // L2 weight decay on M_concat / M_bilinear
  double gamma = 0.5;   // margin of baseline L
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::string model = "T";
  std::size_t min_count = 1;
  std::size_t threads = 0;  // parallel mode; 0 = hardware concurrency
  double subsample = 0.0;   // frequent-word subsampling threshold, 0 = off
  bool check_finite = false;

  void validate() const {
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    for (auto [name, v] : {std::pair<const char*, double>{"learning_rate", learning_rate},
                           {"alpha", alpha},
                           {"lambda", lambda},
                           {"mu", mu},
                           {"gamma", gamma},
                           {"subsample", subsample}})
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError(std::string(name) + " must be finite and >= 0");
  }

  void set(const std::string& key, const std::string& value) {
    auto as_size = [&]() -> std::size_t {
      try {
        std::size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size() || v < 0) throw std::invalid_argument(value);
        return static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" +
                          value + "'");
      }
    };
    auto as_double = [&]() {
      try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
      }
    };
    auto as_bool = [&]() {
      if (value == "true" || value == "1" || value == "yes") return true;
      if (value == "false" || value == "0" || value == "no") return false;
      throw ConfigError("config key '" + key + "' expects true/false, got '" + value + "'");
    };
    if (key == "dim" || key == "d") dim = as_size();
    else if (key == "window") window = as_size();
    else if (key == "negatives" || key == "k") negatives = as_size();
    else if (key == "learning_rate" || key == "lr") learning_rate = as_double();
    else if (key == "batch_size") batch_size = as_size();
    else if (key == "alpha") alpha = as_double();
    else if (key == "lambda") lambda = as_double();
    else if (key == "mu") mu = as_double();
    else if (key == "gamma") gamma = as_double();
    else if (key == "epochs") epochs = as_size();
    else if (key == "seed") seed = as_size();
    else if (key == "deterministic") deterministic = as_bool();
    else if (key == "model") model = value;
    else if (key == "min_count") min_count = as_size();
    else if (key == "threads") threads = as_size();
    else if (key == "subsample") subsample = as_double();
    else if (key == "check_finite") check_finite = as_bool();
    else throw ConfigError("unknown config key '" + key + "'");
  }

  // Flat key=value dump; parse(dump()) reproduces the config.
  std::string dump() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "dim=" << dim << '\n'
       << "window=" << window << '\n'
       << "negatives=" << negatives << '\n'
       << "learning_rate=" << learning_rate << '\n'
       << "batch_size=" << batch_size << '\n'
       << "alpha=" << alpha << '\n'
       << "lambda=" << lambda << '\n'
       << "mu=" << mu << '\n'
       << "gamma=" << gamma << '\n'
       << "epochs=" << epochs << '\n'
       << "seed=" << seed << '\n'
       << "deterministic=" << (deterministic ? "true" : "false") << '\n'
       << "model=" << model << '\n'
       << "min_count=" << min_count << '\n'
       << "threads=" << threads << '\n'
       << "subsample=" << subsample << '\n'
       << "check_finite=" << (check_finite ? "true" : "false") << '\n';
    return os.str();
  }

  // Applies "key=value" lines; '#' starts a comment.
  void apply(std::istream& is) {
    std::string line;
    while (std::getline(is, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  static TrainConfig parse(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    c.apply(is);
    return c;
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    TrainConfig c;
    c.apply(is);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Data

// Fixed per-word visual appearance vectors (length B) used by baseline L.
struct AppearanceTable {
  std::size_t dim = 0;
  std::vector<std::vector<float>> by_word;  // indexed by WordId, empty when absent

  bool has(WordId w) const { return w < by_word.size() && !by_word[w].empty(); }
  std::size_t count() const {
    return std::count_if(by_word.begin(), by_word.end(), [](const auto& v) { return !v.empty(); });
  }

  static AppearanceTable from_embeddings(const TextEmbeddings<float>& emb, const Vocabulary& vocab) {
    AppearanceTable t;
    t.dim = emb.vectors.cols();
    t.by_word.resize(vocab.size());
    for (std::size_t r = 0; r < emb.words.size(); ++r) {
      auto id = vocab.find(emb.words[r]);
      if (!id) continue;
      auto row = emb.vectors.row(r);
      t.by_word[*id].assign(row.begin(), row.end());
    }
    return t;
  }
};

struct TrainData {
  std::vector<std::vector<WordId>> sentences;
  std::vector<SceneRecord> scenes;
  std::optional<PatchFeatureSet> features;
  std::optional<AppearanceTable> appearance;
  std::vector<std::uint64_t> word_counts;  // unigram counts for text negatives
};

// Sorted distinct word ids that occur as scene entities; rows of V.
inline std::vector<WordId> scene_object_words(const std::vector<SceneRecord>& scenes) {
  std::vector<WordId> ids;
  for (const auto& s : scenes)
    for (const auto& in : s.instances) ids.push_back(in.word);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Interleaving

enum class Stream : std::uint8_t { Text, Visual };

struct BatchSlot {
  Stream stream;
  std::size_t index;  // batch index within its stream
  friend bool operator==(const BatchSlot&, const BatchSlot&) = default;
};

inline std::size_t batch_count(std::size_t items, std::size_t batch_size) {
  return (items + batch_size - 1) / batch_size;
}

// Proportional interleaving: batch i of a stream with n batches is placed at
// time (i + 1/2) / n; the streams are merged by that time, text first on ties.
// Both streams therefore finish the epoch together.
inline std::vector<BatchSlot> schedule(std::size_t text_pairs, std::size_t visual_pairs,
                                       std::size_t batch_size) {
  const std::size_t nt = batch_count(text_pairs, batch_size);
  const std::size_t nv = batch_count(visual_pairs, batch_size);
  std::vector<BatchSlot> out;
  out.reserve(nt + nv);
  std::size_t i = 0, j = 0;
  while (i < nt || j < nv) {
    bool take_text;
    if (i == nt) take_text = false;
    else if (j == nv) take_text = true;
    else take_text = (2 * i + 1) * nv <= (2 * j + 1) * nt;
    if (take_text) out.push_back({Stream::Text, i++});
    else out.push_back({Stream::Visual, j++});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer step

struct DecayRates {
  double N = 0, M_concat = 0, M_bilinear = 0;
};

// x <- (1 - lr*decay) x - lr * grad for every touched row / dense matrix.
// Decay is applied to the listed dense matrices even when their gradient is
// absent from the batch.
template <typename Real>
void apply_step(BasicParameterStore<Real>& store, const GradientBatch<Real>& g, double lr,
                const DecayRates& decay = {}) {
  const Real rate = static_cast<Real>(lr);
  auto sparse = [&](Matrix<Real>& m, const auto& rows) {
    for (const auto& [r, grad] : rows) {
      auto dst = m.row(r);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= rate * grad[i];
    }
  };
  sparse(store.T, g.T);
  sparse(store.U, g.U);
  sparse(store.V, g.V);
  auto dense = [&](Matrix<Real>& m, const Matrix<Real>& grad, double d) {
    if (d > 0) {
      const Real factor = Real(1) - static_cast<Real>(lr * d);
      for (auto& v : m.flat()) v *= factor;
    }
    if (!grad.empty()) {
      auto src = grad.flat();
      auto dst = m.flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= rate * src[i];
    }
  };
  dense(store.N, g.N, decay.N);
  dense(store.M_concat, g.M_concat, decay.M_concat);
  dense(store.M_bilinear, g.M_bilinear, decay.M_bilinear);
}

// ---------------------------------------------------------------------------
// Report

struct EpochStats {
  std::map<std::string, double> mean_loss;  // keyed by term label ("T", "O", "L", ...)
  std::map<std::string, std::size_t> examples;
};

struct TrainReport {
  std::string model;
  std::vector<EpochStats> epochs;
  double wall_seconds = 0;
  std::size_t text_batches = 0;
  std::size_t visual_batches = 0;

  double final_loss(const std::string& term) const {
    if (epochs.empty()) throw Error("report has no epochs");
    auto it = epochs.back().mean_loss.find(term);
    if (it == epochs.back().mean_loss.end()) throw Error("no loss recorded for term " + term);
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model;
    j["wall_seconds"] = wall_seconds;
    j["updates"] = {{"text_batches", text_batches}, {"visual_batches", visual_batches}};
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs) j["epochs"].push_back({{"mean_loss", e.mean_loss}, {"examples", e.examples}});
    return j;
  }
};

using EpochCallback = std::function<void(std::size_t epoch, const ParameterStore& store)>;

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline constexpr std::uint32_t kNone = 0xFFFFFFFFu;

// A unit of visual work: term index into the visual kinds (or the L term), the
// scene and entity instance, and the context (instance for O, patch ordinal for
// P). For L attached to text, scene is kNone and `entity` is a word id.
struct VisualJob {
  std::uint32_t term;
  std::uint32_t scene;
  std::uint32_t entity;
  std::uint32_t context;
};

struct SceneFeatures {
  std::vector<std::vector<std::vector<std::span<const float>>>> patches;  // [scene][instance]
  std::vector<std::vector<std::span<const float>>> masked;                // [scene][instance]
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const JointModel& model, const TrainData& data,
          ParameterStore& store)
      : cfg_(cfg), model_(model), data_(data), store_(store) {
    cfg_.validate();
    validate();
    prepare();
  }

  TrainReport run(const EpochCallback& on_epoch) {
    TrainReport report;
    report.model = format_joint(model_);
    const auto t0 = std::chrono::steady_clock::now();
    Rng text_rng = Rng::stream(cfg_.seed, 1);
    Rng visual_rng = Rng::stream(cfg_.seed, 2);
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<TextPair> pairs;
      if (model_.text) {
        const Subsampling sub{cfg_.subsample};
        for (const auto& s : data_.sentences) {
          if (sub.threshold > 0) {
            std::vector<WordId> kept;
            for (auto w : s)
              if (keep_word(w, sub, text_rng)) kept.push_back(w);
            for_each_pair(std::span<const WordId>(kept), cfg_.window, text_rng,
                          [&](const TextPair& p) { pairs.push_back(p); });
          } else {
            for_each_pair(std::span<const WordId>(s), cfg_.window, text_rng,
                          [&](const TextPair& p) { pairs.push_back(p); });
          }
        }
      }
      std::vector<VisualJob> jobs;
      if (visual_weight_ > 0) jobs = visual_jobs(visual_rng);
      auto slots = schedule(pairs.size(), jobs.size(), cfg_.batch_size);

      Accumulator acc(n_terms());
      if (cfg_.deterministic) {
        GradientBatch<float> grads;
        for (const auto& slot : slots) {
          grads.clear();
          process(slot, pairs, jobs, text_rng, visual_rng, grads, acc);
          apply_step(store_, grads, cfg_.learning_rate,
                     slot.stream == Stream::Visual ? decay_ : DecayRates{});
          if (cfg_.check_finite && !store_.all_finite())
            throw NumericError("non-finite parameter after step in epoch " + std::to_string(epoch));
        }
      } else {
        run_parallel(slots, pairs, jobs, epoch, acc);
      }
      for (const auto& slot : slots)
        (slot.stream == Stream::Text ? report.text_batches : report.visual_batches)++;

      EpochStats stats;
      for (std::size_t t = 0; t < n_terms(); ++t) {
        if (acc.count[t] == 0) continue;
        stats.mean_loss[labels_[t]] = acc.loss[t] / double(acc.count[t]);
        stats.examples[labels_[t]] = acc.count[t];
      }
      log::info("epoch done", "epoch", epoch, "text_pairs", pairs.size(), "visual_pairs",
                jobs.size());
      report.epochs.push_back(std::move(stats));
      if (on_epoch) on_epoch(epoch, store_);
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }

 private:
  struct Accumulator {
    explicit Accumulator(std::size_t n) : loss(n, 0.0), count(n, 0) {}
    std::vector<double> loss;
    std::vector<std::size_t> count;
    void merge(const Accumulator& o) {
      for (std::size_t i = 0; i < loss.size(); ++i) {
        loss[i] += o.loss[i];
        count[i] += o.count[i];
      }
    }
  };

  // Term indices: [0, visual.size()) visual kinds, then L, then text.
  std::size_t l_term() const { return model_.visual.size(); }
  std::size_t text_term() const { return model_.visual.size() + 1; }
  std::size_t n_terms() const { return model_.visual.size() + 2; }

  bool keep_word(WordId w, const Subsampling& sub, Rng& rng) const {
    const double f = double(data_.word_counts[w]) / double(total_count_);
    const double p = (std::sqrt(f / sub.threshold) + 1.0) * sub.threshold / f;
    return p >= 1.0 || rng.uniform() < p;
  }

  void validate() const {
    if (!model_.text && !model_.has_visual_terms()) throw ConfigError("model has no loss term");
    if (store_.dim() != cfg_.dim)
      throw ConfigError("store dimension " + std::to_string(store_.dim()) +
                        " does not match config dim " + std::to_string(cfg_.dim));
    if (model_.text && data_.sentences.empty())
      throw ConfigError("model " + format_joint(model_) + " needs a text corpus");
    if (data_.word_counts.size() != store_.vocab_size())
      throw ConfigError("word counts do not match the store vocabulary");
    for (const auto& kind : model_.visual) {
      if (data_.scenes.empty())
        throw ConfigError("visual term " + format_kind(kind) + " needs scenes");
      if (kind.spatial) {
        for (const auto& s : data_.scenes)
          if (!s.has_boxes())
            throw ConfigError("spatial model " + format_kind(kind) + " needs bounding boxes (scene " +
                              s.image_id + " has none)");
      }
      if (kind.base == ContextBase::Objects) {
        for (const auto& s : data_.scenes)
          for (const auto& in : s.instances)
            if (store_.object_row(in.word) < 0)
              throw ConfigError("scene word '" + store_.words()[in.word] +
                                "' has no row in the object table");
      } else {
        const auto need = kind.base == ContextBase::Patch ? FeatureKind::Patch : FeatureKind::FullMasked;
        if (!data_.features || !data_.features->has_kind(need))
          throw ConfigError("visual term " + format_kind(kind) + " needs " +
                            (need == FeatureKind::Patch ? "patch" : "full_masked") + " features");
        if (data_.features->feature_dim() != store_.feature_dim())
          throw ConfigError("feature dimension does not match the store's B");
      }
    }
    if (model_.baseline_l) {
      if (!data_.appearance || data_.appearance->count() < 2)
        throw ConfigError("baseline L needs visual vectors for at least two words");
      if (!model_.text && data_.scenes.empty())
        throw ConfigError("baseline L without text needs scenes to draw entities from");
    }
    for (const auto& s : data_.sentences)
      for (auto w : s)
        if (w >= store_.vocab_size()) throw ConfigError("sentence references an unknown word id");
  }

  void prepare() {
    labels_.clear();
    for (const auto& k : model_.visual) labels_.push_back(format_kind(k));
    labels_.push_back("L");
    labels_.push_back("T");

    visual_weight_ = model_.text ? cfg_.alpha : 1.0;
    if (model_.has_visual_terms() && visual_weight_ == 0.0)
      log::info("visual terms carry zero weight and are skipped", "alpha", cfg_.alpha);

    for (auto c : data_.word_counts) total_count_ += c;
    if (model_.text) tables_.words.emplace(std::span<const std::uint64_t>(data_.word_counts));

    bool need_objects = false, need_patch = false, need_masked = false;
    for (const auto& k : model_.visual) {
      need_objects |= k.base == ContextBase::Objects;
      need_patch |= k.base == ContextBase::Patch;
      need_masked |= k.base == ContextBase::FullMasked;
      if (k.uses_projection()) decay_.N = cfg_.lambda;
      if (k.spatial && k.spatial->fusion == Fusion::Concat) decay_.M_concat = cfg_.mu;
      if (k.spatial && k.spatial->fusion == Fusion::Bilinear) decay_.M_bilinear = cfg_.mu;
    }
    if (need_objects) {
      std::vector<std::uint64_t> occ(store_.object_count(), 0);
      for (const auto& s : data_.scenes)
        for (const auto& in : s.instances) ++occ[std::size_t(store_.object_row(in.word))];
      tables_.objects.emplace(std::span<const std::uint64_t>(occ));
      occurrences_.assign(store_.object_count(), {});
      for (std::uint32_t si = 0; si < data_.scenes.size(); ++si)
        for (std::uint32_t ii = 0; ii < data_.scenes[si].instances.size(); ++ii)
          occurrences_[std::size_t(store_.object_row(data_.scenes[si].instances[ii].word))].push_back(
              {si, ii});
    }
    if (need_patch || need_masked) index_features();
    if (model_.baseline_l) {
      projection_ = VisualProjection(store_.dim(), data_.appearance->dim, cfg_.seed);
      for (WordId w = 0; w < data_.appearance->by_word.size(); ++w)
        if (data_.appearance->has(w)) appearance_words_.push_back(w);
    }
  }

  void index_features() {
    std::unordered_map<std::string, std::size_t> scene_of;
    for (std::size_t i = 0; i < data_.scenes.size(); ++i) scene_of.emplace(data_.scenes[i].image_id, i);
    features_.patches.resize(data_.scenes.size());
    features_.masked.resize(data_.scenes.size());
    for (std::size_t i = 0; i < data_.scenes.size(); ++i) {
      features_.patches[i].resize(data_.scenes[i].instances.size());
      features_.masked[i].resize(data_.scenes[i].instances.size());
    }
    std::vector<std::unordered_map<std::uint32_t, std::size_t>> local(data_.scenes.size());
    for (std::size_t i = 0; i < data_.scenes.size(); ++i)
      for (std::size_t k = 0; k < data_.scenes[i].instances.size(); ++k)
        local[i].emplace(data_.scenes[i].instances[k].source_index, k);
    std::size_t unmatched = 0;
    for (const auto& e : data_.features->entries()) {
      auto it = scene_of.find(e.key.image_id);
      if (it == scene_of.end()) {
        ++unmatched;
        continue;
      }
      auto inst = local[it->second].find(e.key.instance);
      if (inst == local[it->second].end()) {
        ++unmatched;
        continue;
      }
      std::span<const float> v(e.values);
      if (e.key.kind == FeatureKind::Patch) {
        features_.patches[it->second][inst->second].push_back(v);
        tables_.patches.push_back({it->second, v});
      } else {
        features_.masked[it->second][inst->second] = v;
        tables_.masked.push_back({it->second, v});
      }
    }
    if (unmatched > 0) log::warn("feature entries without a matching scene instance", "count", unmatched);
  }

  std::vector<VisualJob> visual_jobs(Rng& rng) const {
    std::vector<VisualJob> jobs;
    for (std::uint32_t t = 0; t < model_.visual.size(); ++t) {
      const auto& kind = model_.visual[t];
      for (std::uint32_t s = 0; s < data_.scenes.size(); ++s) {
        const auto n = static_cast<std::uint32_t>(data_.scenes[s].instances.size());
        for (std::uint32_t i = 0; i < n; ++i) {
          switch (kind.base) {
            case ContextBase::Objects:
              for (std::uint32_t j = 0; j < n; ++j)
                if (j != i) jobs.push_back({t, s, i, j});
              break;
            case ContextBase::Patch: {
              const auto& p = features_.patches[s][i];
              if (!p.empty()) jobs.push_back({t, s, i, std::uint32_t(rng.below(p.size()))});
              break;
            }
            case ContextBase::FullMasked:
              if (!features_.masked[s][i].empty()) jobs.push_back({t, s, i, 0});
              break;
          }
        }
      }
    }
    if (model_.baseline_l) {
      const auto lt = static_cast<std::uint32_t>(l_term());
      if (model_.text) {
        for (const auto& sent : data_.sentences)
          for (auto w : sent)
            if (data_.appearance->has(w)) jobs.push_back({lt, kNone, w, 0});
      } else {
        for (std::uint32_t s = 0; s < data_.scenes.size(); ++s)
          for (std::uint32_t i = 0; i < data_.scenes[s].instances.size(); ++i)
            if (data_.appearance->has(data_.scenes[s].instances[i].word))
              jobs.push_back({lt, s, i, 0});
      }
    }
    rng.shuffle(jobs);
    return jobs;
  }

  void process(const BatchSlot& slot, const std::vector<TextPair>& pairs,
               const std::vector<VisualJob>& jobs, Rng& text_rng, Rng& visual_rng,
               GradientBatch<float>& grads, Accumulator& acc) const {
    const std::size_t begin = slot.index * cfg_.batch_size;
    if (slot.stream == Stream::Text) {
      const std::size_t end = std::min(pairs.size(), begin + cfg_.batch_size);
      for (std::size_t p = begin; p < end; ++p) {
        auto negs = sample_text_negatives(cfg_.negatives, text_rng, *tables_.words, pairs[p].context);
        acc.loss[text_term()] +=
            text_loss_grad(pairs[p], std::span<const WordId>(negs), store_, grads, 1.0f);
        ++acc.count[text_term()];
      }
    } else {
      const std::size_t end = std::min(jobs.size(), begin + cfg_.batch_size);
      for (std::size_t p = begin; p < end; ++p) {
        acc.loss[jobs[p].term] += visual_job(jobs[p], visual_rng, grads);
        ++acc.count[jobs[p].term];
      }
    }
  }

  double visual_job(const VisualJob& job, Rng& rng, GradientBatch<float>& grads) const {
    const auto w = static_cast<float>(visual_weight_);
    if (job.term == l_term()) {
      const WordId entity =
          job.scene == kNone ? job.entity : data_.scenes[job.scene].instances[job.entity].word;
      std::vector<std::span<const float>> negs;
      negs.reserve(cfg_.negatives);
      for (std::size_t n = 0; n < cfg_.negatives; ++n) {
        WordId other = appearance_words_[rng.below(appearance_words_.size())];
        for (int tries = 0; other == entity && tries < 16; ++tries)
          other = appearance_words_[rng.below(appearance_words_.size())];
        negs.emplace_back(data_.appearance->by_word[other]);
      }
      return baselineL_loss_grad(entity, std::span<const float>(data_.appearance->by_word[entity]),
                                 negs, store_, cfg_.gamma, projection_, grads, w);
    }
    const auto& kind = model_.visual[job.term];
    const auto& scene = data_.scenes[job.scene];
    const auto& ent = scene.instances[job.entity];
    VisualSample<float> sample;
    sample.entity = ent.word;
    std::optional<BBox> ctx_box;
    switch (kind.base) {
      case ContextBase::Objects: {
        const auto& ctx = scene.instances[job.context];
        sample.positive = ContextInput<float>::object(store_.object_row(ctx.word));
        ctx_box = ctx.bbox;
        break;
      }
      case ContextBase::Patch:
        sample.positive =
            ContextInput<float>::feature(features_.patches[job.scene][job.entity][job.context]);
        ctx_box = scene.image_box();
        break;
      case ContextBase::FullMasked:
        sample.positive = ContextInput<float>::feature(features_.masked[job.scene][job.entity]);
        ctx_box = scene.image_box();
        break;
    }
    if (kind.spatial)
      sample.spatial = spatial_vec(kind.spatial->features, *ent.bbox, *ctx_box, scene.width,
                                   scene.height);
    sample.negatives = sample_negatives(kind, cfg_.negatives, rng, tables_,
                                        kind.base == ContextBase::Objects
                                            ? std::optional<std::int32_t>(sample.positive.object_row)
                                            : std::nullopt,
                                        std::optional<std::size_t>(job.scene));
    // A negative object gets the geometry of one of its real occurrences,
    // rescaled into this image, so planted layouts separate it from positives.
    if (kind.spatial && kind.base == ContextBase::Objects)
      for (const auto& n : sample.negatives) {
        const auto& occ = occurrences_[std::size_t(n.object_row)];
        const auto [si, ii] = occ[rng.below(occ.size())];
        const auto& other = data_.scenes[si];
        BBox b = *other.instances[ii].bbox;
        const double sx = double(scene.width) / other.width, sy = double(scene.height) / other.height;
        b = {b.x * sx, b.y * sy, b.w * sx, b.h * sy};
        sample.negative_spatial.push_back(
            spatial_vec(kind.spatial->features, *ent.bbox, b, scene.width, scene.height));
      }
    return visual_loss_grad(kind, sample, store_, grads, w);
  }

  void run_parallel(const std::vector<BatchSlot>& slots, const std::vector<TextPair>& pairs,
                    const std::vector<VisualJob>& jobs, std::size_t epoch, Accumulator& acc) {
    std::size_t n = cfg_.threads ? cfg_.threads : std::max(1u, std::thread::hardware_concurrency());
    n = std::max<std::size_t>(1, std::min(n, slots.size()));
    std::vector<Accumulator> local(n, Accumulator(n_terms()));
    std::vector<std::thread> workers;
    std::atomic<bool> failed{false};
    for (std::size_t t = 0; t < n; ++t) {
      workers.emplace_back([&, t] {
        Rng text_rng = Rng::stream(cfg_.seed, 1000 + epoch * 2 * n + 2 * t);
        Rng visual_rng = Rng::stream(cfg_.seed, 1001 + epoch * 2 * n + 2 * t);
        GradientBatch<float> grads;
        for (std::size_t b = t; b < slots.size(); b += n) {
          grads.clear();
          process(slots[b], pairs, jobs, text_rng, visual_rng, grads, local[t]);
          // Lock-free: concurrent workers may interleave row updates.
          apply_step(store_, grads, cfg_.learning_rate,
                     slots[b].stream == Stream::Visual ? decay_ : DecayRates{});
          if (cfg_.check_finite && !grads.all_finite()) failed = true;
        }
      });
    }
    for (auto& w : workers) w.join();
    for (const auto& l : local) acc.merge(l);
    if (failed) throw NumericError("non-finite gradient in parallel epoch " + std::to_string(epoch));
  }

  TrainConfig cfg_;
  const JointModel& model_;
  const TrainData& data_;
  ParameterStore& store_;

  std::vector<std::string> labels_;
  double visual_weight_ = 0;
  std::uint64_t total_count_ = 0;
  DecayRates decay_;
  NegativeTables<float> tables_;
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> occurrences_;  // per V row
  SceneFeatures features_;
  VisualProjection projection_;
  std::vector<WordId> appearance_words_;
};

}  // namespace detail

// Trains `store` in place on one joint model and returns the per-epoch report.
// Incompatibilities between model and data raise ConfigError before any update.
inline TrainReport train(const TrainConfig& cfg, const JointModel& model, const TrainData& data,
                         ParameterStore& store, const EpochCallback& on_epoch = {}) {
  detail::Trainer trainer(cfg, model, data, store);
  return trainer.run(on_epoch);
}

inline TrainReport train(const TrainConfig& cfg, const TrainData& data, ParameterStore& store,
                         const EpochCallback& on_epoch = {}) {
  const auto spec = parse_model(cfg.model);
  if (spec.sequential())
    throw ConfigError("sequential model " + cfg.model + " is built from separately trained parts");
  return train(cfg, spec.joint(), data, store, on_epoch);
}

// Mean cos(t_e, P v_e) over words that have an appearance vector.
inline double mean_appearance_cosine(const ParameterStore& store, const AppearanceTable& table,
                                     const VisualProjection& projection) {
  double sum = 0;
  std::size_t n = 0;
  for (WordId w = 0; w < table.by_word.size(); ++w) {
    if (!table.has(w)) continue;
    auto v = projection.apply(std::span<const float>(table.by_word[w]));
    sum += cosine(store.T.row(w), std::span<const double>(v));
    ++n;
  }
  return n ? sum / double(n) : 0.0;
}

}  // namespace ctxvec
