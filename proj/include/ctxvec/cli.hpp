#pragma once

// Command-line front end. run() returns the process exit code: 0 on success,
// 1 on usage or configuration errors, 2 on data errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxvec/error.hpp"
#include "ctxvec/evalsuite.hpp"
#include "ctxvec/log.hpp"
#include "ctxvec/model.hpp"
#include "ctxvec/params.hpp"
#include "ctxvec/scenegraph.hpp"
#include "ctxvec/synthworld.hpp"
#include "ctxvec/textcorpus.hpp"
#include "ctxvec/trainer.hpp"

namespace ctxvec::cli {

namespace detail {

namespace fs = std::filesystem;

inline bool same_file(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return false;
  std::error_code ec;
  return fs::weakly_canonical(a, ec) == fs::weakly_canonical(b, ec);
}

// Refuses to write over any of the inputs.
inline void check_outputs(const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs)
    for (const auto& i : inputs)
      if (same_file(i, o)) throw UsageError("output path '" + o + "' is also an input");
}

inline void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
  out << j.dump(2) << '\n';
  if (!path.empty()) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write report: " + path);
    os << j.dump(2) << '\n';
  }
}

struct TrainArgs {
  std::string model;
  std::string corpus, scenes, features, visual_vectors, config, out, init_from, report, pretrained;
  std::string init = "uniform";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, dim, threads, min_count;
  std::optional<double> alpha;
  bool deterministic = false, parallel = false;
};

struct Loaded {
  Vocabulary vocab;
  TrainData data;
  std::size_t feature_dim = 1;
};

inline Loaded load_inputs(const TrainArgs& a, const TrainConfig& cfg) {
  Loaded L;
  std::vector<Sentence> corpus;
  if (!a.corpus.empty()) {
    corpus = read_corpus(a.corpus);
    L.vocab = build_vocab(corpus, cfg.min_count);
  } else if (!a.scenes.empty()) {
    L.vocab = build_vocab(scan_scene_words(a.scenes), cfg.min_count);
  } else {
    throw UsageError("train needs --corpus and/or --scenes");
  }
  for (const auto& s : corpus) {
    auto ids = encode(L.vocab, s);
    if (!ids.empty()) L.data.sentences.push_back(std::move(ids));
  }
  if (!a.scenes.empty()) {
    SceneLoadStats stats;
    L.data.scenes = load_scenes(a.scenes, L.vocab, &stats);
    log::info("scenes loaded", "scenes", stats.scenes, "dropped_instances", stats.dropped_instances);
  }
  if (!a.features.empty()) {
    L.data.features = load_patch_features(a.features);
    L.feature_dim = L.data.features->feature_dim();
  }
  if (!a.visual_vectors.empty()) {
    auto emb = load_text_embeddings<float>(a.visual_vectors);
    L.data.appearance = AppearanceTable::from_embeddings(emb, L.vocab);
    if (a.features.empty()) L.feature_dim = L.data.appearance->dim;
  }
  L.data.word_counts = L.vocab.counts();
  return L;
}

inline ParameterStore fresh_store(const TrainArgs& a, const TrainConfig& cfg, const Loaded& L) {
  InitSpec spec;
  spec.seed = cfg.seed;
  if (a.init == "uniform") spec.mode = InitMode::UniformScaled;
  else if (a.init == "zeros_context") spec.mode = InitMode::ZerosContext;
  else if (a.init == "pretrained") spec.mode = InitMode::FromPretrained;
  else throw UsageError("--init must be uniform, zeros_context or pretrained");
  if (spec.mode == InitMode::FromPretrained) {
    if (a.pretrained.empty()) throw UsageError("--init pretrained needs --pretrained");
    spec.pretrained_path = a.pretrained;
  }
  auto store = init_store<float>(L.vocab, scene_object_words(L.data.scenes), cfg.dim, L.feature_dim, spec);
  if (!a.init_from.empty()) {
    // Warm start: T and U rows copied by word from a snapshot store.
    auto snap = load_store<float>(a.init_from);
    if (snap.dim() != cfg.dim)
      throw InitError("snapshot dimension " + std::to_string(snap.dim()) + " does not match dim " +
                      std::to_string(cfg.dim));
    std::size_t copied = 0;
    for (std::size_t w = 0; w < snap.vocab_size(); ++w) {
      auto id = L.vocab.find(snap.words()[w]);
      if (!id) continue;
      std::copy(snap.T.row(w).begin(), snap.T.row(w).end(), store.T.row(*id).begin());
      std::copy(snap.U.row(w).begin(), snap.U.row(w).end(), store.U.row(*id).begin());
      ++copied;
    }
    if (copied < store.vocab_size())
      log::warn("snapshot lacks some words; they keep their fresh initialization", "missing",
                store.vocab_size() - copied);
  }
  return store;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::load(a.config);
  if (!a.model.empty()) cfg.model = a.model;
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.dim) cfg.dim = *a.dim;
  if (a.alpha) cfg.alpha = *a.alpha;
  if (a.threads) cfg.threads = *a.threads;
  if (a.min_count) cfg.min_count = *a.min_count;
  if (a.deterministic) cfg.deterministic = true;
  if (a.parallel) cfg.deterministic = false;
  cfg.validate();
  if (a.out.empty()) throw UsageError("train needs --out");
  check_outputs({a.corpus, a.scenes, a.features, a.visual_vectors, a.config, a.init_from, a.pretrained},
                {a.out, a.report});

  const auto spec = parse_model(cfg.model);
  const auto L = load_inputs(a, cfg);
  nlohmann::json report;
  report["config"] = cfg.dump();
  if (!spec.sequential()) {
    auto store = fresh_store(a, cfg, L);
    auto r = train(cfg, spec.joint(), L.data, store);
    save_store(store, a.out);
    report["model"] = format_model(spec);
    report["training"] = r.to_json();
  } else {
    // Parts trained independently, merged by concatenation and PCA to dim.
    std::vector<Embeddings> parts;
    report["model"] = format_model(spec);
    report["parts"] = nlohmann::json::array();
    std::optional<std::size_t> text_part;
    for (std::size_t p = 0; p < spec.parts.size(); ++p) {
      const auto& joint = spec.parts[p];
      auto store = fresh_store(a, cfg, L);
      auto r = train(cfg, joint, L.data, store);
      report["parts"].push_back(r.to_json());
      auto emb = Embeddings::from_store(store);
      if (joint.text) {
        if (!text_part) text_part = p;
      } else {
        // Words never seen in a scene carry no visual information.
        std::vector<std::string> words;
        std::vector<std::size_t> rows;
        std::set<WordId> seen;
        for (const auto& s : L.data.scenes)
          for (const auto& in : s.instances) seen.insert(in.word);
        for (auto w : seen) {
          words.push_back(L.vocab.word(w));
          rows.push_back(w);
        }
        Matrix<double> m(rows.size(), emb.dim());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          auto src = emb.row(rows[i]);
          std::copy(src.begin(), src.end(), m.row(i).begin());
        }
        emb = Embeddings(std::move(words), std::move(m));
      }
      parts.push_back(std::move(emb));
    }
    const std::size_t primary = text_part.value_or(0);
    const auto merged = sequential_baseline(parts[primary], parts[1 - primary], cfg.dim);
    std::ofstream os(a.out);
    if (!os) throw Error("cannot write " + a.out);
    write_text_embeddings(os, merged.words(), merged.vectors());
  }
  if (!a.report.empty()) {
    std::ofstream os(a.report);
    if (!os) throw Error("cannot write report: " + a.report);
    os << report.dump(2) << '\n';
  }
  log::info("training finished", "model", format_model(spec), "out", a.out);
  (void)out;
  return 0;
}

struct EvalArgs {
  std::vector<std::string> tasks;
  std::string emb, pairs, norms, categories, concreteness, report;
  std::uint64_t seed = 1;
  std::size_t folds = 5;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  check_outputs({a.emb, a.pairs, a.norms, a.categories, a.concreteness}, {a.report});
  const auto emb = Embeddings::load(a.emb);
  nlohmann::json j;
  for (const auto& task : a.tasks) {
    if (task == "similarity") {
      if (a.pairs.empty()) throw UsageError("--task similarity needs --pairs");
      auto r = spearman_eval(emb, SimilarityBenchmark::load(a.pairs));
      j[task] = {{"rho", optional_json(r.rho)}, {"coverage", r.coverage}, {"evaluated", r.evaluated}};
    } else if (task == "feature-norm") {
      if (a.norms.empty() || a.categories.empty())
        throw UsageError("--task feature-norm needs --norms and --categories");
      auto r = feature_norm_eval(emb, FeatureNormDataset::load(a.norms, a.categories), a.folds, a.seed);
      j[task] = {{"category_f1", r.category_f1},
                 {"characteristic_f1", r.characteristic_f1},
                 {"skipped", r.skipped},
                 {"covered", r.covered_entities}};
    } else if (task == "concreteness") {
      if (a.concreteness.empty()) throw UsageError("--task concreteness needs --concreteness");
      auto r = concreteness_eval(emb, ConcretenessDataset::load(a.concreteness), a.folds, a.seed);
      j[task] = {{"r2", r.r2}, {"fold_r2", r.fold_r2}, {"covered", r.covered}};
    } else {
      throw UsageError("unknown task '" + task + "' (similarity|feature-norm|concreteness)");
    }
  }
  write_json(j, a.report, out);
  return 0;
}

struct SynthArgs {
  synth::WorldSpec spec;
  std::vector<std::string> rules;
  std::string out;
};

inline synth::SpatialRule parse_rule(const std::string& text) {
  // "A:relation:B", read as "objects of category A are <relation> objects of B".
  const auto p1 = text.find(':');
  const auto p2 = text.find(':', p1 == std::string::npos ? p1 : p1 + 1);
  if (p1 == std::string::npos || p2 == std::string::npos)
    throw UsageError("rule must look like A:below:B, got '" + text + "'");
  synth::SpatialRule r;
  try {
    r.context_category = std::stoul(text.substr(0, p1));
    r.entity_category = std::stoul(text.substr(p2 + 1));
  } catch (const std::exception&) {
    throw UsageError("rule categories must be integers: '" + text + "'");
  }
  r.relation = synth::parse_relation(text.substr(p1 + 1, p2 - p1 - 1));
  return r;
}

inline int cmd_synth(SynthArgs a, std::ostream& out) {
  if (a.out.empty()) throw UsageError("synth needs --out");
  for (const auto& r : a.rules) a.spec.rules.push_back(parse_rule(r));
  try {
    a.spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto world = synth::generate(a.spec);
  synth::write_world(world, a.out);
  nlohmann::json j = {{"dir", a.out},
                      {"words", world.words.size()},
                      {"scenes", world.scenes.size()},
                      {"sentences", world.sentences.size()},
                      {"dropped_objects", world.dropped_objects}};
  out << j.dump() << '\n';
  return 0;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"ctxvec: word embeddings from text and visual context"};
  app.require_subcommand(1);

  // build-vocab
  std::string bv_corpus, bv_scenes, bv_out;
  std::size_t bv_min = 1;
  auto* bv = app.add_subcommand("build-vocab", "count words of a corpus (or scene file)");
  bv->add_option("--corpus", bv_corpus, "whitespace-tokenized corpus");
  bv->add_option("--scenes", bv_scenes, "scene JSON-lines file, used when no corpus is given");
  bv->add_option("--min-count", bv_min, "minimum count");
  bv->add_option("--out", bv_out, "vocabulary file")->required();

  // synth
  SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "generate a synthetic world");
  sy->add_option("--out", sa.out, "output directory")->required();
  sy->add_option("--seed", sa.spec.seed);
  sy->add_option("--categories", sa.spec.n_categories);
  sy->add_option("--words", sa.spec.words_per_category, "words per category");
  sy->add_option("--scenes", sa.spec.scenes);
  sy->add_option("--objects", sa.spec.objects_per_scene, "objects per scene");
  sy->add_option("--affinity", sa.spec.affinity);
  sy->add_option("--sentences", sa.spec.sentences);
  sy->add_option("--sentence-length", sa.spec.sentence_length);
  sy->add_option("--visual-fraction", sa.spec.visual_fraction);
  sy->add_option("--feature-dim", sa.spec.feature_dim);
  sy->add_option("--patches", sa.spec.patches_per_entity, "patches per entity");
  sy->add_option("--noise", sa.spec.feature_noise, "feature noise std");
  sy->add_option("--image-size", sa.spec.image_size);
  sy->add_option("--rule", sa.rules, "spatial rule A:below|above|beside|bigger:B (repeatable)");

  // train
  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--model", ta.model, std::string("model string\n") + model_grammar());
  tr->add_option("--corpus", ta.corpus);
  tr->add_option("--scenes", ta.scenes);
  tr->add_option("--features", ta.features, "PFV1 feature file");
  tr->add_option("--visual-vectors", ta.visual_vectors, "per-word appearance vectors (text format)");
  tr->add_option("--config", ta.config, "key=value config file");
  tr->add_option("--seed", ta.seed);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--alpha", ta.alpha);
  tr->add_option("--dim", ta.dim);
  tr->add_option("--threads", ta.threads);
  tr->add_option("--min-count", ta.min_count);
  tr->add_option("--out", ta.out, "output store (sequential models: text embeddings)");
  tr->add_option("--init-from", ta.init_from, "snapshot store to copy T and U from");
  tr->add_option("--init", ta.init, "uniform | zeros_context | pretrained");
  tr->add_option("--pretrained", ta.pretrained, "text embeddings for --init pretrained");
  tr->add_option("--report", ta.report, "JSON training report");
  auto* det = tr->add_flag("--deterministic", ta.deterministic, "single update thread (default)");
  auto* par = tr->add_flag("--parallel", ta.parallel, "lock-free parallel updates");
  det->excludes(par);

  // eval
  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate embeddings");
  ev->add_option("--task", ea.tasks, "similarity | feature-norm | concreteness (repeatable)")->required();
  ev->add_option("--emb", ea.emb, "store or text embeddings")->required();
  ev->add_option("--pairs", ea.pairs);
  ev->add_option("--norms", ea.norms);
  ev->add_option("--categories", ea.categories, "characteristic to category map");
  ev->add_option("--concreteness", ea.concreteness);
  ev->add_option("--folds", ea.folds);
  ev->add_option("--seed", ea.seed);
  ev->add_option("--report", ea.report, "also write the JSON here");

  // export
  std::string ex_store, ex_out, ex_what = "targets";
  auto* ex = app.add_subcommand("export", "write store vectors in text format");
  ex->add_option("--store", ex_store)->required();
  ex->add_option("--out", ex_out)->required();
  ex->add_option("--what", ex_what, "targets | objects");

  // shift-analysis
  std::string sh_before, sh_after, sh_conc, sh_report;
  auto* sh = app.add_subcommand("shift-analysis", "embedding shift vs concreteness");
  sh->add_option("--before", sh_before, "snapshot store or embeddings")->required();
  sh->add_option("--after", sh_after, "trained store or embeddings")->required();
  sh->add_option("--concreteness", sh_conc)->required();
  sh->add_option("--report", sh_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*bv) {
      check_outputs({bv_corpus, bv_scenes}, {bv_out});
      Vocabulary v;
      if (!bv_corpus.empty()) v = build_vocab(read_corpus(bv_corpus), bv_min);
      else if (!bv_scenes.empty()) v = build_vocab(scan_scene_words(bv_scenes), bv_min);
      else throw UsageError("build-vocab needs --corpus or --scenes");
      v.save(bv_out);
      out << nlohmann::json{{"words", v.size()}, {"tokens", v.total_count()}}.dump() << '\n';
      return 0;
    }
    if (*sy) return cmd_synth(sa, out);
    if (*tr) return cmd_train(ta, out);
    if (*ev) return cmd_eval(ea, out);
    if (*ex) {
      check_outputs({ex_store}, {ex_out});
      auto store = load_store<float>(ex_store);
      std::ofstream os(ex_out);
      if (!os) throw Error("cannot write " + ex_out);
      if (ex_what == "targets") export_targets(store, os);
      else if (ex_what == "objects") export_objects(store, os);
      else throw UsageError("--what must be targets or objects");
      return 0;
    }
    if (*sh) {
      check_outputs({sh_before, sh_after, sh_conc}, {sh_report});
      auto r = shift_analysis(Embeddings::load(sh_before), Embeddings::load(sh_after),
                              ConcretenessDataset::load(sh_conc));
      nlohmann::json j = {{"rho", optional_json(r.rho)}, {"covered", r.covered}, {"skipped", r.skipped}};
      write_json(j, sh_report, out);
      return 0;
    }
  } catch (const UsageError& e) {
    log::error("usage error", "what", e.what());
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    log::error("configuration error", "what", e.what());
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log::error("data error", "what", e.what());
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"ctxvec"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(int(argv.size()), argv.data(), out, err);
}

}  // namespace ctxvec::cli
