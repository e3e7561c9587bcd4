#pragma once

// Intrinsic evaluations of word embeddings: similarity (Spearman), feature-norm
// prediction (linear hinge classifier, 5-fold), concreteness regression (RBF
// kernel ridge, 5-fold), the PCA-based sequential combination and the
// embedding-shift analysis.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ctxvec/error.hpp"
#include "ctxvec/log.hpp"
#include "ctxvec/matrix.hpp"
#include "ctxvec/params.hpp"
#include "ctxvec/random.hpp"

namespace ctxvec {

// Read-only word -> vector view in double precision.
class Embeddings {
 public:
  Embeddings() = default;
  Embeddings(std::vector<std::string> words, Matrix<double> vectors)
      : words_(std::move(words)), vectors_(std::move(vectors)) {
    if (words_.size() != vectors_.rows()) throw FormatError("embedding words/rows mismatch");
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  template <typename Real>
  static Embeddings from_store(const BasicParameterStore<Real>& s) {
    return Embeddings(s.words(), Matrix<double>::cast_from(s.T));
  }
  template <typename Real>
  static Embeddings from_text(const TextEmbeddings<Real>& t) {
    return Embeddings(t.words, Matrix<double>::cast_from(t.vectors));
  }
  // Loads a CVP1 store (target embeddings) or a text embedding file.
  static Embeddings load(const std::string& path) {
    if (is_store_file(path)) return from_store(load_store<float>(path));
    return from_text(load_text_embeddings<double>(path));
  }

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  const std::vector<std::string>& words() const { return words_; }
  const Matrix<double>& vectors() const { return vectors_; }

  std::optional<std::size_t> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::span<const double> row(std::size_t i) const { return vectors_.row(i); }

 private:
  std::vector<std::string> words_;
  Matrix<double> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Rank statistics

// Average ranks (1-based) with ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) return std::nullopt;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  auto ra = average_ranks(a);
  auto rb = average_ranks(b);
  return pearson(ra, rb);
}

// One-sided Mann-Whitney rank-sum test for "x tends to exceed y", normal
// approximation with tie correction.
struct RankSumResult {
  double u = 0;       // U statistic of x
  double z = 0;
  double p_value = 1;
};

inline RankSumResult rank_sum_greater(std::span<const double> x, std::span<const double> y) {
  const std::size_t n1 = x.size(), n2 = y.size();
  if (n1 == 0 || n2 == 0) throw EvalError("rank-sum test needs two non-empty samples");
  std::vector<double> all(x.begin(), x.end());
  all.insert(all.end(), y.begin(), y.end());
  auto ranks = average_ranks(all);
  double r1 = 0;
  for (std::size_t i = 0; i < n1; ++i) r1 += ranks[i];
  RankSumResult res;
  res.u = r1 - double(n1) * double(n1 + 1) / 2.0;
  const double n = double(n1 + n2);
  // tie correction
  std::map<double, std::size_t> ties;
  for (double v : all) ++ties[v];
  double tie_term = 0;
  for (const auto& [_, t] : ties) tie_term += double(t) * double(t) * double(t) - double(t);
  const double var = double(n1) * double(n2) / 12.0 * ((n + 1) - tie_term / (n * (n - 1)));
  const double mean = double(n1) * double(n2) / 2.0;
  if (var <= 0) {
    res.z = 0;
    res.p_value = 1;
    return res;
  }
  res.z = (res.u - mean) / std::sqrt(var);
  res.p_value = 0.5 * std::erfc(res.z / std::sqrt(2.0));
  return res;
}

// ---------------------------------------------------------------------------
// Word similarity

struct SimilarityBenchmark {
  std::string name;
  struct Pair {
    std::string a, b;
    double gold;
  };
  std::vector<Pair> pairs;

  static SimilarityBenchmark parse(std::istream& is, std::string name = "benchmark") {
    SimilarityBenchmark bm;
    bm.name = std::move(name);
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, '\t')) f.push_back(tok);
      if (f.size() != 3) throw ParseError("expected word1<TAB>word2<TAB>score", lineno);
      double g;
      try {
        g = std::stod(f[2]);
      } catch (const std::exception&) {
        throw ParseError("bad score '" + f[2] + "'", lineno);
      }
      if (!std::isfinite(g)) throw ParseError("score must be finite", lineno);
      auto key = std::minmax(f[0], f[1]);
      if (!seen.insert({key.first, key.second}).second) {
        log::warn("duplicate benchmark pair skipped", "line", lineno);
        continue;
      }
      bm.pairs.push_back({f[0], f[1], g});
    }
    return bm;
  }

  static SimilarityBenchmark load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open benchmark: " + path);
    return parse(is, path);
  }
};

struct SimilarityResult {
  std::optional<double> rho;  // nullopt when scores have no variance
  double coverage = 0;
  std::size_t evaluated = 0;
};

// Cosine model scores vs gold, Spearman with average ranks. Pairs with an
// uncovered word (or outside `restrict_to`, when given) are skipped.
inline SimilarityResult spearman_eval(const Embeddings& emb, const SimilarityBenchmark& bm,
                                      const std::unordered_set<std::string>* restrict_to = nullptr) {
  std::vector<double> model, gold;
  for (const auto& p : bm.pairs) {
    if (restrict_to && (!restrict_to->count(p.a) || !restrict_to->count(p.b))) continue;
    auto ia = emb.find(p.a), ib = emb.find(p.b);
    if (!ia || !ib) continue;
    model.push_back(cosine(emb.row(*ia), emb.row(*ib)));
    gold.push_back(p.gold);
  }
  if (model.empty()) throw NoOverlap("no benchmark pair is covered by the embeddings");
  if (model.size() < 2) throw EvalError("need at least two covered pairs");
  SimilarityResult r;
  r.evaluated = model.size();
  r.coverage = bm.pairs.empty() ? 0.0 : double(model.size()) / double(bm.pairs.size());
  r.rho = spearman(model, gold);
  return r;
}

// ---------------------------------------------------------------------------
// Cross-validation helpers

// Stratified assignment: each class is shuffled and dealt round-robin to folds.
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                                 Rng& rng) {
  std::vector<std::size_t> fold(labels.size());
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (auto& [_, idx] : by_class) {
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % folds;
  }
  return fold;
}

inline std::vector<std::size_t> shuffled_folds(std::size_t n, std::size_t folds, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::size_t> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[order[k]] = k % folds;
  return fold;
}

// ---------------------------------------------------------------------------
// Feature norms

struct FeatureNormDataset {
  std::vector<std::string> entities;
  std::vector<std::string> characteristics;
  std::vector<std::string> category_of;      // per characteristic
  std::vector<std::vector<int>> labels;      // [entity][characteristic] in {0,1}

  // norms: header of characteristic names (optionally preceded by an entity
  // column label), rows "entity<TAB>0/1...". categories: "characteristic<TAB>category".
  static FeatureNormDataset parse(std::istream& norms, std::istream& categories) {
    auto split = [](std::string line) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, '\t')) f.push_back(tok);
      return f;
    };
    FeatureNormDataset ds;
    std::string line;
    if (!std::getline(norms, line)) throw FormatError("feature-norm file is empty");
    auto header = split(line);
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    std::vector<std::size_t> linenos;
    while (std::getline(norms, line)) {
      ++lineno;
      if (line.empty()) continue;
      rows.push_back(split(line));
      linenos.push_back(lineno);
    }
    if (rows.empty()) throw FormatError("feature-norm file has no rows");
    const std::size_t width = rows.front().size();
    if (header.size() == width) header.erase(header.begin());
    if (header.size() + 1 != width)
      throw FormatError("feature-norm header does not match row width");
    ds.characteristics = header;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != width) throw ParseError("row width differs from header", linenos[r]);
      ds.entities.push_back(rows[r][0]);
      std::vector<int> lab;
      for (std::size_t c = 1; c < width; ++c) {
        if (rows[r][c] != "0" && rows[r][c] != "1")
          throw ParseError("labels must be 0 or 1", linenos[r]);
        lab.push_back(rows[r][c] == "1");
      }
      ds.labels.push_back(std::move(lab));
    }
    std::unordered_map<std::string, std::string> cat;
    lineno = 0;
    while (std::getline(categories, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = split(line);
      if (f.size() != 2) throw ParseError("expected characteristic<TAB>category", lineno);
      if (!cat.emplace(f[0], f[1]).second)
        throw ParseError("characteristic '" + f[0] + "' listed twice", lineno);
    }
    for (const auto& c : ds.characteristics) {
      auto it = cat.find(c);
      if (it == cat.end()) throw FormatError("characteristic '" + c + "' has no category");
      ds.category_of.push_back(it->second);
    }
    return ds;
  }

  static FeatureNormDataset load(const std::string& norms_path, const std::string& cat_path) {
    std::ifstream n(norms_path), c(cat_path);
    if (!n) throw Error("cannot open feature norms: " + norms_path);
    if (!c) throw Error("cannot open category map: " + cat_path);
    return parse(n, c);
  }
};

// Pegasos-style linear SVM (hinge loss, L2 regularization) with an appended
// constant feature acting as bias.
struct LinearSvm {
  double lambda = 1e-2;
  std::size_t epochs = 200;
  std::vector<double> w;

  void fit(const std::vector<std::vector<double>>& x, std::span<const int> y, Rng& rng) {
    const std::size_t dim = x.front().size() + 1;
    w.assign(dim, 0.0);
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t t = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      rng.shuffle(order);
      for (auto i : order) {
        ++t;
        const double eta = 1.0 / (lambda * double(t));
        const double yi = y[i] ? 1.0 : -1.0;
        const double margin = yi * decision(x[i]);
        const double shrink = 1.0 - eta * lambda;
        for (auto& v : w) v *= shrink;
        if (margin < 1.0) {
          for (std::size_t k = 0; k + 1 < dim; ++k) w[k] += eta * yi * x[i][k];
          w[dim - 1] += eta * yi;
        }
      }
    }
  }

  double decision(std::span<const double> x) const {
    double s = w.back();
    for (std::size_t k = 0; k < x.size(); ++k) s += w[k] * x[k];
    return s;
  }
  int predict(std::span<const double> x) const { return decision(x) > 0 ? 1 : 0; }
};

inline double f1_score(std::span<const int> truth, std::span<const int> pred) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] && truth[i]) ++tp;
    else if (pred[i] && !truth[i]) ++fp;
    else if (!pred[i] && truth[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

struct FeatureNormResult {
  std::map<std::string, double> category_f1;        // macro average within category
  std::map<std::string, double> characteristic_f1;  // mean over folds
  std::size_t skipped = 0;
  std::size_t covered_entities = 0;
};

inline FeatureNormResult feature_norm_eval(const Embeddings& emb, const FeatureNormDataset& ds,
                                           std::size_t folds = 5, std::uint64_t seed = 1) {
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> x;
  for (std::size_t e = 0; e < ds.entities.size(); ++e) {
    if (auto i = emb.find(ds.entities[e])) {
      rows.push_back(e);
      auto r = emb.row(*i);
      x.emplace_back(r.begin(), r.end());
    }
  }
  FeatureNormResult res;
  res.covered_entities = rows.size();
  std::map<std::string, std::vector<double>> per_cat;
  for (std::size_t c = 0; c < ds.characteristics.size(); ++c) {
    std::vector<int> y;
    for (auto e : rows) y.push_back(ds.labels[e][c]);
    const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (pos < folds || y.size() - pos < folds) {
      ++res.skipped;
      log::warn("characteristic skipped: too few positives or negatives", "name",
                ds.characteristics[c], "positives", pos, "negatives", y.size() - pos);
      continue;
    }
    Rng rng = Rng::stream(seed, c);
    auto fold = stratified_folds(y, folds, rng);
    double f1_sum = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::vector<double>> xtr;
      std::vector<int> ytr, yte, pte;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (fold[i] != f) {
          xtr.push_back(x[i]);
          ytr.push_back(y[i]);
        }
      LinearSvm svm;
      svm.fit(xtr, ytr, rng);
      for (std::size_t i = 0; i < y.size(); ++i)
        if (fold[i] == f) {
          yte.push_back(y[i]);
          pte.push_back(svm.predict(x[i]));
        }
      f1_sum += f1_score(yte, pte);
    }
    const double f1 = f1_sum / double(folds);
    res.characteristic_f1[ds.characteristics[c]] = f1;
    per_cat[ds.category_of[c]].push_back(f1);
  }
  if (per_cat.empty()) throw EvalError("no characteristic has enough positive and negative examples");
  for (const auto& [cat, v] : per_cat)
    res.category_f1[cat] = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  return res;
}

// ---------------------------------------------------------------------------
// Concreteness

struct ConcretenessDataset {
  std::vector<std::pair<std::string, double>> ratings;

  static ConcretenessDataset parse(std::istream& is) {
    ConcretenessDataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("expected word<TAB>rating", lineno);
      double r;
      try {
        r = std::stod(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw ParseError("bad rating", lineno);
      }
      if (!std::isfinite(r)) throw ParseError("rating must be finite", lineno);
      ds.ratings.emplace_back(line.substr(0, tab), r);
    }
    return ds;
  }
  static ConcretenessDataset load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open concreteness file: " + path);
    return parse(is);
  }
};

// RBF kernel ridge regression: bandwidth from the median pairwise distance of
// the training points, ridge 1e-3 (raised geometrically if the solve fails).
struct KernelRidge {
  double ridge = 1e-3;
  double sigma = 1.0;
  Eigen::MatrixXd train_x;
  Eigen::VectorXd coef;
  double offset = 0;

  static double median_pairwise_distance(const Eigen::MatrixXd& x) {
    std::vector<double> d;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).norm());
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0 ? *mid : 1.0;
  }

  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
  }

  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    train_x = x;
    sigma = median_pairwise_distance(x);
    offset = y.mean();
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i; j < n; ++j) k(i, j) = k(j, i) = kernel(x.row(i), x.row(j));
    const Eigen::VectorXd rhs = y.array() - offset;
    double r = ridge;
    for (int attempt = 0; attempt < 12; ++attempt, r *= 10) {
      Eigen::LLT<Eigen::MatrixXd> llt(k + r * Eigen::MatrixXd::Identity(n, n));
      if (llt.info() == Eigen::Success) {
        coef = llt.solve(rhs);
        if (coef.allFinite()) return;
      }
      log::debug("kernel system ill-conditioned, raising ridge", "ridge", r * 10);
    }
    throw NumericError("kernel ridge system could not be solved");
  }

  double predict(const Eigen::VectorXd& q) const {
    double s = offset;
    for (Eigen::Index i = 0; i < train_x.rows(); ++i) s += coef(i) * kernel(train_x.row(i), q);
    return s;
  }
};

struct ConcretenessResult {
  double r2 = 0;  // mean out-of-fold coefficient of determination
  std::vector<double> fold_r2;
  std::size_t covered = 0;
};

inline ConcretenessResult concreteness_eval(const Embeddings& emb, const ConcretenessDataset& ds,
                                            std::size_t folds = 5, std::uint64_t seed = 1) {
  std::vector<std::size_t> rows;
  std::vector<double> y;
  for (const auto& [w, r] : ds.ratings)
    if (auto i = emb.find(w)) {
      rows.push_back(*i);
      y.push_back(r);
    }
  if (rows.size() < 20)
    throw EvalError("concreteness needs at least 20 covered words, found " + std::to_string(rows.size()));
  Rng rng(seed);
  auto fold = shuffled_folds(rows.size(), folds, rng);
  ConcretenessResult res;
  res.covered = rows.size();
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < rows.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
    Eigen::MatrixXd xtr(tr.size(), emb.dim());
    Eigen::VectorXd ytr(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      auto r = emb.row(rows[tr[i]]);
      for (std::size_t c = 0; c < emb.dim(); ++c) xtr(Eigen::Index(i), Eigen::Index(c)) = r[c];
      ytr(Eigen::Index(i)) = y[tr[i]];
    }
    KernelRidge krr;
    krr.fit(xtr, ytr);
    double mean = 0;
    for (auto i : te) mean += y[i];
    mean /= double(te.size());
    double ss_res = 0, ss_tot = 0;
    for (auto i : te) {
      auto r = emb.row(rows[i]);
      Eigen::VectorXd q(emb.dim());
      for (std::size_t c = 0; c < emb.dim(); ++c) q(Eigen::Index(c)) = r[c];
      const double p = krr.predict(q);
      ss_res += (y[i] - p) * (y[i] - p);
      ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    res.fold_r2.push_back(ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0);
  }
  res.r2 = std::accumulate(res.fold_r2.begin(), res.fold_r2.end(), 0.0) / double(folds);
  return res;
}

// ---------------------------------------------------------------------------
// PCA and the sequential combination

struct PcaResult {
  Eigen::MatrixXd components;  // columns = principal directions, descending variance
  Eigen::VectorXd variances;
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd projected;   // centered data times components
};

// Top-k principal components from the eigendecomposition of the covariance.
// Each component's sign is fixed so its largest-magnitude entry is positive.
inline PcaResult pca(const Eigen::MatrixXd& x, std::size_t k) {
  if (k > std::size_t(x.cols())) throw ConfigError("PCA output dimension exceeds input dimension");
  if (x.rows() == 0) throw ConfigError("PCA needs at least one row");
  PcaResult r;
  r.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - r.mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / double(std::max<Eigen::Index>(1, x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  const Eigen::Index n = cov.rows();
  const auto kk = Eigen::Index(k);
  r.components.resize(n, kk);
  r.variances.resize(kk);
  for (Eigen::Index c = 0; c < kk; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.col(c) = v;
    r.variances(c) = solver.eigenvalues()(n - 1 - c);
  }
  r.projected = centered * r.components;
  return r;
}

// Per word of `text`: [text row, visual row or zeros], then PCA to out_dim.
inline Embeddings sequential_baseline(const Embeddings& text, const Embeddings& visual,
                                      std::size_t out_dim) {
  if (text.size() == 0) throw ConfigError("sequential baseline needs a non-empty vocabulary");
  const std::size_t dt = text.dim(), dv = visual.dim();
  if (out_dim > dt + dv)
    throw ConfigError("output dimension " + std::to_string(out_dim) +
                      " exceeds concatenated dimension " + std::to_string(dt + dv));
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(Eigen::Index(text.size()), Eigen::Index(dt + dv));
  for (std::size_t w = 0; w < text.size(); ++w) {
    auto t = text.row(w);
    for (std::size_t c = 0; c < dt; ++c) x(Eigen::Index(w), Eigen::Index(c)) = t[c];
    if (auto v = visual.find(text.words()[w])) {
      auto r = visual.row(*v);
      for (std::size_t c = 0; c < dv; ++c) x(Eigen::Index(w), Eigen::Index(dt + c)) = r[c];
    }
  }
  auto p = pca(x, out_dim);
  Matrix<double> out(text.size(), out_dim);
  for (std::size_t w = 0; w < text.size(); ++w)
    for (std::size_t c = 0; c < out_dim; ++c) out(w, c) = p.projected(Eigen::Index(w), Eigen::Index(c));
  return Embeddings(text.words(), std::move(out));
}

// ---------------------------------------------------------------------------
// Shift analysis

struct ShiftResult {
  std::optional<double> rho;  // nullopt: no variance in shifts or ratings
  std::size_t covered = 0;
  std::size_t skipped = 0;    // zero vectors
  std::vector<std::pair<std::string, double>> shifts;
};

inline double cosine_shift(std::span<const double> a, std::span<const double> b) {
  return 1.0 - cosine(a, b);
}

// shift(w) = 1 - cos(T0_w, T_w), Spearman against concreteness.
inline ShiftResult shift_analysis(const Embeddings& before, const Embeddings& after,
                                  const ConcretenessDataset& ds) {
  ShiftResult res;
  std::vector<double> shifts, ratings;
  for (const auto& [w, r] : ds.ratings) {
    auto i = before.find(w), j = after.find(w);
    if (!i || !j) continue;
    auto a = before.row(*i), b = after.row(*j);
    if (squared_norm(a) == 0.0 || squared_norm(b) == 0.0) {
      ++res.skipped;
      log::warn("zero vector skipped in shift analysis", "word", w);
      continue;
    }
    const double s = cosine_shift(a, b);
    res.shifts.emplace_back(w, s);
    shifts.push_back(s);
    ratings.push_back(r);
  }
  res.covered = shifts.size();
  if (shifts.size() < 2) throw EvalError("shift analysis needs at least two covered words");
  res.rho = spearman(shifts, ratings);
  return res;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json("no_variance");
}

}  // namespace ctxvec
