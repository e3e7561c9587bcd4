#pragma once

// Loss terms and their analytic gradients:
//   text      skip-gram with negative sampling over (T, U)
//   visual    the same negative-sampling form with f(c) in place of U_c, where
//             f(c) = V_c (objects), N u_c (patches / masked image), optionally
//             fused with a spatial vector by M_concat (v ⊕ s) or M_bilinear (s M v)
//   baseline  max-margin cosine loss pulling t_e toward a fixed visual vector
//
// Every function here is pure with respect to the store; gradients are
// accumulated into a GradientBatch scaled by the caller's term weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ctxvec/error.hpp"
#include "ctxvec/matrix.hpp"
#include "ctxvec/model.hpp"
#include "ctxvec/params.hpp"
#include "ctxvec/random.hpp"
#include "ctxvec/spatial.hpp"

namespace ctxvec {

template <typename Real>
Real log_sigmoid(Real x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

// Sparse row gradients for the embedding tables, dense gradients for the
// shared projections. Dense matrices stay empty until first touched.
template <typename Real>
struct GradientBatch {
  std::map<std::uint32_t, std::vector<Real>> T, U, V;
  Matrix<Real> N, M_concat, M_bilinear;

  static std::span<Real> row(std::map<std::uint32_t, std::vector<Real>>& table, std::uint32_t r,
                             std::size_t d) {
    auto& v = table[r];
    if (v.empty()) v.assign(d, Real(0));
    return v;
  }
  static Matrix<Real>& dense(Matrix<Real>& m, std::size_t rows, std::size_t cols) {
    if (m.empty()) m = Matrix<Real>(rows, cols);
    return m;
  }

  bool empty() const {
    return T.empty() && U.empty() && V.empty() && N.empty() && M_concat.empty() &&
           M_bilinear.empty();
  }

  bool all_finite() const {
    auto rows_ok = [](const auto& table) {
      for (const auto& [_, v] : table)
        for (auto x : v)
          if (!std::isfinite(x)) return false;
      return true;
    };
    return rows_ok(T) && rows_ok(U) && rows_ok(V) && N.all_finite() && M_concat.all_finite() &&
           M_bilinear.all_finite();
  }

  void clear() { *this = GradientBatch{}; }
};

// ---------------------------------------------------------------------------
// Text term

// loss = -log σ(U_c·T_e) - Σ log σ(-U_n·T_e); gradients scaled by weight.
template <typename Real>
Real text_loss_grad(const TextPair& pair, std::span<const WordId> negatives,
                    const BasicParameterStore<Real>& store, GradientBatch<Real>& grads,
                    Real weight = Real(1)) {
  const std::size_t d = store.dim();
  auto t = store.T.row(pair.target);
  std::vector<Real> gt(d, Real(0));
  Real loss = 0;
  auto one = [&](WordId ctx, Real label) {
    auto u = store.U.row(ctx);
    const Real score = dot(u, t);
    // d/dscore of -log σ(label * score)
    const Real g = label > 0 ? sigmoid(score) - Real(1) : sigmoid(score);
    loss -= log_sigmoid(label * score);
    auto gu = GradientBatch<Real>::row(grads.U, ctx, d);
    for (std::size_t i = 0; i < d; ++i) {
      gt[i] += g * u[i];
      gu[i] += weight * g * t[i];
    }
  };
  one(pair.context, Real(1));
  for (auto n : negatives) one(n, Real(-1));
  auto gT = GradientBatch<Real>::row(grads.T, pair.target, d);
  for (std::size_t i = 0; i < d; ++i) gT[i] += weight * gt[i];
  return loss;
}

template <typename Real>
std::pair<Real, GradientBatch<Real>> text_loss_grad(const TextPair& pair,
                                                    std::span<const WordId> negatives,
                                                    const BasicParameterStore<Real>& store) {
  GradientBatch<Real> g;
  Real loss = text_loss_grad(pair, negatives, store, g);
  return {loss, std::move(g)};
}

// ---------------------------------------------------------------------------
// Visual contexts

// A visual context element: an object row of V, or an activation vector u_c.
template <typename Real>
struct ContextInput {
  std::int32_t object_row = -1;
  std::span<const Real> features;

  static ContextInput object(std::int32_t row) { return {row, {}}; }
  static ContextInput feature(std::span<const Real> u) { return {-1, u}; }
};

template <typename Real>
struct VisualSample {
  WordId entity = 0;
  ContextInput<Real> positive;
  std::vector<ContextInput<Real>> negatives;
  // s_(e,c) for spatial kinds. negative_spatial, when filled, holds one vector
  // per negative; otherwise negatives reuse the positive's.
  std::optional<SpatialVec> spatial;
  std::vector<SpatialVec> negative_spatial;
};

namespace detail {

template <typename Real>
void check_context(const ContextModelKind& kind, const ContextInput<Real>& c,
                   const BasicParameterStore<Real>& store) {
  if (kind.uses_object_table()) {
    if (c.object_row < 0 || std::size_t(c.object_row) >= store.object_count())
      throw ConfigError("object context has no row in V");
  } else if (c.features.size() != store.feature_dim()) {
    throw ConfigError("feature vector length does not match B");
  }
}

// Base embedding v_c before spatial fusion.
template <typename Real>
std::vector<Real> base_embed(const ContextModelKind& kind, const ContextInput<Real>& c,
                             const BasicParameterStore<Real>& store) {
  check_context(kind, c, store);
  const std::size_t d = store.dim();
  if (kind.uses_object_table()) {
    auto r = store.V.row(std::size_t(c.object_row));
    return {r.begin(), r.end()};
  }
  std::vector<Real> v(d, Real(0));
  for (std::size_t i = 0; i < d; ++i) v[i] = dot(store.N.row(i), c.features);
  return v;
}

template <typename Real>
std::vector<Real> fuse(const SpatialOptions& opt, std::span<const Real> v, const SpatialVec& s,
                       const BasicParameterStore<Real>& store) {
  const std::size_t d = store.dim();
  std::vector<Real> out(d, Real(0));
  if (opt.fusion == Fusion::Concat) {
    for (std::size_t i = 0; i < d; ++i) {
      auto m = store.M_concat.row(i);
      Real acc = 0;
      for (std::size_t j = 0; j < d; ++j) acc += m[j] * v[j];
      for (std::size_t k = 0; k < kSpatialDim; ++k) acc += m[d + k] * Real(s[k]);
      out[i] = acc;
    }
  } else {
    for (std::size_t k = 0; k < kSpatialDim; ++k) {
      const Real sk = Real(s[k]);
      if (sk == Real(0)) continue;
      for (std::size_t l = 0; l < d; ++l) {
        const Real a = sk * v[l];
        auto m = store.M_bilinear.row(k * d + l);
        for (std::size_t j = 0; j < d; ++j) out[j] += a * m[j];
      }
    }
  }
  return out;
}

// Backpropagates g = dL/df through f into the parameters, scaled by weight.
template <typename Real>
void backprop_context(const ContextModelKind& kind, const ContextInput<Real>& c,
                      const std::optional<SpatialVec>& s, std::span<const Real> v_base,
                      std::span<const Real> g, const BasicParameterStore<Real>& store,
                      GradientBatch<Real>& grads, Real weight) {
  const std::size_t d = store.dim();
  std::vector<Real> gv(g.begin(), g.end());
  if (kind.spatial) {
    std::fill(gv.begin(), gv.end(), Real(0));
    if (kind.spatial->fusion == Fusion::Concat) {
      auto& gm = GradientBatch<Real>::dense(grads.M_concat, d, d + kSpatialDim);
      for (std::size_t i = 0; i < d; ++i) {
        auto m = store.M_concat.row(i);
        auto gr = gm.row(i);
        const Real wg = weight * g[i];
        for (std::size_t j = 0; j < d; ++j) {
          gr[j] += wg * v_base[j];
          gv[j] += m[j] * g[i];
        }
        for (std::size_t k = 0; k < kSpatialDim; ++k) gr[d + k] += wg * Real((*s)[k]);
      }
    } else {
      auto& gm = GradientBatch<Real>::dense(grads.M_bilinear, kSpatialDim * d, d);
      for (std::size_t k = 0; k < kSpatialDim; ++k) {
        const Real sk = Real((*s)[k]);
        if (sk == Real(0)) continue;
        for (std::size_t l = 0; l < d; ++l) {
          auto m = store.M_bilinear.row(k * d + l);
          auto gr = gm.row(k * d + l);
          const Real a = weight * sk * v_base[l];
          Real acc = 0;
          for (std::size_t j = 0; j < d; ++j) {
            gr[j] += a * g[j];
            acc += m[j] * g[j];
          }
          gv[l] += sk * acc;
        }
      }
    }
  }
  if (kind.uses_object_table()) {
    auto gr = GradientBatch<Real>::row(grads.V, std::uint32_t(c.object_row), d);
    for (std::size_t i = 0; i < d; ++i) gr[i] += weight * gv[i];
  } else {
    auto& gn = GradientBatch<Real>::dense(grads.N, d, store.feature_dim());
    for (std::size_t i = 0; i < d; ++i) {
      const Real wg = weight * gv[i];
      if (wg == Real(0)) continue;
      auto gr = gn.row(i);
      for (std::size_t b = 0; b < c.features.size(); ++b) gr[b] += wg * c.features[b];
    }
  }
}

}  // namespace detail

// f_θ(c), or f^sp_θ(c, s) when the kind is spatial.
template <typename Real>
std::vector<Real> visual_context_embed(const ContextModelKind& kind, const ContextInput<Real>& c,
                                       const std::optional<SpatialVec>& s,
                                       const BasicParameterStore<Real>& store) {
  auto v = detail::base_embed(kind, c, store);
  if (!kind.spatial) return v;
  if (!s) throw SpatialDataMissing("spatial context model needs a spatial vector");
  return detail::fuse(*kind.spatial, std::span<const Real>(v), *s, store);
}

// Negative-sampling loss for one (entity, context) pair and its negatives.
template <typename Real>
Real visual_loss_grad(const ContextModelKind& kind, const VisualSample<Real>& sample,
                      const BasicParameterStore<Real>& store, GradientBatch<Real>& grads,
                      Real weight = Real(1)) {
  if (kind.spatial && !sample.spatial)
    throw SpatialDataMissing("spatial context model needs bounding boxes");
  const std::size_t d = store.dim();
  auto t = store.T.row(sample.entity);
  std::vector<Real> gt(d, Real(0));
  Real loss = 0;
  std::vector<Real> g(d);
  if (kind.spatial && !sample.negative_spatial.empty() &&
      sample.negative_spatial.size() != sample.negatives.size())
    throw ConfigError("one spatial vector per negative expected");
  auto one = [&](const ContextInput<Real>& ctx, Real label, const std::optional<SpatialVec>& sv) {
    auto v = detail::base_embed(kind, ctx, store);
    std::vector<Real> f =
        kind.spatial ? detail::fuse(*kind.spatial, std::span<const Real>(v), *sv, store) : v;
    const Real score = dot(std::span<const Real>(f), t);
    const Real gs = label > 0 ? sigmoid(score) - Real(1) : sigmoid(score);
    loss -= log_sigmoid(label * score);
    for (std::size_t i = 0; i < d; ++i) {
      gt[i] += gs * f[i];
      g[i] = gs * t[i];
    }
    detail::backprop_context(kind, ctx, sv, std::span<const Real>(v), std::span<const Real>(g), store,
                             grads, weight);
  };
  one(sample.positive, Real(1), sample.spatial);
  for (std::size_t n = 0; n < sample.negatives.size(); ++n)
    one(sample.negatives[n], Real(-1),
        kind.spatial && !sample.negative_spatial.empty()
            ? std::optional<SpatialVec>(sample.negative_spatial[n])
            : sample.spatial);
  auto gT = GradientBatch<Real>::row(grads.T, sample.entity, d);
  for (std::size_t i = 0; i < d; ++i) gT[i] += weight * gt[i];
  return loss;
}

// Sum over several contexts of the same entity (the inner sum over C_e).
template <typename Real>
Real visual_loss_grad(const ContextModelKind& kind, std::span<const VisualSample<Real>> samples,
                      const BasicParameterStore<Real>& store, GradientBatch<Real>& grads,
                      Real weight = Real(1)) {
  if (samples.empty()) throw ConfigError("visual loss needs at least one context");
  Real loss = 0;
  for (const auto& s : samples) loss += visual_loss_grad(kind, s, store, grads, weight);
  return loss;
}

// ---------------------------------------------------------------------------
// Baseline L

// Fixed map from B-dim visual vectors to d dims: identity when B == d, otherwise
// a seeded standard Gaussian matrix.
class VisualProjection {
 public:
  VisualProjection() = default;
  VisualProjection(std::size_t d, std::size_t B, std::uint64_t seed) : d_(d), B_(B) {
    if (B != d) {
      matrix_ = Matrix<double>(d, B);
      Rng rng = Rng::stream(seed, 0x4c);
      for (auto& v : matrix_.flat()) v = rng.normal();
    }
  }

  std::size_t out_dim() const { return d_; }

  template <typename In>
  std::vector<double> apply(std::span<In> v) const {
    if (v.size() != B_) throw ConfigError("visual vector length does not match B");
    if (matrix_.empty()) return {v.begin(), v.end()};
    std::vector<double> out(d_, 0.0);
    for (std::size_t i = 0; i < d_; ++i) {
      auto r = matrix_.row(i);
      double acc = 0;
      for (std::size_t b = 0; b < B_; ++b) acc += r[b] * double(v[b]);
      out[i] = acc;
    }
    return out;
  }

 private:
  std::size_t d_ = 0, B_ = 0;
  Matrix<double> matrix_;
};

// Σ_neg max(0, γ - cos(t_e, v_e) + cos(t_e, v_neg)); only T_e receives gradient,
// and the subgradient is 0 wherever a hinge is inactive (including the kink).
template <typename Real, typename VisualScalar>
Real baselineL_loss_grad(WordId entity, std::span<const VisualScalar> v_e,
                         const std::vector<std::span<const VisualScalar>>& v_neg,
                         const BasicParameterStore<Real>& store, double gamma,
                         const VisualProjection& projection, GradientBatch<Real>& grads,
                         Real weight = Real(1)) {
  const std::size_t d = store.dim();
  auto t = store.T.row(entity);
  double tt = 0;
  for (auto x : t) tt += double(x) * double(x);
  if (tt == 0.0) throw DegenerateInput("baseline L: zero-norm target embedding");
  const double tn = std::sqrt(tt);

  // cos(t, a) and its gradient with respect to t.
  auto cos_grad = [&](const std::vector<double>& a, std::vector<double>& grad) {
    double aa = 0, ta = 0;
    for (std::size_t i = 0; i < d; ++i) {
      aa += a[i] * a[i];
      ta += double(t[i]) * a[i];
    }
    if (aa == 0.0) throw DegenerateInput("baseline L: zero-norm visual vector");
    const double an = std::sqrt(aa);
    const double c = ta / (tn * an);
    grad.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) grad[i] = a[i] / (tn * an) - c * double(t[i]) / tt;
    return c;
  };

  std::vector<double> grad_pos, grad_neg;
  const double cos_pos = cos_grad(projection.apply(v_e), grad_pos);
  std::vector<double> total(d, 0.0);
  double loss = 0;
  for (const auto& n : v_neg) {
    const double cos_neg = cos_grad(projection.apply(n), grad_neg);
    const double h = gamma - cos_pos + cos_neg;
    if (h > 0) {
      loss += h;
      for (std::size_t i = 0; i < d; ++i) total[i] += grad_neg[i] - grad_pos[i];
    }
  }
  if (loss > 0) {
    auto gT = GradientBatch<Real>::row(grads.T, entity, d);
    for (std::size_t i = 0; i < d; ++i) gT[i] += weight * Real(total[i]);
  }
  return Real(loss);
}

// ---------------------------------------------------------------------------
// Negative sampling

// Draws indices with probability proportional to count^power.
class UnigramSampler {
 public:
  UnigramSampler() = default;
  explicit UnigramSampler(std::span<const std::uint64_t> counts, double power = 0.75) {
    cumulative_.reserve(counts.size());
    double acc = 0;
    for (auto c : counts) {
      acc += c > 0 ? std::pow(double(c), power) : 0.0;
      cumulative_.push_back(acc);
    }
    if (acc <= 0) throw ConfigError("negative sampler needs at least one positive count");
  }

  std::size_t size() const { return cumulative_.size(); }
  double probability(std::size_t i) const {
    const double prev = i == 0 ? 0.0 : cumulative_[i - 1];
    return (cumulative_[i] - prev) / cumulative_.back();
  }

  std::uint32_t sample(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<std::uint32_t>(it - cumulative_.begin());
  }

  // Sample avoiding `exclude` when the support allows it.
  std::uint32_t sample_excluding(Rng& rng, std::uint32_t exclude) const {
    std::uint32_t s = sample(rng);
    for (int tries = 0; s == exclude && tries < 16; ++tries) s = sample(rng);
    return s;
  }

 private:
  std::vector<double> cumulative_;
};

template <typename Real>
struct FeaturePoolEntry {
  std::size_t scene = 0;
  std::span<const Real> values;
};

// Distributions for negatives: unigram^0.75 over text contexts and over object
// occurrences; uniform pools of patch / masked features for the P kinds.
template <typename Real>
struct NegativeTables {
  std::optional<UnigramSampler> words;
  std::optional<UnigramSampler> objects;
  std::vector<FeaturePoolEntry<Real>> patches;
  std::vector<FeaturePoolEntry<Real>> masked;
};

inline std::vector<WordId> sample_text_negatives(std::size_t k, Rng& rng,
                                                 const UnigramSampler& sampler,
                                                 std::optional<WordId> exclude = std::nullopt) {
  std::vector<WordId> out(k);
  for (auto& n : out) n = exclude ? sampler.sample_excluding(rng, *exclude) : sampler.sample(rng);
  return out;
}

// Negatives for a visual kind. Object negatives avoid the positive row; feature
// negatives come from images other than exclude_scene when possible.
template <typename Real>
std::vector<ContextInput<Real>> sample_negatives(const ContextModelKind& kind, std::size_t k,
                                                 Rng& rng, const NegativeTables<Real>& tables,
                                                 std::optional<std::int32_t> exclude_row = {},
                                                 std::optional<std::size_t> exclude_scene = {}) {
  std::vector<ContextInput<Real>> out;
  out.reserve(k);
  if (kind.base == ContextBase::Objects) {
    if (!tables.objects) throw ConfigError("object negative table missing");
    for (std::size_t i = 0; i < k; ++i) {
      auto r = exclude_row ? tables.objects->sample_excluding(rng, std::uint32_t(*exclude_row))
                           : tables.objects->sample(rng);
      out.push_back(ContextInput<Real>::object(std::int32_t(r)));
    }
    return out;
  }
  const auto& pool = kind.base == ContextBase::Patch ? tables.patches : tables.masked;
  if (pool.empty()) throw ConfigError("feature negative pool is empty");
  for (std::size_t i = 0; i < k; ++i) {
    auto idx = rng.below(pool.size());
    for (int tries = 0; exclude_scene && pool[idx].scene == *exclude_scene && tries < 16; ++tries)
      idx = rng.below(pool.size());
    out.push_back(ContextInput<Real>::feature(pool[idx].values));
  }
  return out;
}

}  // namespace ctxvec
