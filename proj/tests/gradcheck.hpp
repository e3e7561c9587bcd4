#pragma once

// Random small configurations for every loss term, checked against central
// finite differences in double precision.

#include <string>
#include <vector>

#include "ctxvec/model.hpp"
#include "ctxvec/objectives.hpp"
#include "ctxvec/random.hpp"
#include "ctxvec/spatial.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct TermCase {
  std::string term;  // family label
  ctxvec::JointModel::Term family;
  std::optional<ctxvec::ContextModelKind> kind;
};

inline std::vector<TermCase> term_cases() {
  using namespace ctxvec;
  std::vector<TermCase> out;
  out.push_back({"T", JointModel::Term::Text, std::nullopt});
  out.push_back({"O", JointModel::Term::Visual, ContextModelKind{ContextBase::Objects, std::nullopt}});
  out.push_back({"P", JointModel::Term::Visual, ContextModelKind{ContextBase::Patch, std::nullopt}});
  out.push_back({"P_full", JointModel::Term::Visual, ContextModelKind{ContextBase::FullMasked, std::nullopt}});
  for (auto feat : {SpatialFeatures::Delta, SpatialFeatures::Categorical})
    for (auto fusion : {Fusion::Concat, Fusion::Bilinear}) {
      ContextModelKind k{ContextBase::Objects, SpatialOptions{feat, fusion}};
      out.push_back({"Sp(*," + std::string(feat == SpatialFeatures::Delta ? "δ" : "c") + "," +
                         (fusion == Fusion::Concat ? "⊕" : "b") + ")",
                     JointModel::Term::Visual, k});
    }
  out.push_back({"L", JointModel::Term::BaselineL, std::nullopt});
  return out;
}

struct CaseResult {
  std::string label;  // concrete term, e.g. "Sp(P,c,b)"
  std::size_t d = 0, B = 0;
  oracle::FdResult fd;
};

inline void randomize(oracle::Store& s, ctxvec::Rng& rng, double scale) {
  for (auto* m : {&s.T, &s.U, &s.V, &s.N, &s.M_concat, &s.M_bilinear})
    for (auto& v : m->flat()) v = scale * rng.normal();
}

// One configuration for term case `tc`; returns false when the draw was
// rejected (a hinge too close to its kink for a meaningful difference).
inline bool run_case(const TermCase& tc, ctxvec::Rng& rng, std::size_t config_index, CaseResult& out) {
  using namespace ctxvec;
  const std::size_t d = 1 + rng.below(8);
  const std::size_t B = 1 + rng.below(12);
  const std::size_t n_words = 6;
  const std::size_t k = 1 + rng.below(4);
  const double weight = rng.uniform(0.2, 1.5);
  oracle::Store store({"a", "b", "c", "d", "e", "f"}, {0, 1, 2, 3}, d, B);
  randomize(store, rng, 0.5);
  out.d = d;
  out.B = B;

  if (tc.family == JointModel::Term::Text) {
    TextPair pair{WordId(rng.below(n_words)), WordId(rng.below(n_words))};
    std::vector<WordId> neg(k);
    for (auto& n : neg) n = WordId(rng.below(n_words));
    out.label = "T";
    out.fd = oracle::finite_difference_check(store, [&](const oracle::Store& s, oracle::Grads& g) {
      return weight * text_loss_grad<double>(pair, neg, s, g, weight);
    });
    return true;
  }

  if (tc.family == JointModel::Term::BaselineL) {
    const WordId e = WordId(rng.below(n_words));
    auto draw = [&] {
      std::vector<double> v(B);
      for (auto& x : v) x = rng.normal();
      return v;
    };
    const auto v_e = draw();
    std::vector<std::vector<double>> negs(k);
    for (auto& n : negs) n = draw();
    std::vector<std::span<const double>> neg_spans(negs.begin(), negs.end());
    const double gamma = rng.uniform(0.1, 1.0);
    VisualProjection proj(d, B, 99 + config_index);
    // Reject draws with a hinge argument near 0.
    std::vector<double> t(store.T.row(e).begin(), store.T.row(e).end());
    const double cp = cosine(std::span<const double>(t), std::span<const double>(proj.apply(std::span<const double>(v_e))));
    for (const auto& n : negs) {
      const double cn = cosine(std::span<const double>(t), std::span<const double>(proj.apply(std::span<const double>(n))));
      if (std::fabs(gamma - cp + cn) < 1e-3) return false;
    }
    out.label = "L";
    out.fd = oracle::finite_difference_check(store, [&](const oracle::Store& s, oracle::Grads& g) {
      return weight * baselineL_loss_grad<double, double>(e, v_e, neg_spans, s, gamma, proj, g, weight);
    });
    return true;
  }

  // Visual families; spatial cases rotate their base over O, P, P_full.
  ContextModelKind kind = *tc.kind;
  if (kind.spatial) kind.base = std::array{ContextBase::Objects, ContextBase::Patch,
                                           ContextBase::FullMasked}[config_index % 3];
  std::vector<std::vector<double>> feats(k + 1, std::vector<double>(B));
  for (auto& f : feats)
    for (auto& x : f) x = rng.normal();
  auto ctx = [&](std::size_t i) {
    return kind.uses_object_table() ? ContextInput<double>::object(std::int32_t(rng.below(4)))
                                    : ContextInput<double>::feature(feats[i]);
  };
  VisualSample<double> sample;
  sample.entity = WordId(rng.below(n_words));
  sample.positive = ctx(0);
  for (std::size_t i = 0; i < k; ++i) sample.negatives.push_back(ctx(i + 1));
  if (kind.spatial) {
    auto box = [&] {
      const double w = rng.uniform(5, 40), h = rng.uniform(5, 40);
      return BBox{rng.uniform(0, 100 - w), rng.uniform(0, 80 - h), w, h};
    };
    const BBox e = box();
    sample.spatial = spatial_vec(kind.spatial->features, e, box(), 100, 80);
    // every other configuration gives each negative its own geometry
    if (config_index % 2)
      for (std::size_t i = 0; i < k; ++i)
        sample.negative_spatial.push_back(spatial_vec(kind.spatial->features, e, box(), 100, 80));
  }
  out.label = format_kind(kind);
  out.fd = oracle::finite_difference_check(store, [&](const oracle::Store& s, oracle::Grads& g) {
    return weight * visual_loss_grad<double>(kind, sample, s, g, weight);
  });
  return true;
}

// `per_term` accepted configurations for each term case.
inline std::vector<CaseResult> run_suite(std::size_t per_term, std::uint64_t seed) {
  std::vector<CaseResult> results;
  ctxvec::Rng rng(seed);
  for (const auto& tc : term_cases()) {
    std::size_t accepted = 0, index = 0;
    while (accepted < per_term) {
      CaseResult r;
      if (run_case(tc, rng, index++, r)) {
        results.push_back(std::move(r));
        ++accepted;
      }
    }
  }
  return results;
}

}  // namespace gradcheck
