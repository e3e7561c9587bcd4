#pragma once

// Model configurations and the model-string grammar used on the command line:
//
//   model   := joint ( SEQ joint )?            SEQ is "⊕" or "concat"
//   joint   := term ( "+" term )*
//   term    := "T" | "L" | base | "Sp(" base "," feat "," fusion ")"
//   base    := "O" | "P" | "P_full"
//   feat    := "δ" | "delta" | "d" | "c" | "categorical"
//   fusion  := "⊕" | "concat" | "b" | "bilinear"
//
// Whitespace is ignored. The canonical form uses the symbols δ and ⊕, e.g.
// "Sp(O,c,b)+T" or "O⊕T".

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxvec/error.hpp"
#include "ctxvec/spatial.hpp"

namespace ctxvec {

enum class ContextBase { Objects, Patch, FullMasked };
enum class Fusion { Concat, Bilinear };

struct SpatialOptions {
  SpatialFeatures features = SpatialFeatures::Delta;
  Fusion fusion = Fusion::Concat;
  friend bool operator==(const SpatialOptions&, const SpatialOptions&) = default;
};

struct ContextModelKind {
  ContextBase base = ContextBase::Objects;
  std::optional<SpatialOptions> spatial;

  bool uses_object_table() const { return base == ContextBase::Objects; }
  bool uses_projection() const { return base != ContextBase::Objects; }
  friend bool operator==(const ContextModelKind&, const ContextModelKind&) = default;
};

// One joint objective: a sum of loss terms sharing T.
struct JointModel {
  bool text = false;
  bool baseline_l = false;
  std::vector<ContextModelKind> visual;

  // Term order as written, for canonical formatting.
  enum class Term { Text, BaselineL, Visual };
  std::vector<std::pair<Term, std::size_t>> order;

  bool has_visual_terms() const { return baseline_l || !visual.empty(); }
  bool needs_spatial() const {
    for (const auto& k : visual)
      if (k.spatial) return true;
    return false;
  }
  friend bool operator==(const JointModel& a, const JointModel& b) {
    return a.text == b.text && a.baseline_l == b.baseline_l && a.visual == b.visual;
  }
};

// Either a single joint model, or a sequential combination "A ⊕ B" whose
// components are trained separately and merged by PCA.
struct ModelSpec {
  std::vector<JointModel> parts;  // size 1 (joint) or 2 (sequential)
  bool sequential() const { return parts.size() == 2; }
  const JointModel& joint() const { return parts.front(); }
};

inline const char* model_grammar() {
  return "model := joint [ (⊕|concat) joint ]; joint := term { + term }; "
         "term := T | L | O | P | P_full | Sp(base, δ|c, ⊕|b); base := O | P | P_full";
}

inline std::string format_kind(const ContextModelKind& k) {
  std::string base = k.base == ContextBase::Objects ? "O"
                     : k.base == ContextBase::Patch ? "P"
                                                    : "P_full";
  if (!k.spatial) return base;
  return "Sp(" + base + "," + (k.spatial->features == SpatialFeatures::Delta ? "δ" : "c") + "," +
         (k.spatial->fusion == Fusion::Concat ? "⊕" : "b") + ")";
}

inline std::string format_joint(const JointModel& m) {
  std::string out;
  for (const auto& [term, idx] : m.order) {
    if (!out.empty()) out += "+";
    switch (term) {
      case JointModel::Term::Text: out += "T"; break;
      case JointModel::Term::BaselineL: out += "L"; break;
      case JointModel::Term::Visual: out += format_kind(m.visual[idx]); break;
    }
  }
  return out;
}

inline std::string format_model(const ModelSpec& spec) {
  std::string out;
  for (const auto& p : spec.parts) {
    if (!out.empty()) out += "⊕";
    out += format_joint(p);
  }
  return out;
}

namespace detail {

inline std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') out += c;
  return out;
}

[[noreturn]] inline void bad_model(const std::string& s, const std::string& why) {
  throw UsageError("invalid model string '" + s + "': " + why + ". Grammar: " + model_grammar());
}

inline std::optional<ContextBase> parse_base(std::string_view t) {
  if (t == "O") return ContextBase::Objects;
  if (t == "P") return ContextBase::Patch;
  if (t == "P_full" || t == "Pfull" || t == "P_{full}") return ContextBase::FullMasked;
  return std::nullopt;
}

// Splits on a separator at parenthesis depth 0.
inline std::vector<std::string> split_top(const std::string& s, std::string_view sep) {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (depth == 0 && s.compare(i, sep.size(), sep) == 0) {
      out.push_back(s.substr(start, i - start));
      i += sep.size() - 1;
      start = i + 1;
    }
  }
  out.push_back(s.substr(start));
  return out;
}

inline JointModel parse_joint(const std::string& whole, const std::string& s) {
  JointModel m;
  if (s.empty()) bad_model(whole, "empty model");
  for (const auto& term : split_top(s, "+")) {
    if (term.empty()) bad_model(whole, "empty term");
    if (term == "T") {
      if (m.text) bad_model(whole, "T appears twice");
      m.text = true;
      m.order.emplace_back(JointModel::Term::Text, 0);
      continue;
    }
    if (term == "L") {
      if (m.baseline_l) bad_model(whole, "L appears twice");
      m.baseline_l = true;
      m.order.emplace_back(JointModel::Term::BaselineL, 0);
      continue;
    }
    ContextModelKind kind;
    if (auto b = parse_base(term)) {
      kind.base = *b;
    } else if (term.rfind("Sp(", 0) == 0 && term.back() == ')') {
      auto args = split_top(term.substr(3, term.size() - 4), ",");
      if (args.size() != 3) bad_model(whole, "Sp takes three arguments");
      auto b = parse_base(args[0]);
      if (!b) bad_model(whole, "unknown context base '" + args[0] + "'");
      kind.base = *b;
      SpatialOptions opt;
      if (args[1] == "δ" || args[1] == "delta" || args[1] == "d")
        opt.features = SpatialFeatures::Delta;
      else if (args[1] == "c" || args[1] == "categorical")
        opt.features = SpatialFeatures::Categorical;
      else
        bad_model(whole, "unknown spatial feature '" + args[1] + "'");
      if (args[2] == "⊕" || args[2] == "concat")
        opt.fusion = Fusion::Concat;
      else if (args[2] == "b" || args[2] == "bilinear")
        opt.fusion = Fusion::Bilinear;
      else
        bad_model(whole, "unknown fusion '" + args[2] + "'");
      kind.spatial = opt;
    } else {
      bad_model(whole, "unknown term '" + term + "'");
    }
    for (const auto& k : m.visual)
      if (k == kind) bad_model(whole, "term " + format_kind(kind) + " appears twice");
    m.order.emplace_back(JointModel::Term::Visual, m.visual.size());
    m.visual.push_back(kind);
  }
  return m;
}

}  // namespace detail

inline ModelSpec parse_model(std::string_view text) {
  const std::string whole(text);
  std::string s = detail::strip_spaces(text);
  // "concat" at top level is the ASCII spelling of ⊕; only rewrite it outside
  // parentheses so Sp(O,c,concat) is left alone.
  {
    std::string rewritten;
    int depth = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '(') ++depth;
      if (s[i] == ')') --depth;
      if (depth == 0 && s.compare(i, 6, "concat") == 0) {
        rewritten += "⊕";
        i += 5;
        continue;
      }
      rewritten += s[i];
    }
    s = rewritten;
  }
  auto parts = detail::split_top(s, "⊕");
  if (parts.size() > 2) detail::bad_model(whole, "at most one sequential ⊕");
  ModelSpec spec;
  for (const auto& p : parts) spec.parts.push_back(detail::parse_joint(whole, p));
  return spec;
}

}  // namespace ctxvec
