#pragma once

// Learned matrices, their initialization, and the CVP1 / text embedding
// serializations.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxvec/binary_io.hpp"
#include "ctxvec/error.hpp"
#include "ctxvec/matrix.hpp"
#include "ctxvec/random.hpp"
#include "ctxvec/textcorpus.hpp"

namespace ctxvec {

inline constexpr std::size_t kSpatialDim = 4;

// All parameters of the joint model.
//   T  words x d       shared target embeddings
//   U  words x d       text context table
//   V  objects x d     object context table; object_rows() maps word id -> row
//   N  d x B           projection of CNN activations
//   M_concat  d x (d+4)
//   M_bilinear stored as (4*d) x d: entry (k, l, j) sits at row k*d + l, column j,
//              and contributes s_k * v_l to output component j.
template <typename Real>
class BasicParameterStore {
 public:
  using value_type = Real;

  BasicParameterStore() = default;
  BasicParameterStore(std::vector<std::string> words, std::vector<WordId> object_words,
                      std::size_t d, std::size_t B)
      : d_(d), B_(B), words_(std::move(words)), object_words_(std::move(object_words)) {
    if (d < 1 || B < 1) throw InitError("d and B must be >= 1");
    object_row_.assign(words_.size(), -1);
    for (std::size_t r = 0; r < object_words_.size(); ++r) {
      if (object_words_[r] >= words_.size()) throw InitError("object word id out of range");
      object_row_[object_words_[r]] = static_cast<std::int32_t>(r);
    }
    T = Matrix<Real>(words_.size(), d);
    U = Matrix<Real>(words_.size(), d);
    V = Matrix<Real>(object_words_.size(), d);
    N = Matrix<Real>(d, B);
    M_concat = Matrix<Real>(d, d + kSpatialDim);
    M_bilinear = Matrix<Real>(kSpatialDim * d, d);
  }

  std::size_t dim() const noexcept { return d_; }
  std::size_t feature_dim() const noexcept { return B_; }
  std::size_t vocab_size() const noexcept { return words_.size(); }
  std::size_t object_count() const noexcept { return object_words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::vector<WordId>& object_words() const noexcept { return object_words_; }

  // Row of V for a word, or -1 when the word never appears as a scene entity.
  std::int32_t object_row(WordId w) const { return w < object_row_.size() ? object_row_[w] : -1; }

  Real& bilinear(std::size_t k, std::size_t l, std::size_t j) { return M_bilinear(k * d_ + l, j); }
  Real bilinear(std::size_t k, std::size_t l, std::size_t j) const {
    return M_bilinear(k * d_ + l, j);
  }

  bool all_finite() const {
    return T.all_finite() && U.all_finite() && V.all_finite() && N.all_finite() &&
           M_concat.all_finite() && M_bilinear.all_finite();
  }

  template <typename Other>
  BasicParameterStore<Other> cast() const {
    BasicParameterStore<Other> out(words_, object_words_, d_, B_);
    out.T = Matrix<Other>::cast_from(T);
    out.U = Matrix<Other>::cast_from(U);
    out.V = Matrix<Other>::cast_from(V);
    out.N = Matrix<Other>::cast_from(N);
    out.M_concat = Matrix<Other>::cast_from(M_concat);
    out.M_bilinear = Matrix<Other>::cast_from(M_bilinear);
    return out;
  }

  friend bool operator==(const BasicParameterStore& a, const BasicParameterStore& b) {
    return a.d_ == b.d_ && a.B_ == b.B_ && a.words_ == b.words_ &&
           a.object_words_ == b.object_words_ && a.T == b.T && a.U == b.U && a.V == b.V &&
           a.N == b.N && a.M_concat == b.M_concat && a.M_bilinear == b.M_bilinear;
  }

  Matrix<Real> T, U, V, N, M_concat, M_bilinear;

 private:
  std::size_t d_ = 0;
  std::size_t B_ = 0;
  std::vector<std::string> words_;
  std::vector<WordId> object_words_;
  std::vector<std::int32_t> object_row_;
};

using ParameterStore = BasicParameterStore<float>;

// ---------------------------------------------------------------------------
// Text embedding format: "count dim" then "word v1 ... vd" per line.

template <typename Real>
struct TextEmbeddings {
  std::vector<std::string> words;
  Matrix<Real> vectors;
};

template <typename Real>
void write_text_embeddings(std::ostream& os, const std::vector<std::string>& words,
                           const Matrix<Real>& m) {
  if (words.size() != m.rows()) throw FormatError("word list does not match matrix rows");
  os << m.rows() << ' ' << m.cols() << '\n';
  os << std::setprecision(std::numeric_limits<Real>::max_digits10);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    os << words[r];
    for (auto v : m.row(r)) os << ' ' << v;
    os << '\n';
  }
}

template <typename Real = float>
TextEmbeddings<Real> read_text_embeddings(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("embedding file is empty");
  std::istringstream header(line);
  std::size_t rows = 0, cols = 0;
  if (!(header >> rows >> cols) || cols == 0)
    throw FormatError("embedding header must be \"count dim\"");
  TextEmbeddings<Real> out;
  out.vectors = Matrix<Real>(rows, cols);
  out.words.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::getline(is, line)) throw FormatError("embedding file has fewer rows than declared");
    std::istringstream ls(line);
    std::string w;
    if (!(ls >> w)) throw FormatError("empty embedding row " + std::to_string(r + 1));
    for (std::size_t c = 0; c < cols; ++c) {
      double v;
      if (!(ls >> v))
        throw FormatError("embedding row for '" + w + "' has fewer than " +
                          std::to_string(cols) + " values");
      out.vectors(r, c) = static_cast<Real>(v);
    }
    std::string extra;
    if (ls >> extra) throw FormatError("embedding row for '" + w + "' has extra values");
    out.words.push_back(std::move(w));
  }
  return out;
}

template <typename Real = float>
TextEmbeddings<Real> load_text_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open embedding file: " + path);
  return read_text_embeddings<Real>(is);
}

// ---------------------------------------------------------------------------
// Initialization

enum class InitMode { UniformScaled, ZerosContext, FromPretrained };

struct InitSpec {
  InitMode mode = InitMode::UniformScaled;
  std::uint64_t seed = 1;
  std::string pretrained_path;  // text embedding file, FromPretrained only
};

// uniform_scaled: T, V, N, M_* i.i.d. U[-0.5/d, 0.5/d], U = 0.
// zeros_context: as above with V also zero.
// from_pretrained: as uniform_scaled, then T rows copied from the file by word.
template <typename Real = float>
BasicParameterStore<Real> init_store(std::vector<std::string> words,
                                     std::vector<WordId> object_words, std::size_t d,
                                     std::size_t B, const InitSpec& spec) {
  BasicParameterStore<Real> s(std::move(words), std::move(object_words), d, B);
  Rng rng(spec.seed);
  const double a = 0.5 / double(d);
  auto draw = [&](Matrix<Real>& m) {
    for (auto& v : m.flat()) v = static_cast<Real>(rng.uniform(-a, a));
  };
  draw(s.T);
  draw(s.V);
  draw(s.N);
  draw(s.M_concat);
  draw(s.M_bilinear);
  if (spec.mode == InitMode::ZerosContext) s.V.fill(Real(0));
  if (spec.mode == InitMode::FromPretrained) {
    auto pre = load_text_embeddings<double>(spec.pretrained_path);
    if (pre.vectors.cols() != d)
      throw InitError("pretrained dimension " + std::to_string(pre.vectors.cols()) +
                      " does not match d=" + std::to_string(d));
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < pre.words.size(); ++r) index.emplace(pre.words[r], r);
    for (std::size_t w = 0; w < s.vocab_size(); ++w) {
      auto it = index.find(s.words()[w]);
      if (it == index.end()) throw InitError("pretrained file lacks word '" + s.words()[w] + "'");
      auto src = pre.vectors.row(it->second);
      auto dst = s.T.row(w);
      for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<Real>(src[c]);
    }
  }
  return s;
}

template <typename Real = float>
BasicParameterStore<Real> init_store(const Vocabulary& vocab, std::vector<WordId> object_words,
                                     std::size_t d, std::size_t B, const InitSpec& spec) {
  return init_store<Real>(vocab.words(), std::move(object_words), d, B, spec);
}

// ---------------------------------------------------------------------------
// CVP1 native format: magic, u32 version, u32 d, u32 B, u32 words, u32 objects,
// then T, U, V, N, M_concat, M_bilinear row-major f32, then the word strings
// (u16 length + bytes) and the object word ids (u32), all little-endian.

inline constexpr std::uint32_t kStoreVersion = 1;

template <typename Real>
void write_store(std::ostream& os, const BasicParameterStore<Real>& s) {
  os.write("CVP1", 4);
  binio::write_le<std::uint32_t>(os, kStoreVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.dim()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.feature_dim()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.vocab_size()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.object_count()));
  for (const auto* m : {&s.T, &s.U, &s.V, &s.N, &s.M_concat, &s.M_bilinear})
    for (auto v : m->flat()) binio::write_f32(os, static_cast<float>(v));
  for (const auto& w : s.words()) {
    if (w.size() > 0xFFFF) throw FormatError("word longer than 65535 bytes");
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(w.size()));
    binio::write_bytes(os, w);
  }
  for (auto id : s.object_words()) binio::write_le<std::uint32_t>(os, id);
}

template <typename Real>
void save_store(const BasicParameterStore<Real>& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_store(os, s);
  if (!os) throw Error("write failed: " + path);
}

template <typename Real = float>
BasicParameterStore<Real> read_store(std::istream& is) {
  binio::expect_magic(is, "CVP1");
  const auto version = binio::read_le<std::uint32_t>(is, "version");
  if (version != kStoreVersion)
    throw FormatError("unsupported store version " + std::to_string(version));
  const auto d = binio::read_le<std::uint32_t>(is, "d");
  const auto B = binio::read_le<std::uint32_t>(is, "B");
  const auto n_words = binio::read_le<std::uint32_t>(is, "word count");
  const auto n_obj = binio::read_le<std::uint32_t>(is, "object count");
  if (d == 0 || B == 0) throw FormatError("store dims must be >= 1");
  std::vector<Matrix<Real>> mats;
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{n_words, d},
                      {n_words, d},
                      {n_obj, d},
                      {d, B},
                      {d, d + kSpatialDim},
                      {kSpatialDim * d, d}}) {
    Matrix<Real> m(r, c);
    for (auto& v : m.flat()) v = static_cast<Real>(binio::read_f32(is, "matrix data"));
    mats.push_back(std::move(m));
  }
  std::vector<std::string> words(n_words);
  for (auto& w : words) w = binio::read_bytes(is, binio::read_le<std::uint16_t>(is, "word"), "word");
  std::vector<WordId> objects(n_obj);
  for (auto& o : objects) o = binio::read_le<std::uint32_t>(is, "object id");
  if (!binio::at_eof(is)) throw FormatError("trailing bytes in store file");
  BasicParameterStore<Real> s;
  try {
    s = BasicParameterStore<Real>(std::move(words), std::move(objects), d, B);
  } catch (const InitError& e) {
    throw FormatError(e.what());
  }
  s.T = std::move(mats[0]);
  s.U = std::move(mats[1]);
  s.V = std::move(mats[2]);
  s.N = std::move(mats[3]);
  s.M_concat = std::move(mats[4]);
  s.M_bilinear = std::move(mats[5]);
  return s;
}

template <typename Real = float>
BasicParameterStore<Real> load_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open store: " + path);
  return read_store<Real>(is);
}

inline bool is_store_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char buf[4] = {};
  return is.read(buf, 4) && std::string_view(buf, 4) == "CVP1";
}

// Exports T (target embeddings) in the text format.
template <typename Real>
void export_targets(const BasicParameterStore<Real>& s, std::ostream& os) {
  write_text_embeddings(os, s.words(), s.T);
}

// Exports V with the words of its object rows.
template <typename Real>
void export_objects(const BasicParameterStore<Real>& s, std::ostream& os) {
  std::vector<std::string> names;
  for (auto id : s.object_words()) names.push_back(s.words()[id]);
  write_text_embeddings(os, names, s.V);
}

}  // namespace ctxvec
