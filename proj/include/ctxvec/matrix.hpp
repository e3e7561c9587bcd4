#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ctxvec {

// Dense row-major matrix. Rows are exposed as spans so embedding tables can be
// read and updated without copies.
template <typename Real>
class Matrix {
 public:
  using value_type = Real;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const Real& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<Real> flat() { return data_; }
  std::span<const Real> flat() const { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  static Matrix cast_from(const Matrix<Other>& m) {
    Matrix out(m.rows(), m.cols());
    auto src = m.flat();
    std::transform(src.begin(), src.end(), out.data_.begin(),
                   [](Other v) { return static_cast<Real>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

template <typename A, typename B>
auto dot(std::span<A> a, std::span<B> b) {
  assert(a.size() == b.size());
  std::remove_const_t<A> s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename A>
auto squared_norm(std::span<A> a) {
  std::remove_const_t<A> s{};
  for (auto v : a) s += v * v;
  return s;
}

// Cosine similarity in double precision; 0 when either side is a zero vector.
template <typename A, typename B>
double cosine(std::span<A> a, std::span<B> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * double(b[i]);
    aa += double(a[i]) * double(a[i]);
    bb += double(b[i]) * double(b[i]);
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace ctxvec
