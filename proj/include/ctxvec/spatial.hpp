#pragma once

// 4-d spatial descriptors between an entity box e and a context box c.

#include <array>
#include <cmath>

#include "ctxvec/scenegraph.hpp"

namespace ctxvec {

enum class SpatialFeatures { Delta, Categorical };

struct SpatialVec {
  std::array<double, 4> values{};
  SpatialFeatures variant = SpatialFeatures::Delta;

  double operator[](std::size_t i) const { return values[i]; }
  friend bool operator==(const SpatialVec&, const SpatialVec&) = default;
};

// Indices of the categorical indicators.
enum CategoricalSlot : std::size_t { kBelow = 0, kBeside = 1, kAbove = 2, kBigger = 3 };

// (dx, dy, dw, dh): center offsets normalized by image width/height (dy > 0 means
// the context lies below) and raw size ratios context/entity.
inline SpatialVec delta_vec(const BBox& e, const BBox& c, double img_w, double img_h) {
  SpatialVec s;
  s.variant = SpatialFeatures::Delta;
  s.values = {(c.center_x() - e.center_x()) / img_w, (c.center_y() - e.center_y()) / img_h,
              c.w / e.w, c.h / e.h};
  return s;
}

// (below, beside, above, bigger) indicators. The below and above rules overlap
// only at dx = dy = 0, which is classified as below.
inline SpatialVec categorical_vec(const BBox& e, const BBox& c, double img_w, double img_h) {
  const auto d = delta_vec(e, c, img_w, img_h);
  const double dx = d[0], dy = d[1];
  SpatialVec s;
  s.variant = SpatialFeatures::Categorical;
  if (std::abs(dx) <= dy)
    s.values[kBelow] = 1;
  else if (std::abs(dx) <= -dy)
    s.values[kAbove] = 1;
  else
    s.values[kBeside] = 1;
  s.values[kBigger] = d[2] * d[3] >= 1.0 ? 1 : 0;
  return s;
}

inline SpatialVec spatial_vec(SpatialFeatures variant, const BBox& e, const BBox& c,
                              double img_w, double img_h) {
  return variant == SpatialFeatures::Delta ? delta_vec(e, c, img_w, img_h)
                                           : categorical_vec(e, c, img_w, img_h);
}

}  // namespace ctxvec
