#pragma once

#include <array>
#include <string>
#include <vector>

#include "latgeo/tensor.hpp"

namespace latgeo {

// Axis-aligned box: center coordinates plus extents, in pixels.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

// Whole-image pseudo box used when the background is attended as a token.
Box background_box(double image_w, double image_h);

enum class GeometryKind { ratio, l1 };

GeometryKind geometry_kind_from_string(const std::string& s);
std::string to_string(GeometryKind k);

// Pairwise relative-geometry descriptors over n boxes; at(a, b) is the ordered
// pair (a, b). The ratio kind is (log x_a/x_b, log y_a/y_b, log w_a/w_b,
// log h_a/h_b) computed as differences of logs of clamped values, which makes
// antisymmetry and the zero diagonal exact in floating point. The l1 kind is
// (|x_a-x_b|/w_a, |y_a-y_b|/h_a, log w_a/w_b, log h_a/h_b). All components
// clip to +-20.
struct GeometryMatrix {
  int n = 0;
  GeometryKind kind = GeometryKind::ratio;
  std::vector<std::array<double, 4>> xi;

  const std::array<double, 4>& at(int a, int b) const {
    return xi[static_cast<std::size_t>(a) * static_cast<std::size_t>(n) +
              static_cast<std::size_t>(b)];
  }
};

GeometryMatrix pairwise_geometry(const std::vector<Box>& boxes,
                                 GeometryKind kind = GeometryKind::ratio);

// Fixed sinusoid expansion of the descriptors into a [n*n, d_model] matrix
// (row a*n+b holds Emb(xi(a,b))): each of the four components drives
// d_model/8 (sin, cos) pairs at positional-encoding frequencies, concatenated.
// d_model must be divisible by 8.
Matrix geometry_embedding(const GeometryMatrix& geo, int d_model);

// Relative-geometry attention weights: one [n, n] nonnegative matrix per
// column of w_g ([d_model, heads]), computed as relu(Emb(xi) . w_g) and
// reshaped. Differentiable in w_g; `embed` is geometry_embedding output
// wrapped as a tensor so the caller can cache it per scene.
std::vector<Tensor> geometry_weights(const Tensor& embed, const Tensor& w_g, int n);

}  // namespace latgeo
