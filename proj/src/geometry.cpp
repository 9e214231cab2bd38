#include "latgeo/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "latgeo/error.hpp"

namespace latgeo {

GeometryKind geometry_kind_from_string(const std::string& s) {
  if (s == "ratio") return GeometryKind::ratio;
  if (s == "l1") return GeometryKind::l1;
  throw ConfigError("unknown geometry kind '" + s + "' (ratio, l1)");
}

std::string to_string(GeometryKind k) {
  return k == GeometryKind::ratio ? "ratio" : "l1";
}

namespace {

constexpr double kClampLo = 1e-6;  // ratio inputs clamp here before the log
constexpr double kClip = 20.0;     // descriptor components clip to +-kClip

double clip(double v) { return std::clamp(v, -kClip, kClip); }

double log_clamped(double v) { return std::log(std::max(v, kClampLo)); }

}  // namespace

Box background_box(double image_w, double image_h) {
  return Box{image_w / 2.0, image_h / 2.0, image_w, image_h};
}

GeometryMatrix pairwise_geometry(const std::vector<Box>& boxes, GeometryKind kind) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!(boxes[i].w > 0.0) || !(boxes[i].h > 0.0)) {
      throw ContractError("pairwise_geometry: degenerate box " + std::to_string(i) +
                          " (w=" + std::to_string(boxes[i].w) +
                          ", h=" + std::to_string(boxes[i].h) + ")");
    }
  }
  GeometryMatrix geo;
  geo.n = static_cast<int>(boxes.size());
  geo.kind = kind;
  geo.xi.resize(boxes.size() * boxes.size());
  for (int a = 0; a < geo.n; ++a) {
    const Box& ba = boxes[static_cast<std::size_t>(a)];
    // Per-box logs computed once; differences keep xi(a,b) == -xi(b,a) exact.
    const double lx_a = log_clamped(ba.x), ly_a = log_clamped(ba.y);
    const double lw_a = log_clamped(ba.w), lh_a = log_clamped(ba.h);
    for (int b = 0; b < geo.n; ++b) {
      const Box& bb = boxes[static_cast<std::size_t>(b)];
      auto& out = geo.xi[static_cast<std::size_t>(a) * geo.n + b];
      if (kind == GeometryKind::ratio) {
        out[0] = clip(lx_a - log_clamped(bb.x));
        out[1] = clip(ly_a - log_clamped(bb.y));
        out[2] = clip(lw_a - log_clamped(bb.w));
        out[3] = clip(lh_a - log_clamped(bb.h));
      } else {
        out[0] = clip(std::abs(ba.x - bb.x) / std::max(ba.w, kClampLo));
        out[1] = clip(std::abs(ba.y - bb.y) / std::max(ba.h, kClampLo));
        out[2] = clip(lw_a - log_clamped(bb.w));
        out[3] = clip(lh_a - log_clamped(bb.h));
      }
    }
  }
  return geo;
}

Matrix geometry_embedding(const GeometryMatrix& geo, int d_model) {
  if (d_model <= 0 || d_model % 8 != 0) {
    throw ConfigError("geometry_embedding: d_model must be a positive multiple of 8, got " +
                      std::to_string(d_model));
  }
  const int pairs = d_model / 8;  // (sin, cos) pairs per descriptor component
  const int span = d_model / 4;   // entries per descriptor component
  Matrix out(static_cast<Eigen::Index>(geo.xi.size()), d_model);
  for (std::size_t row = 0; row < geo.xi.size(); ++row) {
    for (int comp = 0; comp < 4; ++comp) {
      const double v = geo.xi[row][static_cast<std::size_t>(comp)];
      for (int i = 0; i < pairs; ++i) {
        const double omega =
            std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(pairs));
        const double angle = v * omega;
        out(static_cast<Eigen::Index>(row), comp * span + 2 * i) = std::sin(angle);
        out(static_cast<Eigen::Index>(row), comp * span + 2 * i + 1) = std::cos(angle);
      }
    }
  }
  return out;
}

std::vector<Tensor> geometry_weights(const Tensor& embed, const Tensor& w_g, int n) {
  if (embed.rows() != static_cast<Eigen::Index>(n) * n) {
    throw DimensionError("geometry_weights: embedding rows " +
                         std::to_string(embed.rows()) + " do not match n*n = " +
                         std::to_string(n * n));
  }
  if (embed.cols() != w_g.rows()) {
    throw DimensionError("geometry_weights: embedding " + shape_str(embed.value()) +
                         " vs projection " + shape_str(w_g.value()));
  }
  Tensor flat = relu(matmul(embed, w_g));  // [n*n, heads]
  std::vector<Tensor> per_head;
  per_head.reserve(static_cast<std::size_t>(w_g.cols()));
  for (Eigen::Index hcol = 0; hcol < w_g.cols(); ++hcol) {
    per_head.push_back(reshape(slice_cols(flat, hcol, 1), n, n));
  }
  return per_head;
}

}  // namespace latgeo
