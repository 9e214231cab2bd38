#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>

#include "latgeo/tensor.hpp"

namespace latgeo {

// Inverse-square-root schedule with linear warmup:
//   d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(std::int64_t step, int d_model, int warmup);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParamStore. Moments live here keyed by parameter
// name so they serialize alongside the weights.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update from the gradients currently on the parameters.
  // A NaN/Inf gradient raises a divergence error naming the parameter.
  void step(ParamStore& params, double lr);

  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

  // Checkpoint access: first/second moment buffers by parameter name.
  std::unordered_map<std::string, Matrix>& m() { return m_; }
  std::unordered_map<std::string, Matrix>& v() { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Matrix> m_;
  std::unordered_map<std::string, Matrix> v_;
};

}  // namespace latgeo
