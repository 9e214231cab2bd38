#include "latgeo/optim.hpp"

#include <cmath>

#include "latgeo/error.hpp"

namespace latgeo {

double noam_lr(std::int64_t step, int d_model, int warmup) {
  if (step < 1) throw ContractError("noam_lr: step must be >= 1");
  if (d_model < 1 || warmup < 1) {
    throw ConfigError("noam_lr: d_model and warmup must be positive");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void Adam::step(ParamStore& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params.items()) {
    const Matrix& g = p.grad();
    if (!g.allFinite()) {
      throw DivergenceError("adam: non-finite gradient on parameter '" + name + "'");
    }
    Matrix& m = m_[name];
    Matrix& v = v_[name];
    if (m.size() == 0) m = Matrix::Zero(g.rows(), g.cols());
    if (v.size() == 0) v = Matrix::Zero(g.rows(), g.cols());
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = (cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * g.array().square()).matrix();
    const Matrix mhat = m / bc1;
    const Matrix vhat = v / bc2;
    p.mutable_value().array() -=
        lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

}  // namespace latgeo
