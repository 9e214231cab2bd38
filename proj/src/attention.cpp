#include "latgeo/attention.hpp"

#include <cmath>

#include "latgeo/error.hpp"

namespace latgeo {

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttnParams& p, int heads,
                            const AttnOptions& opt) {
  const Eigen::Index d_model = p.wq.cols();
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) +
                      " heads do not divide d_model " +
                      std::to_string(d_model));
  }
  if ((opt.mem_k == nullptr) != (opt.mem_v == nullptr)) {
    throw ContractError("attention: memory keys and values come together");
  }
  Tensor qp = matmul(q, p.wq);
  Tensor kp = matmul(k, p.wk);
  Tensor vp = matmul(v, p.wv);
  const Eigen::Index n_q = qp.rows();
  const Eigen::Index n_real = kp.rows();
  Eigen::Index n_mem = 0;
  if (opt.mem_k != nullptr) {
    if (opt.mem_k->rows() != opt.mem_v->rows()) {
      throw DimensionError("attention: memory keys " +
                           shape_str(opt.mem_k->value()) + " vs values " +
                           shape_str(opt.mem_v->value()));
    }
    n_mem = opt.mem_k->rows();
    if (n_mem > 0) {
      kp = concat_rows({kp, *opt.mem_k});
      vp = concat_rows({vp, *opt.mem_v});
    }
  }
  if (opt.key_bias != nullptr &&
      static_cast<int>(opt.key_bias->size()) != heads) {
    throw DimensionError("attention: " +
                         std::to_string(opt.key_bias->size()) +
                         " bias matrices for " + std::to_string(heads) +
                         " heads");
  }
  const Eigen::Index d_k = d_model / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(qp, h * d_k, d_k);
    Tensor kh = slice_cols(kp, h * d_k, d_k);
    Tensor vh = slice_cols(vp, h * d_k, d_k);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    if (opt.key_bias != nullptr) {
      const Tensor& bias = (*opt.key_bias)[h];
      if (bias.rows() != n_q || bias.cols() != n_real) {
        throw DimensionError("attention: key bias " + shape_str(bias.value()) +
                             " does not cover queries x real keys " +
                             shape_str(n_q, n_real));
      }
      Tensor log_bias = ln(clamp_min(bias, kKeyBiasFloor));
      if (n_mem > 0) {
        log_bias =
            concat_cols({log_bias, constant(Matrix::Zero(n_q, n_mem))});
      }
      scores = add(scores, log_bias);
    }
    Tensor weights = softmax_rows(scores, opt.mask);
    if (opt.trace != nullptr) {
      opt.trace->add(opt.trace_name + ".h" + std::to_string(h),
                     weights.value());
    }
    head_outs.push_back(matmul(weights, vh));
  }
  return matmul(concat_cols(head_outs), p.wo);
}

}  // namespace latgeo
