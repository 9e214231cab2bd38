#pragma once

#include <string>
#include <vector>

#include "latgeo/tensor.hpp"

namespace latgeo {

// Floor applied to multiplicative key biases before taking logs: keeps a
// query with an all-zero bias row attending somewhere, and passes a bias of
// exactly 1 through untouched so the unbiased build is reproduced bit for bit.
inline constexpr double kKeyBiasFloor = 1e-8;

// Projection set for one multi-head attention block; each matrix is
// [d_model x d_model].
struct AttnParams {
  Tensor wq, wk, wv, wo;
};

// Attention distributions and gate activations captured during a forward
// pass, for CSV export and inspection.
struct AttnTrace {
  struct Entry {
    std::string name;
    Matrix values;  // attention: queries x keys; gates: tokens x features
  };
  std::vector<Entry> entries;
  void add(std::string name, const Matrix& v) {
    entries.push_back({std::move(name), v});
  }
};

struct AttnOptions {
  // Per-head nonnegative multiplicative bias over the real key positions
  // ([n_q x n_k] each). Memory rows stay neutral (bias 1, i.e. log-bias 0).
  const std::vector<Tensor>* key_bias = nullptr;
  // Trainable rows appended to keys/values after projection ([M x d_model]).
  const Tensor* mem_k = nullptr;
  const Tensor* mem_v = nullptr;
  // [n_q x n_keys_total]; false blocks the key for that query.
  const BoolArray* mask = nullptr;
  AttnTrace* trace = nullptr;
  std::string trace_name;
};

// Multi-head attention. Per head: scores q k^T / sqrt(d_k) over projected
// keys plus any memory rows; the key bias multiplies the exponentiated
// scores via a log-domain additive term; weights are row-normalized, applied
// to values, and the concatenated heads go through wo.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttnParams& p, int heads,
                            const AttnOptions& opt = {});

}  // namespace latgeo
