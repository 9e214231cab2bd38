#include "latgeo/lam.hpp"

#include "latgeo/error.hpp"

namespace latgeo {

LabelSet make_label_set(const std::vector<std::string>& class_words,
                        const Vocabulary& vocab, const Tensor& word_table,
                        const std::vector<double>& probs) {
  if (class_words.empty()) {
    throw ContractError("label set: no objects");
  }
  if (class_words.size() != probs.size()) {
    throw DimensionError("label set: " + std::to_string(class_words.size()) +
                         " class words vs " + std::to_string(probs.size()) +
                         " probabilities");
  }
  std::vector<int> ids;
  ids.reserve(class_words.size());
  for (const auto& w : class_words) ids.push_back(vocab.encode_word(w));
  LabelSet ls;
  ls.lo = embed_lookup(word_table, ids);
  ls.probs = probs;
  ls.ro = rank_labels(ls.lo, probs);
  return ls;
}

Tensor rank_labels(const Tensor& lo, const std::vector<double>& probs) {
  if (lo.rows() != static_cast<Eigen::Index>(probs.size())) {
    throw DimensionError("rank_labels: " + shape_str(lo.value()) + " vs " +
                         std::to_string(probs.size()) + " probabilities");
  }
  Matrix scalers(lo.rows(), lo.cols());
  for (Eigen::Index i = 0; i < lo.rows(); ++i) {
    scalers.row(i).setConstant(probs[static_cast<std::size_t>(i)]);
  }
  return mul(lo, constant(std::move(scalers)));
}

Tensor label_gate(const LabelSet& labels, const AttnParams& p, int heads,
                  AttnTrace* trace) {
  AttnOptions opt;
  opt.trace = trace;
  opt.trace_name = "lam";
  Tensor gate =
      sigmoid(multi_head_attention(labels.lo, labels.ro, labels.lo, p, heads, opt));
  if (trace != nullptr) trace->add("lam.gate", gate.value());
  return gate;
}

Tensor with_background_ones(const Tensor& gate) {
  return concat_rows({gate, constant(Matrix::Ones(1, gate.cols()))});
}

std::vector<Tensor> gate_encoder_outputs(const std::vector<Tensor>& enc_outs,
                                         const Tensor& gate) {
  std::vector<Tensor> gated;
  gated.reserve(enc_outs.size());
  for (const auto& e : enc_outs) gated.push_back(mul(e, gate));
  return gated;
}

}  // namespace latgeo
