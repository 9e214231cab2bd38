#pragma once

#include <string>
#include <vector>

#include "latgeo/attention.hpp"
#include "latgeo/tensor.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

// Label embeddings for the detected objects: lo holds one embedding row per
// object (shared word table, UNK fallback), ro the same rows scaled by the
// detector's class probabilities.
struct LabelSet {
  Tensor lo;
  Tensor ro;
  std::vector<double> probs;
};

LabelSet make_label_set(const std::vector<std::string>& class_words,
                        const Vocabulary& vocab, const Tensor& word_table,
                        const std::vector<double>& probs);

// Row i of the result is probs[i] * lo[i]; differentiable in lo.
Tensor rank_labels(const Tensor& lo, const std::vector<double>& probs);

// Sigmoid of multi-head attention with queries lo, keys ro, values lo:
// a per-object, per-feature gate with entries strictly inside (0,1).
Tensor label_gate(const LabelSet& labels, const AttnParams& p, int heads,
                  AttnTrace* trace = nullptr);

// Appends a constant all-ones row so the background token passes ungated.
Tensor with_background_ones(const Tensor& gate);

// Elementwise gate applied to every encoder layer's output.
std::vector<Tensor> gate_encoder_outputs(const std::vector<Tensor>& enc_outs,
                                         const Tensor& gate);

}  // namespace latgeo
