#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "latgeo/model.hpp"
#include "latgeo/scene.hpp"

namespace latgeo {

// One candidate caption during or after search. `tokens` always begins with
// the start id; `log_prob` is the sum of the (masked, renormalized) next-token
// log-probabilities of every generated token, so it never increases as the
// caption grows. A finished hypothesis ends with the end id and is never
// extended again.
struct CaptionHypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;
};

struct BeamOptions {
  // Rank candidates by log_prob / ((5 + generated) / 6)^alpha instead of the
  // raw sum. Off by default: raw cumulative log-probability decides.
  bool length_norm = false;
  double length_alpha = 0.65;
};

// Maps a start-led token prefix to one row of raw vocabulary logits for the
// next position. Decoding applies its own masking and normalization on top.
using StepLogits =
    std::function<Eigen::RowVectorXd(const std::vector<int>& prefix)>;

// Next-token log-probabilities: pad, start, and unk are removed and the
// remaining mass renormalized (masked entries come back as -infinity). The
// end token stays available at every step, so an immediate end yields the
// empty caption.
Eigen::RowVectorXd next_log_probs(Eigen::RowVectorXd logits);

// Argmax decoding until the end token or `max_len` total tokens (start and
// end included). Exact score ties pick the smallest token id.
CaptionHypothesis greedy_decode(const StepLogits& step, int max_len);

// Standard beam search, widest-first: every live hypothesis expands over the
// whole vocabulary, finished and length-capped hypotheses stay in the pool,
// and the top k by cumulative log-probability survive each round. Ties break
// by lexicographically smaller token sequence. Returns up to k hypotheses,
// best first. k must be >= 1.
std::vector<CaptionHypothesis> beam_search(const StepLogits& step, int k,
                                           int max_len,
                                           const BeamOptions& opt = {});

// Model-backed entry points; max_len <= 0 uses the model's configured cap.
CaptionHypothesis greedy_caption(Model& model, const Scene& scene,
                                 int max_len = 0);
std::vector<CaptionHypothesis> beam_captions(Model& model, const Scene& scene,
                                             int k, int max_len = 0,
                                             const BeamOptions& opt = {});

// The generated words (everything strictly between start and end) as text.
std::string caption_text(const CaptionHypothesis& hyp, const Vocabulary& v);

}  // namespace latgeo
