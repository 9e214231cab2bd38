#include "latgeo/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latgeo/error.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double rank_key(const CaptionHypothesis& h, const BeamOptions& opt) {
  if (!opt.length_norm) return h.log_prob;
  const auto generated = static_cast<double>(h.tokens.size()) - 1.0;
  return h.log_prob / std::pow((5.0 + generated) / 6.0, opt.length_alpha);
}

// Strict-weak order: higher rank first, lexicographically smaller ids first.
bool better(const CaptionHypothesis& a, const CaptionHypothesis& b,
            const BeamOptions& opt) {
  const double ka = rank_key(a, opt);
  const double kb = rank_key(b, opt);
  if (ka != kb) return ka > kb;
  return a.tokens < b.tokens;
}

bool terminal(const CaptionHypothesis& h, int max_len) {
  return h.finished || static_cast<int>(h.tokens.size()) >= max_len;
}

}  // namespace

Eigen::RowVectorXd next_log_probs(Eigen::RowVectorXd logits) {
  if (logits.size() < 4) {
    throw DimensionError("logit row must cover the 4 reserved ids, got " +
                         std::to_string(logits.size()));
  }
  logits(Vocabulary::kPad) = kNegInf;
  logits(Vocabulary::kStart) = kNegInf;
  logits(Vocabulary::kUnk) = kNegInf;

  const double m = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (std::isfinite(logits(i))) sum += std::exp(logits(i) - m);
  }
  const double log_z = m + std::log(sum);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (std::isfinite(logits(i))) logits(i) -= log_z;
  }
  return logits;
}

CaptionHypothesis greedy_decode(const StepLogits& step, int max_len) {
  if (max_len < 1) throw ConfigError("caption length cap must be >= 1");
  CaptionHypothesis h;
  h.tokens.push_back(Vocabulary::kStart);
  while (!h.finished && static_cast<int>(h.tokens.size()) < max_len) {
    const Eigen::RowVectorXd lp = next_log_probs(step(h.tokens));
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (!std::isfinite(lp(i))) continue;
      if (best < 0 || lp(i) > lp(best)) best = i;  // ties keep the lower id
    }
    h.tokens.push_back(static_cast<int>(best));
    h.log_prob += lp(best);
    h.finished = best == Vocabulary::kEnd;
  }
  return h;
}

std::vector<CaptionHypothesis> beam_search(const StepLogits& step, int k,
                                           int max_len,
                                           const BeamOptions& opt) {
  if (k < 1) throw ConfigError("beam width must be >= 1");
  if (max_len < 1) throw ConfigError("caption length cap must be >= 1");

  std::vector<CaptionHypothesis> beam(1);
  beam[0].tokens.push_back(Vocabulary::kStart);

  auto any_live = [&]() {
    return std::any_of(beam.begin(), beam.end(), [&](const auto& h) {
      return !terminal(h, max_len);
    });
  };

  while (any_live()) {
    std::vector<CaptionHypothesis> candidates;
    for (const CaptionHypothesis& h : beam) {
      if (terminal(h, max_len)) {
        candidates.push_back(h);  // competes as-is, never extended
        continue;
      }
      const Eigen::RowVectorXd lp = next_log_probs(step(h.tokens));
      for (Eigen::Index i = 0; i < lp.size(); ++i) {
        if (!std::isfinite(lp(i))) continue;
        CaptionHypothesis next = h;
        next.tokens.push_back(static_cast<int>(i));
        next.log_prob += lp(i);
        next.finished = i == Vocabulary::kEnd;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [&](const auto& a, const auto& b) { return better(a, b, opt); });
    if (static_cast<int>(candidates.size()) > k) {
      candidates.resize(static_cast<std::size_t>(k));
    }
    beam = std::move(candidates);
  }
  return beam;
}

namespace {

StepLogits model_step(Model& model, const EncodeResult& enc) {
  return [&model, &enc](const std::vector<int>& prefix) {
    Tensor logits = model.decode(enc, prefix);
    return Eigen::RowVectorXd(logits.value().row(logits.rows() - 1));
  };
}

}  // namespace

CaptionHypothesis greedy_caption(Model& model, const Scene& scene,
                                 int max_len) {
  const int cap = max_len > 0 ? max_len : model.config().max_len;
  EncodeResult enc = model.encode(scene);
  return greedy_decode(model_step(model, enc), cap);
}

std::vector<CaptionHypothesis> beam_captions(Model& model, const Scene& scene,
                                             int k, int max_len,
                                             const BeamOptions& opt) {
  const int cap = max_len > 0 ? max_len : model.config().max_len;
  EncodeResult enc = model.encode(scene);
  return beam_search(model_step(model, enc), k, cap, opt);
}

std::string caption_text(const CaptionHypothesis& hyp, const Vocabulary& v) {
  return v.decode(hyp.tokens);
}

}  // namespace latgeo
