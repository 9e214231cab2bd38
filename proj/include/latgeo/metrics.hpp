#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace latgeo {

using TokenSeq = std::vector<std::string>;
using RefSet = std::vector<TokenSeq>;

struct Score {
  std::string name;
  double corpus = 0.0;
  std::vector<double> per_image;
};

// Corpus BLEU-n: geometric mean of corpus-level clipped n-gram precisions
// times the brevity penalty exp(min(0, 1 - r/c)), where r sums the
// closest-length reference per image (ties -> shorter). per_image holds
// sentence-level scores computed by the same rule; an empty candidate or a
// missing n-gram order scores 0 (no smoothing).
Score bleu(const std::vector<TokenSeq>& candidates,
           const std::vector<RefSet>& references, int n);

// Per image, max over references of F_beta (beta = 1.2) on LCS precision
// and recall; corpus value is the mean.
Score rouge_l(const std::vector<TokenSeq>& candidates,
              const std::vector<RefSet>& references);

// Frozen CIDEr-D statistics: document frequencies over reference sets and
// the corpus size. Built once (e.g. from training references) and reused so
// the fine-tuning reward does not drift as candidates change.
class CiderStats {
 public:
  static CiderStats from_references(const std::vector<RefSet>& references);

  // Candidate i is scored against references[i] using the frozen idf:
  // per n in 1..4, tf-idf vectors with count clipping against the reference,
  // cosine similarity damped by exp(-(len_c-len_r)^2 / (2 sigma^2)); mean
  // over n, average over references, scaled by 10. Zero-norm terms score 0,
  // and n-grams absent from every reference set carry zero idf (so corpus
  // duplication leaves every score exactly unchanged).
  Score score(const std::vector<TokenSeq>& candidates,
              const std::vector<RefSet>& references,
              double sigma = 6.0) const;

  int corpus_size() const { return images_; }

 private:
  double idf(int n, const std::string& gram) const;
  std::array<std::unordered_map<std::string, int>, 4> df_;
  int images_ = 0;
};

// One-shot CIDEr-D: idf from these references (>= 2 images required).
Score cider_d(const std::vector<TokenSeq>& candidates,
              const std::vector<RefSet>& references, double sigma = 6.0);

}  // namespace latgeo
