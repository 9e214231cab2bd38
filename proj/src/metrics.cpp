#include "latgeo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "latgeo/error.hpp"

namespace latgeo {

namespace {

constexpr int kMaxOrder = 4;
constexpr char kSep = '\x1f';

void check_aligned(const std::vector<TokenSeq>& cands,
                   const std::vector<RefSet>& refs) {
  if (cands.size() != refs.size()) {
    throw DimensionError("metrics: " + std::to_string(cands.size()) +
                         " candidates vs " + std::to_string(refs.size()) +
                         " reference sets");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) {
      throw ContractError("metrics: image " + std::to_string(i) +
                          " has no references");
    }
  }
}

std::unordered_map<std::string, int> ngram_counts(const TokenSeq& toks,
                                                  int n) {
  std::unordered_map<std::string, int> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (int k = 1; k < n; ++k) {
      key += kSep;
      key += toks[i + k];
    }
    ++out[key];
  }
  return out;
}

struct BleuCounts {
  std::array<std::int64_t, kMaxOrder> match{};
  std::array<std::int64_t, kMaxOrder> total{};
  std::int64_t cand_len = 0;
  std::int64_t ref_len = 0;
};

BleuCounts bleu_counts(const TokenSeq& cand, const RefSet& refs, int n) {
  BleuCounts c;
  c.cand_len = static_cast<std::int64_t>(cand.size());
  // Closest reference length; ties favor the shorter reference.
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  std::int64_t best_diff = std::numeric_limits<std::int64_t>::max();
  for (const auto& r : refs) {
    auto len = static_cast<std::int64_t>(r.size());
    auto diff = std::llabs(len - c.cand_len);
    if (diff < best_diff || (diff == best_diff && len < best)) {
      best_diff = diff;
      best = len;
    }
  }
  c.ref_len = best;
  for (int k = 1; k <= n; ++k) {
    auto cc = ngram_counts(cand, k);
    std::unordered_map<std::string, int> clip;
    for (const auto& r : refs) {
      for (const auto& [g, cnt] : ngram_counts(r, k)) {
        auto& slot = clip[g];
        slot = std::max(slot, cnt);
      }
    }
    for (const auto& [g, cnt] : cc) {
      c.total[k - 1] += cnt;
      auto it = clip.find(g);
      if (it != clip.end()) c.match[k - 1] += std::min(cnt, it->second);
    }
  }
  return c;
}

double bleu_from_counts(const BleuCounts& c, int n) {
  if (c.cand_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int k = 0; k < n; ++k) {
    if (c.match[k] == 0 || c.total[k] == 0) return 0.0;
    log_prec += std::log(static_cast<double>(c.match[k]) /
                         static_cast<double>(c.total[k]));
  }
  double bp = c.cand_len >= c.ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(c.ref_len) /
                                       static_cast<double>(c.cand_len));
  return bp * std::exp(log_prec / n);
}

int lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace

Score bleu(const std::vector<TokenSeq>& candidates,
           const std::vector<RefSet>& references, int n) {
  if (n < 1 || n > kMaxOrder) {
    throw ConfigError("bleu: order must be in 1..4, got " + std::to_string(n));
  }
  check_aligned(candidates, references);
  Score s;
  s.name = "bleu" + std::to_string(n);
  BleuCounts corpus;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    BleuCounts c = bleu_counts(candidates[i], references[i], n);
    for (int k = 0; k < n; ++k) {
      corpus.match[k] += c.match[k];
      corpus.total[k] += c.total[k];
    }
    corpus.cand_len += c.cand_len;
    corpus.ref_len += c.ref_len;
    s.per_image.push_back(bleu_from_counts(c, n));
  }
  s.corpus = bleu_from_counts(corpus, n);
  return s;
}

Score rouge_l(const std::vector<TokenSeq>& candidates,
              const std::vector<RefSet>& references) {
  check_aligned(candidates, references);
  constexpr double kBeta = 1.2;
  constexpr double kBeta2 = kBeta * kBeta;
  Score s;
  s.name = "rougeL";
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const auto& r : references[i]) {
      if (candidates[i].empty() || r.empty()) continue;
      double l = lcs_length(candidates[i], r);
      double prec = l / static_cast<double>(candidates[i].size());
      double rec = l / static_cast<double>(r.size());
      double denom = rec + kBeta2 * prec;
      double f = denom > 0.0 ? (1.0 + kBeta2) * prec * rec / denom : 0.0;
      best = std::max(best, f);
    }
    s.per_image.push_back(best);
    sum += best;
  }
  s.corpus = candidates.empty() ? 0.0 : sum / candidates.size();
  return s;
}

CiderStats CiderStats::from_references(const std::vector<RefSet>& references) {
  if (references.size() < 2) {
    throw ContractError(
        "cider_d: document frequencies need a corpus of at least 2 images, "
        "got " +
        std::to_string(references.size()));
  }
  CiderStats stats;
  stats.images_ = static_cast<int>(references.size());
  for (const auto& refs : references) {
    for (int n = 1; n <= kMaxOrder; ++n) {
      std::unordered_map<std::string, int> seen;
      for (const auto& r : refs) {
        for (const auto& [g, cnt] : ngram_counts(r, n)) seen[g] = 1;
      }
      for (const auto& [g, one] : seen) ++stats.df_[n - 1][g];
    }
  }
  return stats;
}

double CiderStats::idf(int n, const std::string& gram) const {
  // Zero weight for n-grams no reference set contains: they carry no signal,
  // and this keeps scores exactly invariant under corpus duplication (df and
  // the corpus size double together only for n-grams that appear at all).
  auto it = df_[n - 1].find(gram);
  if (it == df_[n - 1].end()) return 0.0;
  return std::log(static_cast<double>(images_)) -
         std::log(static_cast<double>(it->second));
}

Score CiderStats::score(const std::vector<TokenSeq>& candidates,
                        const std::vector<RefSet>& references,
                        double sigma) const {
  check_aligned(candidates, references);
  using Vec = std::unordered_map<std::string, double>;
  auto tfidf = [&](const TokenSeq& toks, int n, double& norm) {
    Vec v;
    for (const auto& [g, cnt] : ngram_counts(toks, n)) {
      v[g] = cnt * idf(n, g);
    }
    double sq = 0.0;
    for (const auto& [g, w] : v) sq += w * w;
    norm = std::sqrt(sq);
    return v;
  };
  Score s;
  s.name = "ciderD";
  double corpus_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::array<Vec, kMaxOrder> cv;
    std::array<double, kMaxOrder> cnorm{};
    for (int n = 1; n <= kMaxOrder; ++n) {
      cv[n - 1] = tfidf(candidates[i], n, cnorm[n - 1]);
    }
    double acc = 0.0;
    for (const auto& r : references[i]) {
      double delta = static_cast<double>(candidates[i].size()) -
                     static_cast<double>(r.size());
      double damp = std::exp(-delta * delta / (2.0 * sigma * sigma));
      for (int n = 1; n <= kMaxOrder; ++n) {
        double rnorm = 0.0;
        Vec rv = tfidf(r, n, rnorm);
        if (cnorm[n - 1] == 0.0 || rnorm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : cv[n - 1]) {
          auto it = rv.find(g);
          if (it != rv.end()) dot += std::min(w, it->second) * it->second;
        }
        acc += damp * dot / (cnorm[n - 1] * rnorm);
      }
    }
    double val =
        10.0 * acc / (kMaxOrder * static_cast<double>(references[i].size()));
    s.per_image.push_back(val);
    corpus_sum += val;
  }
  s.corpus = candidates.empty() ? 0.0 : corpus_sum / candidates.size();
  return s;
}

Score cider_d(const std::vector<TokenSeq>& candidates,
              const std::vector<RefSet>& references, double sigma) {
  return CiderStats::from_references(references).score(candidates, references,
                                                       sigma);
}

}  // namespace latgeo
