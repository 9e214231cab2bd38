#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "latgeo/decode.hpp"
#include "latgeo/error.hpp"
#include "latgeo/rng.hpp"
#include "latgeo/synth.hpp"
#include "testutil.hpp"

using namespace latgeo;
using namespace latgeo::testutil;

namespace {

constexpr int kA = 4;  // first two non-reserved ids in any vocabulary
constexpr int kB = 5;

// Markov toy: the next-token logits depend on the last token only.
Eigen::RowVectorXd markov_logits(const std::vector<int>& prefix) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6);
  switch (prefix.back()) {
    case Vocabulary::kStart:
      row(Vocabulary::kEnd) = 0.5;
      row(kA) = 2.0;
      row(kB) = 1.8;
      break;
    case kA:
      row(kA) = 0.3;
      row(Vocabulary::kEnd) = 1.5;
      row(kB) = 1.2;
      break;
    default:
      row(Vocabulary::kEnd) = 2.0;
      row(kA) = 0.5;
      row(kB) = 0.2;
      break;
  }
  return row;
}

// Pure pseudo-random toy: logits are a deterministic function of the prefix.
Eigen::RowVectorXd hashed_logits(const std::vector<int>& prefix, int vocab,
                                 std::uint64_t salt) {
  std::uint64_t h = salt;
  for (int t : prefix) h = h * 1000003469ull + static_cast<std::uint64_t>(t) + 1;
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Eigen::RowVectorXd row(vocab);
  for (int i = 0; i < vocab; ++i) row(i) = u(rng);
  return row;
}

// Every terminal sequence reachable under the masked distribution: ends with
// the end token, or runs unfinished into the length cap.
void enumerate_all(const StepLogits& step, std::vector<int>& prefix, double lp,
                   int max_len, std::vector<CaptionHypothesis>& out) {
  if (static_cast<int>(prefix.size()) >= max_len) {
    out.push_back({prefix, lp, false});
    return;
  }
  const Eigen::RowVectorXd row = next_log_probs(step(prefix));
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    if (!std::isfinite(row(i))) continue;
    prefix.push_back(static_cast<int>(i));
    if (i == Vocabulary::kEnd) {
      out.push_back({prefix, lp + row(i), true});
    } else {
      enumerate_all(step, prefix, lp + row(i), max_len, out);
    }
    prefix.pop_back();
  }
}

std::vector<CaptionHypothesis> oracle_ranked(const StepLogits& step,
                                             int max_len) {
  std::vector<CaptionHypothesis> all;
  std::vector<int> prefix = {Vocabulary::kStart};
  enumerate_all(step, prefix, 0.0, max_len, all);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  });
  return all;
}

void check_well_formed(const CaptionHypothesis& h, int max_len) {
  REQUIRE_FALSE(h.tokens.empty());
  CHECK(h.tokens.front() == Vocabulary::kStart);
  CHECK(static_cast<int>(h.tokens.size()) <= max_len);
  CHECK(h.log_prob <= 0.0);
  if (h.finished) CHECK(h.tokens.back() == Vocabulary::kEnd);
  for (std::size_t i = 1; i < h.tokens.size(); ++i) {
    CHECK(h.tokens[i] != Vocabulary::kPad);
    CHECK(h.tokens[i] != Vocabulary::kStart);
    CHECK(h.tokens[i] != Vocabulary::kUnk);
    if (h.tokens[i] == Vocabulary::kEnd) CHECK(i + 1 == h.tokens.size());
  }
}

Vocabulary decode_vocab() {
  std::vector<std::string> caps;
  for (int i = 0; i < 6; ++i) {
    caps.push_back("cat dog boat bird big small left right");
  }
  return Vocabulary::build(caps, 5);
}

}  // namespace

TEST_CASE("decode: masked renormalization keeps only real words and end") {
  Eigen::RowVectorXd logits(6);
  logits << 7.0, 3.0, 0.0, 9.0, std::log(2.0), std::log(4.0);
  Eigen::RowVectorXd lp = next_log_probs(logits);

  CHECK(lp(Vocabulary::kPad) == -std::numeric_limits<double>::infinity());
  CHECK(lp(Vocabulary::kStart) == -std::numeric_limits<double>::infinity());
  CHECK(lp(Vocabulary::kUnk) == -std::numeric_limits<double>::infinity());
  CHECK(lp(Vocabulary::kEnd) == doctest::Approx(std::log(1.0 / 7.0)).epsilon(1e-14));
  CHECK(lp(kA) == doctest::Approx(std::log(2.0 / 7.0)).epsilon(1e-14));
  CHECK(lp(kB) == doctest::Approx(std::log(4.0 / 7.0)).epsilon(1e-14));

  double mass = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    if (std::isfinite(lp(i))) mass += std::exp(lp(i));
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(next_log_probs(Eigen::RowVectorXd::Zero(3)), DimensionError);
}

TEST_CASE("decode: greedy follows forced logits and stays deterministic") {
  const std::vector<int> forced = {kA, kB, kA, Vocabulary::kEnd};
  auto step = [&](const std::vector<int>& prefix) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6);
    row(forced[prefix.size() - 1]) = 50.0;
    return row;
  };

  CaptionHypothesis h = greedy_decode(step, 22);
  CHECK(h.tokens == std::vector<int>{Vocabulary::kStart, kA, kB, kA,
                                     Vocabulary::kEnd});
  CHECK(h.finished);
  check_well_formed(h, 22);

  CaptionHypothesis again = greedy_decode(step, 22);
  CHECK(again.tokens == h.tokens);
  CHECK(again.log_prob == h.log_prob);

  Vocabulary v = decode_vocab();
  CHECK(caption_text(h, v) == "cat dog cat");
}

TEST_CASE("decode: an immediate end argmax yields the empty caption") {
  auto step = [](const std::vector<int>&) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6);
    row(Vocabulary::kEnd) = 10.0;
    return row;
  };
  CaptionHypothesis h = greedy_decode(step, 22);
  CHECK(h.tokens == std::vector<int>{Vocabulary::kStart, Vocabulary::kEnd});
  CHECK(h.finished);
  CHECK(caption_text(h, decode_vocab()).empty());
}

TEST_CASE("decode: exact argmax ties pick the smallest token id") {
  auto step = [](const std::vector<int>& prefix) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6);
    if (prefix.size() == 1) {
      row(kA) = 1.25;  // same logit: id 4 must win over id 5
      row(kB) = 1.25;
    } else {
      row(Vocabulary::kEnd) = 9.0;
    }
    return row;
  };
  CaptionHypothesis h = greedy_decode(step, 22);
  CHECK(h.tokens ==
        std::vector<int>{Vocabulary::kStart, kA, Vocabulary::kEnd});
}

TEST_CASE("decode: the length cap halts an endless sentence unfinished") {
  auto step = [](const std::vector<int>&) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(6);
    row(kA) = 8.0;  // never chooses end on its own
    return row;
  };
  CaptionHypothesis h = greedy_decode(step, 5);
  CHECK(h.tokens.size() == 5);
  CHECK_FALSE(h.finished);
  check_well_formed(h, 5);

  auto beams = beam_search(step, 3, 5);
  for (const auto& b : beams) check_well_formed(b, 5);
  CHECK(beams.front().tokens == h.tokens);
}

TEST_CASE("decode: beam width one reproduces greedy exactly") {
  for (std::uint64_t salt : {1ull, 2ull, 3ull, 17ull}) {
    auto step = [&](const std::vector<int>& p) {
      return hashed_logits(p, 9, salt);
    };
    CaptionHypothesis g = greedy_decode(step, 7);
    auto beam = beam_search(step, 1, 7);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens == g.tokens);
    CHECK(beam[0].log_prob == g.log_prob);
    CHECK(beam[0].finished == g.finished);
  }
}

TEST_CASE("decode: wider beams never score below greedy") {
  for (std::uint64_t salt : {5ull, 11ull, 23ull}) {
    auto step = [&](const std::vector<int>& p) {
      return hashed_logits(p, 9, salt);
    };
    CaptionHypothesis g = greedy_decode(step, 7);
    for (int k : {2, 3, 5}) {
      auto beam = beam_search(step, k, 7);
      REQUIRE_FALSE(beam.empty());
      CHECK(beam.front().log_prob >= g.log_prob - 1e-12);
      // Returned list is sorted best-first and well formed throughout.
      for (std::size_t i = 0; i + 1 < beam.size(); ++i) {
        CHECK(beam[i].log_prob >= beam[i + 1].log_prob);
      }
      for (const auto& h : beam) check_well_formed(h, 7);
      CHECK(static_cast<int>(beam.size()) <= k);
    }
  }
}

TEST_CASE("decode: beam of two recovers the exhaustive top pair") {
  auto ranked = oracle_ranked(markov_logits, 5);
  REQUIRE(ranked.size() == 31);  // 15 finished + 16 cap-length sequences

  auto beam = beam_search(markov_logits, 2, 5);
  REQUIRE(beam.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(beam[static_cast<std::size_t>(i)].tokens ==
          ranked[static_cast<std::size_t>(i)].tokens);
    CHECK(beam[static_cast<std::size_t>(i)].log_prob ==
          doctest::Approx(ranked[static_cast<std::size_t>(i)].log_prob)
              .epsilon(1e-12));
  }
  // The runner-up is a real alternative, not a prefix artifact.
  CHECK(beam[0].tokens != beam[1].tokens);
}

TEST_CASE("decode: an unpruned beam enumerates the whole sequence space") {
  auto ranked = oracle_ranked(markov_logits, 5);
  const int huge = 7776;  // vocab^cap: wider than every reachable sequence
  auto beam = beam_search(markov_logits, huge, 5);
  REQUIRE(beam.size() == ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(beam[i].tokens == ranked[i].tokens);
    CHECK(beam[i].log_prob ==
          doctest::Approx(ranked[i].log_prob).epsilon(1e-12));
    CHECK(beam[i].finished == ranked[i].finished);
  }
}

TEST_CASE("decode: length normalization can promote a longer caption") {
  // After start: end carries e^-1 of the mass. After a word: end carries 0.55.
  auto step = [](const std::vector<int>& prefix) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Constant(6, -40.0);
    if (prefix.back() == Vocabulary::kStart) {
      row(Vocabulary::kEnd) = std::log(std::exp(-1.0));
      row(kA) = std::log(1.0 - std::exp(-1.0) - 1e-9);
      row(kB) = std::log(1e-9);
    } else {
      row(Vocabulary::kEnd) = std::log(0.55);
      row(kA) = std::log(0.45 - 1e-9);
      row(kB) = std::log(1e-9);
    }
    return row;
  };

  auto raw = beam_search(step, 2, 6);
  CHECK(raw.front().tokens ==
        std::vector<int>{Vocabulary::kStart, Vocabulary::kEnd});

  BeamOptions wu;
  wu.length_norm = true;
  auto normed = beam_search(step, 2, 6, wu);
  CHECK(normed.front().tokens ==
        std::vector<int>{Vocabulary::kStart, kA, Vocabulary::kEnd});
}

TEST_CASE("decode: width and cap contracts") {
  CHECK_THROWS_AS(beam_search(markov_logits, 0, 5), ConfigError);
  CHECK_THROWS_AS(greedy_decode(markov_logits, 0), ConfigError);
}

TEST_CASE("decode: model-backed captions are deterministic and beam-safe") {
  Vocabulary v = decode_vocab();
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.memory_slots = 2;
  cfg.d_feat = 8;
  cfg.vocab_size = v.size();
  cfg.max_len = 8;
  cfg.dropout = 0.0;
  Model m(cfg, v, 77);

  SynthConfig sy;
  sy.scenes = 1;
  sy.seed = 42;
  sy.d_feat = 8;
  Scene sc = generate_scene(42, sy);

  CaptionHypothesis g1 = greedy_caption(m, sc);
  CaptionHypothesis g2 = greedy_caption(m, sc);
  check_well_formed(g1, cfg.max_len);
  CHECK(g1.tokens == g2.tokens);
  CHECK(g1.log_prob == g2.log_prob);

  auto beam = beam_captions(m, sc, 3);
  REQUIRE_FALSE(beam.empty());
  CHECK(beam.front().log_prob >= g1.log_prob - 1e-12);
  for (const auto& h : beam) check_well_formed(h, cfg.max_len);

  // Proposal order is presentation, not content: the search lands on the
  // same caption either way.
  Scene permuted = sc;
  permuted.id = sc.id + "-permuted";
  std::rotate(permuted.proposals.begin(), permuted.proposals.begin() + 1,
              permuted.proposals.end());
  auto beam_p = beam_captions(m, permuted, 3);
  REQUIRE(beam_p.size() == beam.size());
  CHECK(beam_p.front().tokens == beam.front().tokens);
  CHECK(beam_p.front().log_prob ==
        doctest::Approx(beam.front().log_prob).epsilon(1e-9));
}
