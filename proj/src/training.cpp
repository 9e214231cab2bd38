#include "latgeo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "latgeo/error.hpp"

namespace latgeo {

void TrainConfig::validate() const {
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ConfigError("smoothing must lie in [0, 1)");
  }
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (lr_scale < 0.0) throw ConfigError("lr_scale must be >= 0");
  if (rl_lr <= 0.0) throw ConfigError("rl_lr must be positive");
  if (beam_k < 1) throw ConfigError("beam_k must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (refs_per_scene < 1) throw ConfigError("refs_per_scene must be >= 1");
  if (rl_temperature <= 0.0) throw ConfigError("rl_temperature must be positive");
}

Tensor xe_loss(const Tensor& logits, const std::vector<int>& targets,
               double eps) {
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("smoothing must lie in [0, 1)");
  const Eigen::Index t = logits.rows();
  const Eigen::Index v = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != t) {
    throw DimensionError("got " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(t) + " logit rows");
  }
  if (v < 2) throw DimensionError("need at least 2 classes");
  Eigen::Index live = 0;
  for (int id : targets) {
    if (id < 0 || id >= v) {
      throw IndexError("target id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(v));
    }
    if (id != Vocabulary::kPad) ++live;
  }
  if (live == 0) throw ContractError("every position is padding");

  Tensor lp = log_softmax_rows(logits);
  Tensor picked = take_per_row(lp, targets);                   // [t,1]
  Tensor row_sum = matmul(lp, constant(Matrix::Ones(v, 1)));   // [t,1]
  const double off = eps / static_cast<double>(v - 1);
  Tensor per_pos =
      add(scale(picked, 1.0 - eps - off), scale(row_sum, off));

  Matrix weight(t, 1);  // negated mean over live positions
  for (Eigen::Index i = 0; i < t; ++i) {
    weight(i, 0) = targets[static_cast<std::size_t>(i)] == Vocabulary::kPad
                       ? 0.0
                       : -1.0 / static_cast<double>(live);
  }
  return sum_all(mul(per_pos, constant(weight)));
}

namespace {

// The decode-time policy: pad, start, and unk never score.
BoolArray decode_mask(Eigen::Index rows, Eigen::Index vocab) {
  BoolArray mask(rows, vocab);
  mask.setConstant(true);
  mask.col(Vocabulary::kPad).setConstant(false);
  mask.col(Vocabulary::kStart).setConstant(false);
  mask.col(Vocabulary::kUnk).setConstant(false);
  return mask;
}

std::vector<int> prefix_of(const std::vector<int>& tokens) {
  return {tokens.begin(), tokens.end() - 1};
}

std::vector<int> targets_of(const std::vector<int>& tokens) {
  return {tokens.begin() + 1, tokens.end()};
}

TokenSeq hypothesis_words(const CaptionHypothesis& h, const Vocabulary& v) {
  TokenSeq words;
  for (std::size_t i = 1; i < h.tokens.size(); ++i) {
    if (h.tokens[i] == Vocabulary::kEnd) break;
    words.push_back(v.word(h.tokens[i]));
  }
  return words;
}

CaptionHypothesis sample_rollout(const StepLogits& step, int max_len,
                                 double temperature, std::mt19937_64& rng) {
  CaptionHypothesis h;
  h.tokens.push_back(Vocabulary::kStart);
  while (!h.finished && static_cast<int>(h.tokens.size()) < max_len) {
    const Eigen::RowVectorXd lp = next_log_probs(step(h.tokens));
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lp.size(); ++i) m = std::max(m, lp(i));
    Eigen::VectorXd tempered = Eigen::VectorXd::Zero(lp.size());
    double z = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (!std::isfinite(lp(i))) continue;
      tempered(i) = std::exp((lp(i) - m) / temperature);
      z += tempered(i);
    }
    double u = uniform01(rng) * z;
    Eigen::Index chosen = -1;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (tempered(i) == 0.0) continue;
      u -= tempered(i);
      chosen = i;
      if (u <= 0.0) break;  // falls through to the last live entry on rounding
    }
    h.tokens.push_back(static_cast<int>(chosen));
    h.log_prob += lp(chosen);
    h.finished = chosen == Vocabulary::kEnd;
  }
  return h;
}

}  // namespace

Tensor sequence_log_prob(Model& model, const EncodeResult& enc,
                         const std::vector<int>& tokens) {
  if (tokens.size() < 2 || tokens.front() != Vocabulary::kStart) {
    throw ContractError("sequence must be start-led with at least one step");
  }
  Tensor logits = model.decode(enc, prefix_of(tokens));
  const BoolArray mask = decode_mask(logits.rows(), logits.cols());
  Tensor lp = log_softmax_rows(logits, &mask);
  return sum_all(take_per_row(lp, targets_of(tokens)));
}

double teacher_forced_accuracy(Model& model, const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw ContractError("no scenes to score");
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (const Scene& s : scenes) {
    if (s.refs.empty()) {
      throw ContractError("scene '" + s.id + "' has no reference captions");
    }
    EncodeResult enc = model.encode(s);
    for (const std::string& ref : s.refs) {
      const std::vector<int> ids =
          model.vocab().encode(ref, model.config().max_len);
      Tensor logits = model.decode(enc, prefix_of(ids));
      const std::vector<int> targets = targets_of(ids);
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int want = targets[static_cast<std::size_t>(i)];
        if (want == Vocabulary::kPad) continue;
        Eigen::Index best = -1;
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
          if (j == Vocabulary::kPad || j == Vocabulary::kStart ||
              j == Vocabulary::kUnk) {
            continue;
          }
          if (best < 0 || logits.value()(i, j) > logits.value()(i, best)) {
            best = j;
          }
        }
        correct += best == want ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

ScstResult scst_surrogate(Model& model, const Scene& scene,
                          const CiderStats& stats, const TrainConfig& cfg,
                          std::mt19937_64& sample_rng) {
  if (scene.refs.empty()) {
    throw ContractError("scene '" + scene.id + "' has no reference captions");
  }
  EncodeResult enc = model.encode(scene);
  auto step = [&](const std::vector<int>& prefix) {
    Tensor logits = model.decode(enc, prefix);
    return Eigen::RowVectorXd(logits.value().row(logits.rows() - 1));
  };
  const int cap = model.config().max_len;

  ScstResult out;
  if (cfg.rl_sample) {
    for (int j = 0; j < cfg.beam_k; ++j) {
      out.rollouts.push_back(
          sample_rollout(step, cap, cfg.rl_temperature, sample_rng));
    }
  } else {
    out.rollouts = beam_search(step, cfg.beam_k, cap);
  }

  RefSet refs;
  for (const std::string& r : scene.refs) refs.push_back(tokenize(r));
  for (const CaptionHypothesis& h : out.rollouts) {
    const TokenSeq cand = hypothesis_words(h, model.vocab());
    out.rewards.push_back(stats.score({cand}, {refs}).corpus);
  }

  const auto k = static_cast<double>(out.rollouts.size());
  double sum = 0.0;
  bool all_equal = true;
  for (double r : out.rewards) {
    sum += r;
    all_equal = all_equal && r == out.rewards.front();
  }
  // Equal rewards must cancel exactly, not just to rounding error.
  out.baseline = all_equal ? out.rewards.front() : sum / k;
  out.mean_reward = sum / k;

  Tensor surrogate;
  for (std::size_t j = 0; j < out.rollouts.size(); ++j) {
    const double w = -(out.rewards[j] - out.baseline) / k;
    Tensor term =
        scale(sequence_log_prob(model, enc, out.rollouts[j].tokens), w);
    surrogate = surrogate.defined() ? add(surrogate, term) : term;
  }
  out.surrogate = surrogate;
  return out;
}

Trainer::Trainer(Model& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)), rngs_(RngHub::from_seed(cfg_.seed)) {
  cfg_.validate();
  if (!cfg_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg_.checkpoint_dir);
  }
  if (!cfg_.log_path.empty()) {
    std::ofstream log(cfg_.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open training log '" + cfg_.log_path + "'");
    log << "epoch,split,loss,cider_d,lr,seconds\n";
  }
}

void Trainer::resume_from(const Checkpoint& c) {
  restore_checkpoint(c, model_, &adam_, &rngs_);
  epoch_ = c.epoch;
  best_epoch_ = c.best_epoch;
  best_ = c.best_cider;
  phase_ = c.phase;
}

double Trainer::validation_score(const std::vector<Scene>& val) {
  std::vector<TokenSeq> cands;
  std::vector<RefSet> refs;
  for (const Scene& s : val) {
    CaptionHypothesis h = greedy_caption(model_, s);
    cands.push_back(tokenize(caption_text(h, model_.vocab())));
    RefSet rs;
    for (const std::string& r : s.refs) rs.push_back(tokenize(r));
    refs.push_back(std::move(rs));
  }
  return cider_d(cands, refs).corpus;
}

void Trainer::write_row(const EpochRow& row) {
  history_.push_back(row);
  if (cfg_.log_path.empty()) return;
  std::ofstream log(cfg_.log_path, std::ios::app);
  if (!log) throw IoError("cannot append to training log '" + cfg_.log_path + "'");
  auto field = [](double x) {
    if (!std::isfinite(x)) return std::string();
    std::ostringstream s;
    s << std::setprecision(10) << x;
    return s.str();
  };
  log << row.epoch << ',' << row.split << ',' << field(row.loss) << ','
      << field(row.cider) << ',' << field(row.lr) << ',' << field(row.seconds)
      << '\n';
}

void Trainer::save_state(const std::string& name, const std::string& phase) {
  if (cfg_.checkpoint_dir.empty()) return;
  Checkpoint c = Checkpoint::capture(model_, adam_, rngs_);
  c.best_cider = best_;
  c.best_epoch = best_epoch_;
  c.epoch = epoch_;
  c.phase = phase;
  save_checkpoint(cfg_.checkpoint_dir + "/" + name, c);
}

template <class StepFn>
double Trainer::fit_phase(const std::vector<Scene>& train,
                          const std::vector<Scene>& val,
                          const std::string& phase, StepFn&& scene_loss) {
  if (train.empty()) throw ContractError("training split is empty");
  if (val.size() < 2) {
    throw ContractError("validation split needs at least 2 scenes");
  }
  const bool rl = phase == "rl";

  while (epoch_ < cfg_.max_epochs && epoch_ - best_epoch_ < cfg_.patience) {
    ++epoch_;
    const auto t0 = std::chrono::steady_clock::now();

    // Fisher-Yates with the pinned draw helper: std::shuffle is free to
    // consume the engine differently across standard libraries.
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(rngs_.data, 0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    int batches = 0;
    double lr = 0.0;
    for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(cfg_.batch_size));
      model_.params().zero_grad();
      Tensor total;
      for (std::size_t i = at; i < end; ++i) {
        Tensor one = scene_loss(train[order[i]]);
        total = total.defined() ? add(total, one) : one;
      }
      Tensor loss = scale(total, 1.0 / static_cast<double>(end - at));
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        throw DivergenceError("loss is not finite at epoch " +
                              std::to_string(epoch_) + " (" + phase +
                              " phase); best checkpoint retained");
      }
      backward(loss);
      lr = rl ? cfg_.rl_lr
              : noam_lr(adam_.t() + 1, model_.config().d_model,
                        cfg_.warmup_steps) *
                    cfg_.lr_scale;
      adam_.step(model_.params(), lr);
      loss_sum += value;
      ++batches;
    }

    const double train_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    write_row({epoch_, "train", loss_sum / batches,
               std::numeric_limits<double>::quiet_NaN(), lr, train_secs});

    const auto v0 = std::chrono::steady_clock::now();
    const double score = validation_score(val);
    const double val_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - v0)
            .count();
    write_row({epoch_, "val", std::numeric_limits<double>::quiet_NaN(), score,
               lr, val_secs});

    if (score > best_) {
      best_ = score;
      best_epoch_ = epoch_;
      save_state("best.ckpt", phase);
    }
    save_state("last.ckpt", phase);
  }
  return best_;
}

double Trainer::fit_xe(const std::vector<Scene>& train,
                       const std::vector<Scene>& val) {
  phase_ = "xe";
  auto scene_loss = [&](const Scene& s) {
    if (s.refs.empty()) {
      throw ContractError("scene '" + s.id + "' has no reference captions");
    }
    const int span =
        std::min<int>(cfg_.refs_per_scene, static_cast<int>(s.refs.size()));
    const std::string& ref =
        s.refs[static_cast<std::size_t>((epoch_ - 1) % span)];
    const std::vector<int> ids =
        model_.vocab().encode(ref, model_.config().max_len);
    Tensor logits =
        model_.forward(s, prefix_of(ids), /*training=*/true, &rngs_.dropout);
    return xe_loss(logits, targets_of(ids), cfg_.smoothing);
  };
  return fit_phase(train, val, "xe", scene_loss);
}

double Trainer::fit_rl(const std::vector<Scene>& train,
                       const std::vector<Scene>& val) {
  std::vector<RefSet> train_refs;
  for (const Scene& s : train) {
    RefSet rs;
    for (const std::string& r : s.refs) rs.push_back(tokenize(r));
    train_refs.push_back(std::move(rs));
  }
  const CiderStats stats = CiderStats::from_references(train_refs);

  if (phase_ != "rl") {
    // Fresh reward phase: restart the epoch frame, and make the starting
    // weights the incumbent so this phase can never lose a model the
    // supervised phase already validated.
    phase_ = "rl";
    epoch_ = 0;
    best_epoch_ = 0;
    best_ = validation_score(val);
    save_state("best.ckpt", "rl");
  }
  auto scene_loss = [&](const Scene& s) {
    return scst_surrogate(model_, s, stats, cfg_, rngs_.sampling).surrogate;
  };
  return fit_phase(train, val, "rl", scene_loss);
}

}  // namespace latgeo
