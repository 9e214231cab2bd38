#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latgeo/checkpoint.hpp"
#include "latgeo/decode.hpp"
#include "latgeo/metrics.hpp"
#include "latgeo/model.hpp"
#include "latgeo/optim.hpp"
#include "latgeo/rng.hpp"
#include "latgeo/scene.hpp"
#include "latgeo/tensor.hpp"

namespace latgeo {

struct TrainConfig {
  double smoothing = 0.1;  // probability mass spread off the target word
  int warmup_steps = 200;  // linear warmup length of the lr schedule
  double lr_scale = 1.0;   // multiplies the schedule (0 freezes the weights)
  double rl_lr = 1e-4;     // fixed learning rate of the reward phase
  int beam_k = 5;          // rollouts per scene in the reward phase
  int patience = 5;        // epochs without validation improvement before stop
  int batch_size = 4;      // scenes per optimizer step
  int max_epochs = 30;
  std::uint64_t seed = 0;
  int refs_per_scene = 5;  // epoch e teacher-forces reference e mod this
  bool rl_sample = false;  // temperature rollouts instead of beam hypotheses
  double rl_temperature = 1.0;
  std::string checkpoint_dir;  // best.ckpt / last.ckpt land here when set
  std::string log_path;        // CSV: epoch,split,loss,cider_d,lr,seconds

  void validate() const;  // throws ConfigError
};

// Mean smoothed cross-entropy of logits rows [t x V] against targets [t],
// skipping positions whose target is the padding id. `eps` of the probability
// mass moves off the target onto the other V-1 classes; eps = 0 is plain
// negative log-likelihood. Every position padding is a contract error.
Tensor xe_loss(const Tensor& logits, const std::vector<int>& targets,
               double eps);

// Fraction of non-padding target positions whose (masked) argmax logit equals
// the target, teacher-forcing every reference caption of every scene.
double teacher_forced_accuracy(Model& model, const std::vector<Scene>& scenes);

// Differentiable log-probability (1x1) of a fixed start-led token sequence
// under the decoder's masked next-token distribution — the quantity the
// reward phase weights by (reward - baseline).
Tensor sequence_log_prob(Model& model, const EncodeResult& enc,
                         const std::vector<int>& tokens);

struct ScstResult {
  double baseline = 0.0;     // mean rollout reward
  double mean_reward = 0.0;  // same value, kept for reporting clarity
  std::vector<CaptionHypothesis> rollouts;
  std::vector<double> rewards;
  Tensor surrogate;  // 1x1; backward() pushes above-baseline captions up
};

// Self-critical surrogate for one scene: k rollouts (beam hypotheses, or
// temperature samples when cfg.rl_sample), each scored against the scene's
// references with the frozen idf statistics; baseline = mean of the rollout
// rewards, so equal rewards produce an exactly zero gradient.
ScstResult scst_surrogate(Model& model, const Scene& scene,
                          const CiderStats& stats, const TrainConfig& cfg,
                          std::mt19937_64& sample_rng);

struct EpochRow {
  int epoch = 0;
  std::string split;     // "train" or "val"
  double loss = 0.0;     // NaN on validation rows
  double cider = 0.0;    // NaN on training rows
  double lr = 0.0;
  double seconds = 0.0;
};

// Two-phase trainer: cross-entropy with the warmup schedule, then an optional
// reward phase at a fixed learning rate. Both phases early-stop on the
// greedy-decoded validation score and persist best/last checkpoints.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  // Returns the best validation score reached. A non-finite loss aborts with
  // a divergence error; the best checkpoint on disk stays intact.
  double fit_xe(const std::vector<Scene>& train, const std::vector<Scene>& val);
  double fit_rl(const std::vector<Scene>& train, const std::vector<Scene>& val);

  // Adopts optimizer moments, RNG streams, epoch, and best score from a
  // checkpoint so a resumed run continues exactly where the original stopped.
  void resume_from(const Checkpoint& c);

  double validation_score(const std::vector<Scene>& val);

  Adam& optimizer() { return adam_; }
  RngHub& rngs() { return rngs_; }
  int epochs_run() const { return epoch_; }
  const std::vector<EpochRow>& history() const { return history_; }

 private:
  template <class StepFn>
  double fit_phase(const std::vector<Scene>& train,
                   const std::vector<Scene>& val, const std::string& phase,
                   StepFn&& batch_loss);
  void write_row(const EpochRow& row);
  void save_state(const std::string& name, const std::string& phase);

  Model& model_;
  TrainConfig cfg_;
  Adam adam_;
  RngHub rngs_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  std::string phase_;  // empty until a fit phase starts
  double best_ = -1.0;  // any real score beats the sentinel
  std::vector<EpochRow> history_;
};

}  // namespace latgeo
