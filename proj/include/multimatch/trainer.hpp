#pragma once

// Training loop for MultiMatch and the baselines that share its machinery.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multimatch/abc.hpp"
#include "multimatch/apm.hpp"
#include "multimatch/datagen.hpp"
#include "multimatch/metrics.hpp"
#include "multimatch/model.hpp"
#include "multimatch/plwm.hpp"
#include "multimatch/thresholds.hpp"

namespace multimatch {

enum class Algorithm {
  SupervisedOnly,
  FixMatch,
  FreeMatch,
  MultiheadCotrain,
  MarginMatchSimplified,
  MultiMatch,
};

const char* to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
// Head count an algorithm trains with; supervised_only keeps the configured one.
std::size_t heads_for(Algorithm a, std::size_t configured);

struct TrainConfig {
  Algorithm algorithm = Algorithm::MultiMatch;
  std::size_t batch_size = 32;
  std::size_t mu = 1;
  double w_u = 1.0;
  std::size_t epochs = 20;
  double fixmatch_tau = 0.95;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;

  double w_d = 3.0;
  double percentile_f = 5.0;
  std::optional<double> gamma_min = 0.0;  // nullopt: no lower bound
  double lambda_f = 0.999;
  double lambda_m = 0.999;

  bool abc = false;
  double abc_loss_weight = 1.0;

  void validate() const;
};

// Mutable pseudo-labeling state of one run.
struct StateBundle {
  std::vector<ThresholdState> thresholds;  // one per head
  ApmLedger ledger;
  GammaState gamma;
  // Single global APM threshold of the simplified MarginMatch baseline.
  double margin_gamma = 0.0;
  std::vector<double> margin_reservoir;
};

struct StepReport {
  std::size_t step = 0;   // 1-based, global
  std::size_t epoch = 0;  // 1-based epoch the step belongs to
  bool epoch_end = false;
  std::vector<double> loss_sup;    // per head
  std::vector<double> loss_unsup;  // per head
  double abc_loss = 0.0;
  double total = 0.0;
  CategoryTally categories;
  std::vector<PseudoLabelTally> per_head;
};

struct Batch {
  std::vector<std::size_t> indices;  // rows of the source dataset
};

struct SupervisedLoss {
  std::vector<double> per_head;
  std::vector<Matrix> logit_grads;  // dL_s^h / dlogits
};

// Per-head mean cross-entropy against the labels.
SupervisedLoss supervised_loss(const HeadPredictions& preds, std::span<const std::size_t> labels);

struct UnsupervisedLoss {
  std::vector<double> per_head;
  std::vector<Matrix> logit_grads;  // dL_u^h / dstrong-logits
};

// L_u^h = (1 / n) sum_b W_h,b * CE(pseudo_label_h,b, softmax(strong_h,b)),
// n = unlabeled batch size (masked rows count in the denominator). Targets
// are constants, so only the strong-view logits receive gradient.
UnsupervisedLoss unsupervised_loss(const HeadPredictions& strong,
                                   std::span<const std::vector<PlwmDecision>> decisions);

// Pseudo-label decisions per head for one unlabeled batch, according to the
// algorithm. Baselines report weight 1 as useful_easy and 0 as not_useful.
std::vector<std::vector<PlwmDecision>> select_pseudo_labels(
    const TrainConfig& config, const HeadPredictions& weak,
    std::span<const std::size_t> sample_ids, const StateBundle& state);

class Trainer {
 public:
  Trainer(ModelConfig model_config, TrainConfig config, Split split, Augmentor augmentor);

  const TrainConfig& config() const noexcept { return config_; }
  const Model& model() const noexcept { return model_; }
  const StateBundle& state() const noexcept { return state_; }
  const AbcBalancer& abc() const noexcept { return abc_; }
  const Split& split() const noexcept { return split_; }
  std::size_t epochs_done() const noexcept { return epochs_done_; }
  std::size_t steps_done() const noexcept { return steps_done_; }
  std::size_t steps_per_epoch() const noexcept;

  StepReport train_step();
  EpochMetrics run_epoch();
  // Runs the remaining epochs up to config().epochs.
  std::vector<EpochMetrics> run();

  std::vector<std::size_t> predict(std::span<const Sample> samples) const;
  double evaluate(std::span<const Sample> samples) const;

  // Optional CSV traces; the streams must outlive the trainer.
  void set_decision_trace(std::ostream* os);
  void set_gamma_trace(std::ostream* os);

  // Only at epoch boundaries. The checkpoint holds the training state; the
  // data split is rebuilt from the run config.
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  void begin_epoch();
  void end_epoch();
  Batch next_labeled_batch();
  void update_state(const HeadPredictions& weak, std::span<const std::size_t> ids);
  double learning_rate() const;

  ModelConfig model_config_;
  TrainConfig config_;
  Split split_;
  Augmentor augmentor_;
  std::size_t num_heads_;

  Model model_;
  SgdOptimizer optimizer_;
  AbcBalancer abc_;
  SgdOptimizer abc_optimizer_;
  StateBundle state_;

  Rng labeled_order_rng_;
  Rng labeled_aug_rng_;
  Rng unlabeled_order_rng_;
  Rng unlabeled_aug_rng_;
  Rng abc_rng_;

  std::vector<std::size_t> labeled_order_;
  std::size_t labeled_pos_ = 0;
  std::vector<std::size_t> unlabeled_order_;
  std::size_t unlabeled_pos_ = 0;
  bool in_epoch_ = false;

  std::size_t epochs_done_ = 0;
  std::size_t steps_done_ = 0;

  // Accumulators for the running epoch.
  double epoch_loss_sup_ = 0.0;
  double epoch_loss_unsup_ = 0.0;
  std::size_t epoch_steps_ = 0;
  PseudoLabelTally epoch_pseudo_;
  CategoryTally epoch_categories_;

  std::ostream* decision_trace_ = nullptr;
  std::ostream* gamma_trace_ = nullptr;
};

}  // namespace multimatch
