#ifndef PROMPTOT_TRAIN_HPP
#define PROMPTOT_TRAIN_HPP

#include "promptot/constraints.hpp"
#include "promptot/data.hpp"
#include "promptot/model.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptot::train {

struct TrainingError : std::runtime_error {
  TrainingError(int epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch(epoch) {}
  int epoch;
};

struct TrainConfig {
  double lr = 0.2;
  int epochs = 50;
  int batch_size = 16;
  constraints::ConstraintKind constraint{};
  ot::CostKind cost = ot::CostKind::SquaredEuclidean;
  ot::Solver solver = ot::ExactSolver{};
  /// Std of the vision-prompt perturbation around the zero-shot prompt.
  double prompt_init_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainConfig {
  model::Dims dims{};
  double tau = 0.01;
  double lr = 0.01;
  int epochs = 60;
  int batch_size = 32;
  double prompt_init_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double ce_loss = 0.0;
  double reg_loss = 0.0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;

  const EpochMetrics& final() const { return epochs.back(); }
  /// Header `epoch,ce_loss,reg_loss,base_acc,novel_acc,hm`, six-decimal reals.
  std::string to_csv() const;
};

/// 2ab / (a + b); 0 when a + b == 0.
double harmonic_mean(double a, double b);

struct PromptGradients {
  double ce_loss = 0.0;
  /// Unweighted regularizer value R.
  double reg_loss = 0.0;
  Vector dp;
  Vector dq;

  double total(double lambda) const { return ce_loss + lambda * reg_loss; }
};

/// Gradient of CE + lambda * R with respect to the adapted prompts for one
/// batch. `labels` index rows of `class_inputs`, the classes trained against.
/// With lambda == 0 the regularizer is not evaluated and reg_loss is 0.
PromptGradients grad_prompts(const Matrix& rows, std::span<const int> labels, const Matrix& class_inputs,
                             const model::ModelPair& model, const constraints::ConstraintKind& constraint,
                             ot::CostKind cost, const ot::Solver& solver);

/// Adapted prompts reset to the zero-shot ones, vision prompt perturbed by N(0, std^2).
void init_adapted_prompts(model::ModelPair& model, Rng& rng, double prompt_init_std);

/// Trains encoder weights and prompt constants with CE over all classes, then
/// freezes them into the zero-shot twin.
model::ModelPair pretrain_zero_shot(const data::SplitDataset& dataset, const PretrainConfig& cfg);

struct AdaptResult {
  model::ModelPair model;
  RunRecord record;
};

/// Plain SGD on the adapted prompts over the base training split.
AdaptResult adapt(const model::ModelPair& model, const data::SplitDataset& dataset, const TrainConfig& cfg);

struct SplitAccuracy {
  double base = 0.0;
  double novel = 0.0;
  double hm = 0.0;
};

/// Base eval against base classes, novel eval against novel classes.
SplitAccuracy evaluate_splits(const model::ModelPair& model, const data::SplitDataset& dataset);

}  // namespace promptot::train

#endif  // PROMPTOT_TRAIN_HPP
