#ifndef PROMPTOT_HARNESS_HPP
#define PROMPTOT_HARNESS_HPP

#include "promptot/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace promptot::harness {

inline constexpr double kLemmaTolerance = 1e-9;

struct Lemma2Report {
  int trials = 0;
  int checks = 0;  // trials x cost kinds
  int violations = 0;
  double min_gap = 0.0;  // min over checks of (pointwise - joint OT)
  double max_gap = 0.0;
};

/// Random X, X_zs with n in [2, 16], d in [2, 8]; for both cost kinds checks
/// exact OT <= point-wise + 1e-9.
Lemma2Report check_lemma2(int trials, std::uint64_t seed);

struct FeasibleSetReport {
  double epsilon = 0.0;  // the constraint level is epsilon^2
  int num_samples = 0;
  int count_pw = 0;
  int count_ot = 0;
  int violations = 0;  // inside the point-wise set but outside the OT set
};

struct FeasibleSetConfig {
  /// <= 0 selects auto-calibration: epsilon^2 is the `target_occupancy`
  /// quantile of the sampled point-wise values.
  double epsilon = 0.0;
  double target_occupancy = 0.2;
  int num_samples = 10000;
  double prompt_std = 3.0;
  std::uint64_t seed = 0;
};

/// Samples prompt pairs around the zero-shot prompts, forwards the base
/// training split and classifies each sample into the eps^2-sublevel sets of
/// the point-wise L2 loss and the exact joint OT loss.
FeasibleSetReport feasible_set_experiment(const model::ModelPair& model, const data::SplitDataset& dataset,
                                          const FeasibleSetConfig& cfg);

struct ResultRow {
  std::string key;  // lambda or constraint name
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
};

/// One full adapt run per (lambda, seed), JointOT with the rest of `cfg`.
std::vector<ResultRow> lambda_sweep(const model::ModelPair& model, const data::SplitDataset& dataset,
                                    const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                                    const train::TrainConfig& cfg);

/// One full adapt run per (constraint, seed) at cfg.constraint.lambda.
std::vector<ResultRow> compare_constraints(const model::ModelPair& model, const data::SplitDataset& dataset,
                                           const std::vector<constraints::Kind>& kinds,
                                           const std::vector<std::uint64_t>& seeds, const train::TrainConfig& cfg);

/// All eight regularizer choices, None first.
std::vector<constraints::Kind> all_kinds();

/// `epsilon,num_samples,count_pw,count_ot,violations`
std::string feasible_csv(const FeasibleSetReport& report);
/// `lambda,seed,base_acc,novel_acc,hm`
std::string lambda_csv(const std::vector<ResultRow>& rows);
/// `constraint,seed,base_acc,novel_acc,hm`
std::string compare_csv(const std::vector<ResultRow>& rows);

struct MeanAccuracy {
  double base = 0.0;
  double novel = 0.0;
  double hm = 0.0;
  int runs = 0;
};

MeanAccuracy mean_for(const std::vector<ResultRow>& rows, const std::string& key);
std::string lambda_key(double lambda);

/// Default experiment fixture: generated dataset and pretrained model.
struct Fixture {
  data::SplitDataset dataset;
  model::ModelPair model;
};

Fixture default_fixture(std::uint64_t data_seed = 0);

}  // namespace promptot::harness

#endif  // PROMPTOT_HARNESS_HPP
