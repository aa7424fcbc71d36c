#ifndef PROMPTOT_DATA_HPP
#define PROMPTOT_DATA_HPP

#include "promptot/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace promptot::data {

struct SyntheticSpec {
  int num_classes = 8;
  Eigen::Index dim = 16;
  Eigen::Index text_dim = 8;
  int train_per_class = 20;
  int eval_per_class = 50;
  /// Source-domain rows per class used only for zero-shot pretraining.
  int pretrain_per_class = 50;
  double noise_std = 1.0;
  double class_sep = 1.0;
  /// Std of the per-class offset separating the downstream (target) domain
  /// from the pretraining (source) domain.
  double domain_shift = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledRows {
  Matrix x;
  std::vector<int> labels;  // global class ids

  Eigen::Index size() const { return x.rows(); }
  bool operator==(const LabeledRows& other) const;
};

/// Base classes are [0, C/2), novel classes [C/2, C). `pretrain` holds
/// source-domain rows of all classes; the four downstream splits come from the
/// shifted target domain.
struct SplitDataset {
  std::uint64_t seed = 0;
  int num_classes = 0;
  LabeledRows pretrain;
  LabeledRows base_train;
  LabeledRows base_eval;
  LabeledRows novel_train;
  LabeledRows novel_eval;
  Matrix class_embeddings;  // C x text_dim, one fixed input row per class

  std::vector<int> base_classes() const;
  std::vector<int> novel_classes() const;
  std::vector<int> all_classes() const;

  bool operator==(const SplitDataset& other) const;
};

SplitDataset generate(const SyntheticSpec& spec);

std::string to_text(const SplitDataset& dataset);
SplitDataset from_text(const std::string& text);
void save(const SplitDataset& dataset, const std::filesystem::path& path);
SplitDataset load(const std::filesystem::path& path);

}  // namespace promptot::data

#endif  // PROMPTOT_DATA_HPP
