#ifndef PROMPTOT_CONSTRAINTS_HPP
#define PROMPTOT_CONSTRAINTS_HPP

#include "promptot/ot.hpp"

#include <span>
#include <string_view>

namespace promptot::constraints {

/// Consistency regularizers between adapted and zero-shot features.
/// VisionOT / TextOT restrict the joint OT loss to one modality.
enum class Kind { None, L2, L1, CosinePW, SeparateOT, JointOT, VisionOT, TextOT };

std::string_view to_string(Kind kind);
Kind parse_kind(std::string_view name);
bool uses_ot(Kind kind);

struct ConstraintKind {
  Kind kind = Kind::JointOT;
  double lambda = 10.0;

  void validate() const;
};

enum class PointwiseMetric { L2, L1, CosinePW };

/// Per-instance [h_i || g_{y_i}], each half unit-normalized.
struct JointRepresentation {
  Matrix x;
  Eigen::Index vision_dim = 0;

  Eigen::Index text_dim() const { return x.cols() - vision_dim; }
};

struct LossAndGrad {
  double value = 0.0;
  Matrix grad;
};

struct SeparateLoss {
  double value = 0.0;
  Matrix grad_h;
  Matrix grad_g;
};

JointRepresentation build_joint(const Matrix& h, const Matrix& g_per_instance);

/// Rows of `class_features` selected by `labels`, one per instance.
Matrix gather_rows(const Matrix& class_features, std::span<const int> labels);

/// OT cost between the uniform empirical distributions of x and x_zs; the
/// gradient holds the solver's plan fixed.
LossAndGrad loss_jot(const Matrix& x, const Matrix& x_zs, ot::CostKind kind, const ot::Solver& solver);
inline LossAndGrad loss_jot(const JointRepresentation& x, const JointRepresentation& x_zs, ot::CostKind kind,
                            const ot::Solver& solver) {
  return loss_jot(x.x, x_zs.x, kind, solver);
}

LossAndGrad loss_pointwise(const Matrix& x, const Matrix& x_zs, PointwiseMetric metric);

SeparateLoss loss_separate_ot(const Matrix& h, const Matrix& h_zs, const Matrix& g, const Matrix& g_zs,
                              ot::CostKind kind, const ot::Solver& solver);

/// Diagonal coupling diag(1/n): the point-wise loss written as a transport plan.
ot::TransportPlan pointwise_as_plan(Eigen::Index n);

/// <gamma, C>
double transport_cost(const ot::TransportPlan& plan, const Matrix& cost);

/// Features of one mini-batch: vision rows per instance, text rows per class.
struct BatchFeatures {
  Matrix h;
  Matrix g;
};

struct RegularizerResult {
  double value = 0.0;
  Matrix grad_h;
  Matrix grad_g;
};

/// Unweighted regularizer R(adapted, zero_shot) and its gradient with respect
/// to the adapted vision rows and class text rows. `labels` index rows of g.
RegularizerResult regularizer(Kind kind, const BatchFeatures& adapted, const BatchFeatures& zero_shot,
                              std::span<const int> labels, ot::CostKind cost, const ot::Solver& solver);

}  // namespace promptot::constraints

#endif  // PROMPTOT_CONSTRAINTS_HPP
