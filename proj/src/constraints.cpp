#include "promptot/constraints.hpp"

namespace promptot::constraints {

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::L2: return "l2";
    case Kind::L1: return "l1";
    case Kind::CosinePW: return "cos";
    case Kind::SeparateOT: return "sep-ot";
    case Kind::JointOT: return "joint-ot";
    case Kind::VisionOT: return "vision-ot";
    case Kind::TextOT: return "text-ot";
  }
  return "?";
}

Kind parse_kind(std::string_view name) {
  for (Kind k : {Kind::None, Kind::L2, Kind::L1, Kind::CosinePW, Kind::SeparateOT, Kind::JointOT,
                 Kind::VisionOT, Kind::TextOT})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown constraint '" + std::string(name) + "'");
}

bool uses_ot(Kind kind) {
  return kind == Kind::SeparateOT || kind == Kind::JointOT || kind == Kind::VisionOT || kind == Kind::TextOT;
}

void ConstraintKind::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
}

JointRepresentation build_joint(const Matrix& h, const Matrix& g_per_instance) {
  if (h.rows() != g_per_instance.rows())
    throw ShapeError("build_joint: " + std::to_string(h.rows()) + " vision rows vs " +
                     std::to_string(g_per_instance.rows()) + " text rows");
  JointRepresentation joint;
  joint.vision_dim = h.cols();
  joint.x.resize(h.rows(), h.cols() + g_per_instance.cols());
  joint.x << normalize_rows(h), normalize_rows(g_per_instance);
  return joint;
}

Matrix gather_rows(const Matrix& class_features, std::span<const int> labels) {
  Matrix out(static_cast<Eigen::Index>(labels.size()), class_features.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_features.rows())
      throw ShapeError("gather_rows: label " + std::to_string(labels[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = class_features.row(labels[i]);
  }
  return out;
}

LossAndGrad loss_jot(const Matrix& x, const Matrix& x_zs, ot::CostKind kind, const ot::Solver& solver) {
  if (x.rows() != x_zs.rows() || x.cols() != x_zs.cols())
    throw ShapeError("loss_jot: " + shape_string(x.rows(), x.cols()) + " vs " +
                     shape_string(x_zs.rows(), x_zs.cols()));
  const Matrix cost = ot::cost_matrix(x, x_zs, kind);
  const ot::OtResult solved = ot::solve(cost, solver);
  return {solved.value, ot::ot_value_gradient(x, x_zs, kind, solved.plan)};
}

LossAndGrad loss_pointwise(const Matrix& x, const Matrix& x_zs, PointwiseMetric metric) {
  if (x.rows() != x_zs.rows() || x.cols() != x_zs.cols())
    throw ShapeError("loss_pointwise: " + shape_string(x.rows(), x.cols()) + " vs " +
                     shape_string(x_zs.rows(), x_zs.cols()));
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  LossAndGrad out;
  switch (metric) {
    case PointwiseMetric::L2: {
      const Matrix diff = x - x_zs;
      out.value = diff.rowwise().squaredNorm().sum() * inv_n;
      out.grad = 2.0 * inv_n * diff;
      break;
    }
    case PointwiseMetric::L1: {
      const Matrix diff = x - x_zs;
      out.value = diff.cwiseAbs().rowwise().sum().sum() * inv_n;
      out.grad = inv_n * diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
      break;
    }
    case PointwiseMetric::CosinePW: {
      out.grad.resize(x.rows(), x.cols());
      double total = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector xi = x.row(i).transpose();
        const Vector yi = x_zs.row(i).transpose();
        total += ot::pair_cost<double>(xi, yi, ot::CostKind::Cosine);
        out.grad.row(i) = inv_n * ot::pair_cost_grad<double>(xi, yi, ot::CostKind::Cosine).transpose();
      }
      out.value = total * inv_n;
      break;
    }
  }
  return out;
}

SeparateLoss loss_separate_ot(const Matrix& h, const Matrix& h_zs, const Matrix& g, const Matrix& g_zs,
                              ot::CostKind kind, const ot::Solver& solver) {
  const LossAndGrad vision = loss_jot(h, h_zs, kind, solver);
  const LossAndGrad text = loss_jot(g, g_zs, kind, solver);
  return {vision.value + text.value, vision.grad, text.grad};
}

ot::TransportPlan pointwise_as_plan(Eigen::Index n) {
  if (n < 1) throw ShapeError("pointwise_as_plan: n must be >= 1");
  ot::TransportPlan plan;
  plan.gamma = Matrix::Zero(n, n);
  plan.gamma.diagonal().setConstant(1.0 / static_cast<double>(n));
  return plan;
}

double transport_cost(const ot::TransportPlan& plan, const Matrix& cost) {
  if (plan.gamma.rows() != cost.rows() || plan.gamma.cols() != cost.cols())
    throw ShapeError("transport_cost: plan and cost shapes differ");
  return (plan.gamma.array() * cost.array()).sum();
}

namespace {

void scatter_add_rows(Matrix& class_grad, const Matrix& instance_grad, std::span<const int> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    class_grad.row(labels[i]) += instance_grad.row(static_cast<Eigen::Index>(i));
}

}  // namespace

RegularizerResult regularizer(Kind kind, const BatchFeatures& adapted, const BatchFeatures& zero_shot,
                              std::span<const int> labels, ot::CostKind cost, const ot::Solver& solver) {
  if (adapted.h.rows() != static_cast<Eigen::Index>(labels.size()) || adapted.h.rows() != zero_shot.h.rows() ||
      adapted.g.rows() != zero_shot.g.rows())
    throw ShapeError("regularizer: adapted and zero-shot batches disagree in shape");
  RegularizerResult out;
  out.grad_h = Matrix::Zero(adapted.h.rows(), adapted.h.cols());
  out.grad_g = Matrix::Zero(adapted.g.rows(), adapted.g.cols());
  const Eigen::Index dv = adapted.h.cols();

  auto joint_pair = [&]() {
    return std::pair{build_joint(adapted.h, gather_rows(adapted.g, labels)),
                     build_joint(zero_shot.h, gather_rows(zero_shot.g, labels))};
  };
  auto split_joint_grad = [&](const Matrix& grad) {
    out.grad_h = grad.leftCols(dv);
    scatter_add_rows(out.grad_g, grad.rightCols(grad.cols() - dv), labels);
  };

  switch (kind) {
    case Kind::None:
      break;
    case Kind::JointOT: {
      const auto [x, x_zs] = joint_pair();
      const LossAndGrad loss = loss_jot(x, x_zs, cost, solver);
      out.value = loss.value;
      split_joint_grad(loss.grad);
      break;
    }
    case Kind::L2:
    case Kind::CosinePW: {
      const auto [x, x_zs] = joint_pair();
      const LossAndGrad loss =
          loss_pointwise(x.x, x_zs.x, kind == Kind::L2 ? PointwiseMetric::L2 : PointwiseMetric::CosinePW);
      out.value = loss.value;
      split_joint_grad(loss.grad);
      break;
    }
    case Kind::L1: {
      // L1 on vision and text features separately.
      const LossAndGrad vision = loss_pointwise(adapted.h, zero_shot.h, PointwiseMetric::L1);
      const LossAndGrad text = loss_pointwise(adapted.g, zero_shot.g, PointwiseMetric::L1);
      out.value = vision.value + text.value;
      out.grad_h = vision.grad;
      out.grad_g = text.grad;
      break;
    }
    case Kind::SeparateOT: {
      const SeparateLoss loss = loss_separate_ot(adapted.h, zero_shot.h, adapted.g, zero_shot.g, cost, solver);
      out.value = loss.value;
      out.grad_h = loss.grad_h;
      out.grad_g = loss.grad_g;
      break;
    }
    case Kind::VisionOT: {
      const LossAndGrad loss = loss_jot(adapted.h, zero_shot.h, cost, solver);
      out.value = loss.value;
      out.grad_h = loss.grad;
      break;
    }
    case Kind::TextOT: {
      const LossAndGrad loss =
          loss_jot(gather_rows(adapted.g, labels), gather_rows(zero_shot.g, labels), cost, solver);
      out.value = loss.value;
      scatter_add_rows(out.grad_g, loss.grad, labels);
      break;
    }
  }
  return out;
}

}  // namespace promptot::constraints
