#ifndef PROMPTOT_OT_HPP
#define PROMPTOT_OT_HPP

#include "promptot/tensor.hpp"

#include <string_view>
#include <variant>
#include <vector>

namespace promptot::ot {

enum class CostKind { SquaredEuclidean, Cosine };

std::string_view to_string(CostKind kind);
CostKind parse_cost_kind(std::string_view name);

// Coupling between two n-point empirical distributions, both uniform (1/n).
struct TransportPlan {
  Matrix gamma;

  Eigen::Index size() const { return gamma.rows(); }
  /// Largest absolute deviation of any row or column sum from 1/n.
  double marginal_violation() const;
  bool is_feasible(double tol) const;
};

struct SinkhornConfig {
  /// Entropic strength; <= 0 means "use relative_epsilon * mean(C)".
  double epsilon = 0.0;
  double relative_epsilon = 0.05;
  int max_iters = 1000;
  double tol = 1e-8;

  void validate() const;
};

struct ExactSolver {};
using Solver = std::variant<ExactSolver, SinkhornConfig>;

struct OtResult {
  TransportPlan plan;
  /// <gamma, C>, no entropy term.
  double value = 0.0;
  bool converged = true;
  int iterations = 0;
};

template <typename Scalar>
Scalar pair_cost(const Eigen::Ref<const VectorX<Scalar>>& x, const Eigen::Ref<const VectorX<Scalar>>& y,
                 CostKind kind) {
  if (kind == CostKind::SquaredEuclidean) return (x - y).squaredNorm();
  const Scalar nx = x.norm();
  const Scalar ny = y.norm();
  if (!(nx >= kDegenerateNorm) || !(ny >= kDegenerateNorm))
    throw DegenerateRowError("cosine cost: zero-norm row");
  return Scalar(1) - x.dot(y) / (nx * ny);
}

/// Gradient of pair_cost with respect to x.
template <typename Scalar>
VectorX<Scalar> pair_cost_grad(const Eigen::Ref<const VectorX<Scalar>>& x,
                               const Eigen::Ref<const VectorX<Scalar>>& y, CostKind kind) {
  if (kind == CostKind::SquaredEuclidean) return Scalar(2) * (x - y);
  const Scalar nx = x.norm();
  const Scalar ny = y.norm();
  if (!(nx >= kDegenerateNorm) || !(ny >= kDegenerateNorm))
    throw DegenerateRowError("cosine cost: zero-norm row");
  const Scalar dot = x.dot(y);
  return -(y / (nx * ny) - x * (dot / (nx * nx * nx * ny)));
}

template <typename DX, typename DY>
MatrixX<typename DX::Scalar> cost_matrix(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                         CostKind kind) {
  using Scalar = typename DX::Scalar;
  if (x.cols() != y.cols())
    throw ShapeError("cost_matrix: feature widths differ (" + std::to_string(x.cols()) + " vs " +
                     std::to_string(y.cols()) + ")");
  if (x.rows() < 1 || y.rows() < 1) throw ShapeError("cost_matrix: empty point set");
  MatrixX<Scalar> c(x.rows(), y.rows());
  if (kind == CostKind::SquaredEuclidean) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    return c;
  }
  const MatrixX<Scalar> xn = normalize_rows(x);
  const MatrixX<Scalar> yn = normalize_rows(y);
  c.noalias() = xn * yn.transpose();
  // Clamp rounding so c >= 0 and c(x, x) == 0 hold exactly.
  c = (Scalar(1) - c.array()).max(Scalar(0)).matrix();
  return c;
}

/// Optimal plan via the Hungarian method (shortest augmenting paths with
/// potentials). The optimum is a permutation matrix scaled by 1/n.
OtResult exact_ot(const Matrix& cost);

/// Factorial enumeration over permutation plans; n <= 8.
double brute_force_ot(const Matrix& cost);

/// Log-domain Sinkhorn with uniform marginals.
OtResult sinkhorn(const Matrix& cost, const SinkhornConfig& cfg);

OtResult solve(const Matrix& cost, const Solver& solver);

/// Gradient of <gamma, C(x, y)> with respect to x with gamma held fixed.
Matrix ot_value_gradient(const Matrix& x, const Matrix& y, CostKind kind, const TransportPlan& plan);

/// Assignment of row i to column assignment[i] minimizing total cost.
std::vector<Eigen::Index> solve_assignment(const Matrix& cost);

}  // namespace promptot::ot

#endif  // PROMPTOT_OT_HPP
