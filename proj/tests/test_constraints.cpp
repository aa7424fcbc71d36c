#include "promptot/constraints.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace promptot;
using namespace promptot::constraints;

namespace {

// Oracle for the point-wise losses, computed element by element.
double pointwise_oracle(const Matrix& x, const Matrix& y, PointwiseMetric metric) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double dot = 0.0, nx = 0.0, ny = 0.0, sq = 0.0, abs = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      dot += x(i, j) * y(i, j);
      nx += x(i, j) * x(i, j);
      ny += y(i, j) * y(i, j);
      sq += (x(i, j) - y(i, j)) * (x(i, j) - y(i, j));
      abs += std::abs(x(i, j) - y(i, j));
    }
    total += metric == PointwiseMetric::L2 ? sq : metric == PointwiseMetric::L1 ? abs : 1.0 - dot / std::sqrt(nx * ny);
  }
  return total / static_cast<double>(x.rows());
}

template <typename F>
Matrix numeric_gradient(const Matrix& x, F&& f, double h = 1e-6) {
  Matrix grad(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      grad(i, j) = (f(xp) - f(xm)) / (2 * h);
    }
  return grad;
}

double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST_CASE("joint OT never exceeds the point-wise loss") {
  Rng rng(1);
  for (int t = 0; t < 300; ++t) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(15));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(7));
    const Matrix x = gaussian_matrix(rng, n, d, 1.0);
    const Matrix y = gaussian_matrix(rng, n, d, 1.0);
    CHECK(loss_jot(x, y, ot::CostKind::SquaredEuclidean, ot::ExactSolver{}).value <=
          pointwise_oracle(x, y, PointwiseMetric::L2) + 1e-9);
    CHECK(loss_jot(x, y, ot::CostKind::Cosine, ot::ExactSolver{}).value <=
          pointwise_oracle(x, y, PointwiseMetric::CosinePW) + 1e-9);
  }
}

TEST_CASE("the diagonal plan reproduces the point-wise loss") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(20));
    const Matrix x = gaussian_matrix(rng, n, 5, 1.0);
    const Matrix y = gaussian_matrix(rng, n, 5, 1.0);
    const ot::TransportPlan plan = pointwise_as_plan(n);
    CHECK(plan.is_feasible(1e-15));
    CHECK(std::abs(transport_cost(plan, ot::cost_matrix(x, y, ot::CostKind::SquaredEuclidean)) -
                   loss_pointwise(x, y, PointwiseMetric::L2).value) <= 1e-12);
    CHECK(std::abs(transport_cost(plan, ot::cost_matrix(x, y, ot::CostKind::Cosine)) -
                   loss_pointwise(x, y, PointwiseMetric::CosinePW).value) <= 1e-12);
  }
  CHECK_THROWS_AS(pointwise_as_plan(0), ShapeError);
}

TEST_CASE("point-wise losses match the element-wise oracle") {
  Rng rng(3);
  const Matrix x = gaussian_matrix(rng, 9, 4, 1.0);
  const Matrix y = gaussian_matrix(rng, 9, 4, 1.0);
  for (PointwiseMetric m : {PointwiseMetric::L2, PointwiseMetric::L1, PointwiseMetric::CosinePW})
    CHECK(loss_pointwise(x, y, m).value == doctest::Approx(pointwise_oracle(x, y, m)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_pointwise(x, Matrix::Zero(8, 4), PointwiseMetric::L2), ShapeError);
}

TEST_CASE("identical inputs give zero loss and zero gradient") {
  Rng rng(4);
  const Matrix x = gaussian_matrix(rng, 6, 3, 1.0);
  for (ot::CostKind kind : {ot::CostKind::SquaredEuclidean, ot::CostKind::Cosine}) {
    const LossAndGrad jot = loss_jot(x, x, kind, ot::ExactSolver{});
    CHECK(jot.value == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(jot.grad.cwiseAbs().maxCoeff() < 1e-12);
  }
  for (PointwiseMetric m : {PointwiseMetric::L2, PointwiseMetric::L1, PointwiseMetric::CosinePW}) {
    const LossAndGrad pw = loss_pointwise(x, x, m);
    CHECK(pw.value == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(pw.grad.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a row permutation costs nothing under OT but not point-wise") {
  Rng rng(5);
  const Matrix x = gaussian_matrix(rng, 5, 3, 1.0);
  Matrix y = x;
  y.row(0).swap(y.row(4));
  y.row(1).swap(y.row(2));
  const double jot = loss_jot(x, y, ot::CostKind::SquaredEuclidean, ot::ExactSolver{}).value;
  const double pw = loss_pointwise(x, y, PointwiseMetric::L2).value;
  CHECK(jot == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(pw > 0.1);
}

TEST_CASE("point-wise gradients match finite differences") {
  Rng rng(6);
  const Matrix x = gaussian_matrix(rng, 7, 4, 1.0);
  const Matrix y = gaussian_matrix(rng, 7, 4, 1.0);
  for (PointwiseMetric m : {PointwiseMetric::L2, PointwiseMetric::L1, PointwiseMetric::CosinePW}) {
    const Matrix numeric = numeric_gradient(x, [&](const Matrix& v) { return loss_pointwise(v, y, m).value; });
    CHECK(relative_error(loss_pointwise(x, y, m).grad, numeric) < 1e-7);
  }
}

TEST_CASE("exact joint OT gradient matches finite differences away from plan switches") {
  Rng rng(7);
  for (int t = 0; t < 10; ++t)
    for (ot::CostKind kind : {ot::CostKind::SquaredEuclidean, ot::CostKind::Cosine}) {
      const Matrix x = gaussian_matrix(rng, 8, 5, 1.0);
      const Matrix y = gaussian_matrix(rng, 8, 5, 1.0);
      const Matrix numeric = numeric_gradient(
          x, [&](const Matrix& v) { return loss_jot(v, y, kind, ot::ExactSolver{}).value; });
      CHECK(relative_error(loss_jot(x, y, kind, ot::ExactSolver{}).grad, numeric) < 1e-7);
    }
}

TEST_CASE("build_joint normalizes each half and checks row counts") {
  Rng rng(8);
  const Matrix h = gaussian_matrix(rng, 4, 3, 2.0);
  const Matrix g = gaussian_matrix(rng, 4, 5, 2.0);
  const JointRepresentation j = build_joint(h, g);
  CHECK(j.x.cols() == 8);
  CHECK(j.vision_dim == 3);
  CHECK(j.text_dim() == 5);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(j.x.row(i).head(3).norm() == doctest::Approx(1.0));
    CHECK(j.x.row(i).tail(5).norm() == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(build_joint(h, Matrix::Ones(3, 5)), ShapeError);
}

TEST_CASE("gather_rows selects class rows per label") {
  const Matrix g = (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished();
  const std::vector<int> labels{2, 0, 2};
  const Matrix out = gather_rows(g, labels);
  CHECK(out(0, 1) == 6);
  CHECK(out(1, 0) == 1);
  CHECK(out(2, 0) == 5);
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(gather_rows(g, bad), ShapeError);
}

TEST_CASE("regularizer kinds decompose as documented") {
  Rng rng(9);
  const std::vector<int> labels{0, 2, 2, 0, 2};
  const BatchFeatures adapted{normalize_rows(gaussian_matrix(rng, 5, 4, 1.0)),
                              normalize_rows(gaussian_matrix(rng, 4, 3, 1.0))};
  const BatchFeatures zero{normalize_rows(gaussian_matrix(rng, 5, 4, 1.0)),
                           normalize_rows(gaussian_matrix(rng, 4, 3, 1.0))};
  const auto sq = ot::CostKind::SquaredEuclidean;
  const ot::Solver exact = ot::ExactSolver{};

  const auto none = regularizer(Kind::None, adapted, zero, labels, sq, exact);
  CHECK(none.value == 0.0);
  CHECK(none.grad_h.isZero());
  CHECK(none.grad_g.isZero());

  const auto vision = regularizer(Kind::VisionOT, adapted, zero, labels, sq, exact);
  CHECK(vision.value == doctest::Approx(loss_jot(adapted.h, zero.h, sq, exact).value));
  CHECK(vision.grad_g.isZero());

  const auto text = regularizer(Kind::TextOT, adapted, zero, labels, sq, exact);
  CHECK(text.grad_h.isZero());
  // Classes 1 and 3 are absent from the batch.
  CHECK(text.grad_g.row(1).isZero());
  CHECK(text.grad_g.row(3).isZero());

  const auto joint = regularizer(Kind::JointOT, adapted, zero, labels, sq, exact);
  const auto l2 = regularizer(Kind::L2, adapted, zero, labels, sq, exact);
  const JointRepresentation x = build_joint(adapted.h, gather_rows(adapted.g, labels));
  const JointRepresentation x_zs = build_joint(zero.h, gather_rows(zero.g, labels));
  CHECK(joint.value == doctest::Approx(loss_jot(x, x_zs, sq, exact).value));
  CHECK(l2.value == doctest::Approx(pointwise_oracle(x.x, x_zs.x, PointwiseMetric::L2)));
  CHECK(joint.value <= l2.value + 1e-12);

  const auto l1 = regularizer(Kind::L1, adapted, zero, labels, sq, exact);
  CHECK(l1.value == doctest::Approx(pointwise_oracle(adapted.h, zero.h, PointwiseMetric::L1) +
                                    pointwise_oracle(adapted.g, zero.g, PointwiseMetric::L1)));

  const auto sep = regularizer(Kind::SeparateOT, adapted, zero, labels, sq, exact);
  CHECK(sep.value == doctest::Approx(loss_jot(adapted.h, zero.h, sq, exact).value +
                                     loss_jot(adapted.g, zero.g, sq, exact).value));

  CHECK_THROWS_AS(regularizer(Kind::JointOT, adapted, zero, std::vector<int>{0, 1}, sq, exact), ShapeError);
}

TEST_CASE("constraint kinds parse, print and validate") {
  for (Kind k : {Kind::None, Kind::L2, Kind::L1, Kind::CosinePW, Kind::SeparateOT, Kind::JointOT, Kind::VisionOT,
                 Kind::TextOT})
    CHECK(parse_kind(to_string(k)) == k);
  CHECK(parse_kind("joint-ot") == Kind::JointOT);
  CHECK(parse_kind("cos") == Kind::CosinePW);
  CHECK_THROWS_AS(parse_kind("kl"), ConfigError);
  CHECK(uses_ot(Kind::JointOT));
  CHECK(uses_ot(Kind::SeparateOT));
  CHECK_FALSE(uses_ot(Kind::L2));
  CHECK_FALSE(uses_ot(Kind::None));
  CHECK_THROWS_AS((ConstraintKind{Kind::JointOT, -1.0}.validate()), ConfigError);
  CHECK_NOTHROW((ConstraintKind{Kind::JointOT, 0.0}.validate()));
}

TEST_CASE("joint representation worked examples") {
  const JointRepresentation j = build_joint((Matrix(1, 2) << 1, 0).finished(), (Matrix(1, 2) << 0, 1).finished());
  CHECK(j.x == (Matrix(1, 4) << 1, 0, 0, 1).finished());
  const JointRepresentation k = build_joint(Matrix::Ones(3, 1), Matrix::Ones(3, 1));
  CHECK(k.x == Matrix::Ones(3, 2));
}

TEST_CASE("point-wise worked examples") {
  const Matrix x = (Matrix(2, 1) << 1, 3).finished();
  const Matrix zero = Matrix::Zero(2, 1);
  CHECK(loss_pointwise(x, zero, PointwiseMetric::L2).value == doctest::Approx((1.0 * 1.0 + 3.0 * 3.0) / 2.0));
  CHECK(loss_pointwise(x, zero, PointwiseMetric::L1).value == doctest::Approx((1.0 + 3.0) / 2.0));
}

TEST_CASE("separate OT is invariant to permutations within each modality") {
  Rng rng(10);
  const Matrix h = gaussian_matrix(rng, 4, 3, 1.0);
  const Matrix g = gaussian_matrix(rng, 4, 2, 1.0);
  const auto sq = ot::CostKind::SquaredEuclidean;
  CHECK(loss_separate_ot(h, h, g, g, sq, ot::ExactSolver{}).value == doctest::Approx(0.0).scale(1.0));
  Matrix g_perm = g;
  g_perm.row(0).swap(g_perm.row(3));
  CHECK(loss_separate_ot(h, h, g, g_perm, sq, ot::ExactSolver{}).value ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("diagonal plan worked examples") {
  CHECK(pointwise_as_plan(1).gamma == Matrix::Ones(1, 1));
  const ot::TransportPlan p = pointwise_as_plan(3);
  CHECK(p.gamma == Matrix::Identity(3, 3) / 3.0);
  CHECK((p.gamma.rowwise().sum().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  CHECK((p.gamma.colwise().sum().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
}
