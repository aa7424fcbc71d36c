#include "promptot/ot.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace promptot::ot {

std::string_view to_string(CostKind kind) {
  return kind == CostKind::SquaredEuclidean ? "sqeuclidean" : "cosine";
}

CostKind parse_cost_kind(std::string_view name) {
  if (name == "sqeuclidean" || name == "l2") return CostKind::SquaredEuclidean;
  if (name == "cosine" || name == "cos") return CostKind::Cosine;
  throw ConfigError("unknown cost kind '" + std::string(name) + "'");
}

double TransportPlan::marginal_violation() const {
  const double target = 1.0 / static_cast<double>(size());
  const double rows = (gamma.rowwise().sum().array() - target).abs().maxCoeff();
  const double cols = (gamma.colwise().sum().array() - target).abs().maxCoeff();
  return std::max(rows, cols);
}

bool TransportPlan::is_feasible(double tol) const {
  return gamma.rows() == gamma.cols() && gamma.rows() > 0 && (gamma.array() >= 0.0).all() &&
         marginal_violation() <= tol;
}

void SinkhornConfig::validate() const {
  if (epsilon <= 0.0 && !(relative_epsilon > 0.0))
    throw ConfigError("sinkhorn: epsilon must be > 0");
  if (!(tol > 0.0)) throw ConfigError("sinkhorn: tol must be > 0");
  if (max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
}

namespace {

void check_square_cost(const Matrix& cost, const char* where) {
  if (cost.rows() != cost.cols() || cost.rows() == 0)
    throw ShapeError(std::string(where) + ": cost must be square and nonempty, got " +
                     shape_string(cost.rows(), cost.cols()));
  if (!cost.allFinite()) throw ConfigError(std::string(where) + ": cost has non-finite entries");
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

std::vector<Eigen::Index> solve_assignment(const Matrix& cost) {
  check_square_cost(cost, "solve_assignment");
  const Eigen::Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Eigen::Index> match(n + 1, 0), way(n + 1, 0);
  for (Eigen::Index row = 1; row <= n; ++row) {
    match[0] = row;
    Eigen::Index col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const Eigen::Index row0 = match[col0];
      double delta = inf;
      Eigen::Index col1 = 0;
      for (Eigen::Index col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double reduced = cost(row0 - 1, col - 1) - u[row0] - v[col];
        if (reduced < minv[col]) {
          minv[col] = reduced;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (Eigen::Index col = 0; col <= n; ++col) {
        if (used[col]) {
          u[match[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const Eigen::Index col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<Eigen::Index> assignment(n);
  for (Eigen::Index col = 1; col <= n; ++col) assignment[match[col] - 1] = col - 1;
  return assignment;
}

OtResult exact_ot(const Matrix& cost) {
  check_square_cost(cost, "exact_ot");
  const Eigen::Index n = cost.rows();
  const auto assignment = solve_assignment(cost);
  const double mass = 1.0 / static_cast<double>(n);
  OtResult result;
  result.plan.gamma = Matrix::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    result.plan.gamma(i, assignment[i]) = mass;
    total += cost(i, assignment[i]);
  }
  result.value = total / static_cast<double>(n);
  return result;
}

double brute_force_ot(const Matrix& cost) {
  check_square_cost(cost, "brute_force_ot");
  const Eigen::Index n = cost.rows();
  if (n > 8) throw ConfigError("brute_force_ot: n = " + std::to_string(n) + " exceeds limit 8");
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

namespace {

// Log-domain state of the entropic problem; gamma_ij = exp((f_i + g_j - C_ij) / eps).
struct EntropicState {
  const Matrix& cost;
  double eps;
  double mass;  // 1/n on every row and column

  Matrix plan(const Vector& f, const Vector& g) const {
    Matrix gamma(cost.rows(), cost.cols());
    for (Eigen::Index i = 0; i < cost.rows(); ++i)
      for (Eigen::Index j = 0; j < cost.cols(); ++j) gamma(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
    return gamma;
  }

  // Exact column marginals for the given f.
  void update_g(const Vector& f, Vector& g, Vector& scratch) const {
    const double log_mass = std::log(mass);
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
      for (Eigen::Index i = 0; i < cost.rows(); ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_mass - log_sum_exp(scratch));
    }
  }

  void update_f(Vector& f, const Vector& g, Vector& scratch) const {
    const double log_mass = std::log(mass);
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
      for (Eigen::Index j = 0; j < cost.cols(); ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_mass - log_sum_exp(scratch));
    }
  }

  double row_violation(const Vector& f, const Vector& g) const {
    return (plan(f, g).rowwise().sum().array() - mass).abs().maxCoeff();
  }

  // One Newton step on both marginal equations with g_{n-1} pinned (the
  // system is invariant under f + c, g - c), followed by exact column
  // re-balancing. Returns false if no damped step reduces the row error.
  bool newton_step(Vector& f, Vector& g, Vector& scratch) const {
    const Eigen::Index n = cost.rows();
    const Matrix gamma = plan(f, g);
    const Vector rows = gamma.rowwise().sum();
    const Vector cols = gamma.colwise().sum().transpose();
    Matrix jac = Matrix::Zero(2 * n, 2 * n - 1);
    Vector residual(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      jac(i, i) = rows[i] / eps;
      jac(n + i, i) = 0.0;
      for (Eigen::Index j = 0; j + 1 < n; ++j) jac(i, n + j) = gamma(i, j) / eps;
      residual[i] = rows[i] - mass;
      residual[n + i] = cols[i] - mass;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) jac(n + j, i) = gamma(i, j) / eps;
      if (j + 1 < n) jac(n + j, n + j) = cols[j] / eps;
    }
    const Vector step = jac.colPivHouseholderQr().solve(-residual);
    if (!step.allFinite()) return false;
    const double before = row_violation(f, g);
    for (double t = 1.0; t > 1e-4; t *= 0.5) {
      Vector f_try = f + t * step.head(n);
      Vector g_try = g;
      g_try.head(n - 1) += t * step.tail(n - 1);
      update_g(f_try, g_try, scratch);
      if (row_violation(f_try, g_try) < before) {
        f = std::move(f_try);
        g = std::move(g_try);
        return true;
      }
    }
    return false;
  }
};

// Newton refinement starts once plain scaling has made this much progress.
constexpr double kNewtonThreshold = 1e-3;

}  // namespace

OtResult sinkhorn(const Matrix& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  check_square_cost(cost, "sinkhorn");
  if ((cost.array() < 0.0).any()) throw ConfigError("sinkhorn: cost has negative entries");
  const Eigen::Index n = cost.rows();
  double eps = cfg.epsilon;
  if (eps <= 0.0) {
    eps = cfg.relative_epsilon * cost.mean();
    // All-zero cost: any positive epsilon gives the same (uniform) plan.
    if (!(eps > 0.0)) eps = cfg.relative_epsilon;
  }
  const EntropicState state{cost, eps, 1.0 / static_cast<double>(n)};

  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(n);
  Vector scratch(n);
  OtResult result;
  result.converged = false;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    state.update_f(f, g, scratch);
    state.update_g(f, g, scratch);
    result.iterations = it;
    // Column marginals are exact after the g update; rows carry the error.
    double violation = state.row_violation(f, g);
    if (violation >= cfg.tol && violation < kNewtonThreshold && n > 1 && state.newton_step(f, g, scratch))
      violation = state.row_violation(f, g);
    if (violation < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.plan.gamma = state.plan(f, g);
  result.value = (result.plan.gamma.array() * cost.array()).sum();
  return result;
}

OtResult solve(const Matrix& cost, const Solver& solver) {
  if (std::holds_alternative<ExactSolver>(solver)) return exact_ot(cost);
  return sinkhorn(cost, std::get<SinkhornConfig>(solver));
}

Matrix ot_value_gradient(const Matrix& x, const Matrix& y, CostKind kind, const TransportPlan& plan) {
  if (x.cols() != y.cols() || plan.gamma.rows() != x.rows() || plan.gamma.cols() != y.rows())
    throw ShapeError("ot_value_gradient: plan " + shape_string(plan.gamma.rows(), plan.gamma.cols()) +
                     " inconsistent with x " + shape_string(x.rows(), x.cols()) + " and y " +
                     shape_string(y.rows(), y.cols()));
  Matrix grad = Matrix::Zero(x.rows(), x.cols());
  if (kind == CostKind::SquaredEuclidean) {
    // sum_j gamma_ij * 2 (x_i - y_j) = 2 (r_i x_i - (gamma y)_i)
    const Vector row_mass = plan.gamma.rowwise().sum();
    grad = 2.0 * (row_mass.asDiagonal() * x - plan.gamma * y);
    return grad;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      const double w = plan.gamma(i, j);
      if (w == 0.0) continue;
      grad.row(i) += w * pair_cost_grad<double>(x.row(i).transpose(), y.row(j).transpose(), kind).transpose();
    }
  return grad;
}

}  // namespace promptot::ot
