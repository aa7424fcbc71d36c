#include "promptot/harness.hpp"

#include "promptot/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace promptot::harness {

Lemma2Report check_lemma2(int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("check_lemma2: trials must be >= 1");
  Rng rng(seed);
  Lemma2Report report;
  report.trials = trials;
  report.min_gap = std::numeric_limits<double>::infinity();
  report.max_gap = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(15));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(7));
    const Matrix x = gaussian_matrix(rng, n, d, 1.0);
    const Matrix x_zs = gaussian_matrix(rng, n, d, 1.0);
    for (const auto& [cost, metric] : {std::pair{ot::CostKind::SquaredEuclidean, constraints::PointwiseMetric::L2},
                                      std::pair{ot::CostKind::Cosine, constraints::PointwiseMetric::CosinePW}}) {
      const double joint = constraints::loss_jot(x, x_zs, cost, ot::ExactSolver{}).value;
      const double pointwise = constraints::loss_pointwise(x, x_zs, metric).value;
      const double gap = pointwise - joint;
      ++report.checks;
      if (joint > pointwise + kLemmaTolerance) ++report.violations;
      report.min_gap = std::min(report.min_gap, gap);
      report.max_gap = std::max(report.max_gap, gap);
    }
  }
  return report;
}

FeasibleSetReport feasible_set_experiment(const model::ModelPair& model, const data::SplitDataset& dataset,
                                          const FeasibleSetConfig& cfg) {
  if (cfg.num_samples < 1) throw ConfigError("feasible-set: num_samples must be >= 1");
  if (!(cfg.prompt_std >= 0.0)) throw ConfigError("feasible-set: prompt_std must be >= 0");
  if (cfg.epsilon <= 0.0 && !(cfg.target_occupancy > 0.0 && cfg.target_occupancy < 1.0))
    throw ConfigError("feasible-set: target_occupancy must be in (0, 1)");

  const data::LabeledRows& rows = dataset.base_train;
  if (rows.size() < 2) throw ConfigError("feasible-set: base training split needs >= 2 rows");
  const Matrix& class_inputs = dataset.class_embeddings;
  const auto joint_features = [&](const Vector& p, const Vector& q) {
    const Matrix h = model::encode_vision(rows.x, model.vision, p);
    const Matrix g = model::encode_text(class_inputs, model.text, q);
    return constraints::build_joint(h, constraints::gather_rows(g, rows.labels)).x;
  };
  const Matrix x_zs = joint_features(model.zero_shot.p, model.zero_shot.q);

  Rng rng(cfg.seed);
  std::vector<double> pw(static_cast<std::size_t>(cfg.num_samples));
  std::vector<double> jot(pw.size());
  for (std::size_t s = 0; s < pw.size(); ++s) {
    const Vector p = model.zero_shot.p + gaussian_vector(rng, model.zero_shot.p.size(), cfg.prompt_std);
    const Vector q = model.zero_shot.q + gaussian_vector(rng, model.zero_shot.q.size(), cfg.prompt_std);
    const Matrix x = joint_features(p, q);
    pw[s] = constraints::loss_pointwise(x, x_zs, constraints::PointwiseMetric::L2).value;
    jot[s] = constraints::loss_jot(x, x_zs, ot::CostKind::SquaredEuclidean, ot::ExactSolver{}).value;
  }

  FeasibleSetReport report;
  report.num_samples = cfg.num_samples;
  double level = cfg.epsilon * cfg.epsilon;
  if (cfg.epsilon <= 0.0) {
    std::vector<double> sorted = pw;
    const auto k = static_cast<std::size_t>(cfg.target_occupancy * static_cast<double>(sorted.size() - 1));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    level = sorted[k];
  }
  report.epsilon = std::sqrt(level);
  for (std::size_t s = 0; s < pw.size(); ++s) {
    const bool in_pw = pw[s] <= level;
    const bool in_ot = jot[s] <= level;
    report.count_pw += in_pw;
    report.count_ot += in_ot;
    if (in_pw && !in_ot) ++report.violations;
  }
  return report;
}

std::vector<constraints::Kind> all_kinds() {
  using constraints::Kind;
  return {Kind::None, Kind::L2, Kind::L1, Kind::CosinePW, Kind::SeparateOT, Kind::JointOT, Kind::VisionOT,
          Kind::TextOT};
}

std::string lambda_key(double lambda) { return io::format_exact(lambda); }

namespace {

ResultRow run_one(const model::ModelPair& model, const data::SplitDataset& dataset, const train::TrainConfig& cfg,
                  std::string key) {
  const auto result = train::adapt(model, dataset, cfg);
  const auto& f = result.record.final();
  return {std::move(key), cfg.seed, f.base_acc, f.novel_acc, f.hm};
}

std::string rows_csv(const char* key_name, const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << key_name << ",seed,base_acc,novel_acc,hm\n";
  for (const auto& r : rows)
    out << r.key << ',' << r.seed << ',' << io::format_fixed(r.base_acc) << ',' << io::format_fixed(r.novel_acc)
        << ',' << io::format_fixed(r.hm) << '\n';
  return out.str();
}

}  // namespace

std::vector<ResultRow> lambda_sweep(const model::ModelPair& model, const data::SplitDataset& dataset,
                                    const std::vector<double>& lambdas, const std::vector<std::uint64_t>& seeds,
                                    const train::TrainConfig& cfg) {
  std::vector<double> sorted = lambdas;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::uint64_t> sorted_seeds = seeds;
  std::sort(sorted_seeds.begin(), sorted_seeds.end());
  std::vector<ResultRow> rows;
  for (double lambda : sorted)
    for (std::uint64_t seed : sorted_seeds) {
      train::TrainConfig run = cfg;
      run.constraint = {constraints::Kind::JointOT, lambda};
      run.seed = seed;
      rows.push_back(run_one(model, dataset, run, lambda_key(lambda)));
    }
  return rows;
}

std::vector<ResultRow> compare_constraints(const model::ModelPair& model, const data::SplitDataset& dataset,
                                           const std::vector<constraints::Kind>& kinds,
                                           const std::vector<std::uint64_t>& seeds, const train::TrainConfig& cfg) {
  std::vector<std::uint64_t> sorted_seeds = seeds;
  std::sort(sorted_seeds.begin(), sorted_seeds.end());
  std::vector<ResultRow> rows;
  for (constraints::Kind kind : kinds)
    for (std::uint64_t seed : sorted_seeds) {
      train::TrainConfig run = cfg;
      run.constraint.kind = kind;
      run.seed = seed;
      rows.push_back(run_one(model, dataset, run, std::string(constraints::to_string(kind))));
    }
  return rows;
}

std::string feasible_csv(const FeasibleSetReport& r) {
  std::ostringstream out;
  out << "epsilon,num_samples,count_pw,count_ot,violations\n"
      << io::format_fixed(r.epsilon) << ',' << r.num_samples << ',' << r.count_pw << ',' << r.count_ot << ','
      << r.violations << '\n';
  return out.str();
}

std::string lambda_csv(const std::vector<ResultRow>& rows) { return rows_csv("lambda", rows); }
std::string compare_csv(const std::vector<ResultRow>& rows) { return rows_csv("constraint", rows); }

MeanAccuracy mean_for(const std::vector<ResultRow>& rows, const std::string& key) {
  MeanAccuracy m;
  for (const auto& r : rows)
    if (r.key == key) {
      m.base += r.base_acc;
      m.novel += r.novel_acc;
      m.hm += r.hm;
      ++m.runs;
    }
  if (m.runs > 0) {
    m.base /= m.runs;
    m.novel /= m.runs;
    m.hm /= m.runs;
  }
  return m;
}

Fixture default_fixture(std::uint64_t data_seed) {
  data::SyntheticSpec spec;
  spec.seed = data_seed;
  Fixture f{data::generate(spec), {}};
  f.model = train::pretrain_zero_shot(f.dataset, train::PretrainConfig{});
  return f;
}

}  // namespace promptot::harness
