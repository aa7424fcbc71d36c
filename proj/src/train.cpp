#include "promptot/train.hpp"

#include "promptot/io.hpp"

#include <numeric>
#include <sstream>

namespace promptot::train {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  constraint.validate();
  if (constraints::uses_ot(constraint.kind) && batch_size < 2)
    throw ConfigError("OT constraints need batch_size >= 2");
  if (!(prompt_init_std >= 0.0)) throw ConfigError("prompt_init_std must be >= 0");
  if (const auto* cfg = std::get_if<ot::SinkhornConfig>(&solver)) cfg->validate();
}

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(lr > 0.0)) throw ConfigError("pretrain lr must be > 0");
  if (epochs < 1 || batch_size < 1) throw ConfigError("pretrain epochs and batch_size must be >= 1");
  if (dims.input < 1 || dims.text_input < 1 || dims.prompt < 1 || dims.hidden < 1 || dims.embedding < 1)
    throw ConfigError("model dimensions must be >= 1");
  if (!(prompt_init_std >= 0.0)) throw ConfigError("prompt_init_std must be >= 0");
}

std::string RunRecord::to_csv() const {
  std::ostringstream out;
  out << "epoch,ce_loss,reg_loss,base_acc,novel_acc,hm\n";
  for (const auto& e : epochs)
    out << e.epoch << ',' << io::format_fixed(e.ce_loss) << ',' << io::format_fixed(e.reg_loss) << ','
        << io::format_fixed(e.base_acc) << ',' << io::format_fixed(e.novel_acc) << ',' << io::format_fixed(e.hm)
        << '\n';
  return out.str();
}

double harmonic_mean(double a, double b) {
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

namespace {

struct CrossEntropy {
  double value = 0.0;
  Matrix d_h;
  Matrix d_g;
};

// Mean CE of softmax(<h_i, g_k> / tau) against labels, with gradients.
CrossEntropy cross_entropy(const Matrix& h, const Matrix& g, std::span<const int> labels, double tau) {
  const Matrix probs = model::predict(h, g, tau);
  const double inv_n = 1.0 / static_cast<double>(h.rows());
  CrossEntropy ce;
  Matrix d_logits = probs;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    ce.value -= std::log(std::max(probs(i, y), 1e-300));
    d_logits(i, y) -= 1.0;
  }
  ce.value *= inv_n;
  d_logits *= inv_n / tau;
  ce.d_h = d_logits * g;
  ce.d_g = d_logits.transpose() * h;
  return ce;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

// Adam state for one parameter block.
struct AdamSlot {
  Matrix m, v;

  void step(Matrix& param, const Matrix& grad, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (m.size() == 0) {
      m = Matrix::Zero(param.rows(), param.cols());
      v = Matrix::Zero(param.rows(), param.cols());
    }
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace

PromptGradients grad_prompts(const Matrix& rows, std::span<const int> labels, const Matrix& class_inputs,
                             const model::ModelPair& model, const constraints::ConstraintKind& constraint,
                             ot::CostKind cost, const ot::Solver& solver) {
  constraint.validate();
  if (static_cast<Eigen::Index>(labels.size()) != rows.rows() || labels.empty())
    throw ShapeError("grad_prompts: need one label per row and a nonempty batch");
  for (int y : labels)
    if (y < 0 || y >= class_inputs.rows()) throw ShapeError("grad_prompts: label outside the class set");

  model::EncoderCache vision_cache, text_cache;
  const Matrix h = model::encode_vision(rows, model.vision, model.adapted.p, &vision_cache);
  const Matrix g = model::encode_text(class_inputs, model.text, model.adapted.q, &text_cache);
  CrossEntropy ce = cross_entropy(h, g, labels, model.tau);

  PromptGradients out;
  out.ce_loss = ce.value;
  if (constraint.kind != constraints::Kind::None && constraint.lambda > 0.0) {
    // Frozen twin, recomputed per batch on the same instances.
    const constraints::BatchFeatures zero_shot{
        model::encode_vision(rows, model.vision, model.zero_shot.p),
        model::encode_text(class_inputs, model.text, model.zero_shot.q)};
    const auto reg = constraints::regularizer(constraint.kind, {h, g}, zero_shot, labels, cost, solver);
    out.reg_loss = reg.value;
    ce.d_h += constraint.lambda * reg.grad_h;
    ce.d_g += constraint.lambda * reg.grad_g;
  }
  out.dp = model::encoder_backward(vision_cache, model.vision, ce.d_h, false).prompt;
  out.dq = model::encoder_backward(text_cache, model.text, ce.d_g, false).prompt;
  return out;
}

void init_adapted_prompts(model::ModelPair& model, Rng& rng, double prompt_init_std) {
  model.adapted.p = model.zero_shot.p + gaussian_vector(rng, model.zero_shot.p.size(), prompt_init_std);
  model.adapted.q = model.zero_shot.q;
}

SplitAccuracy evaluate_splits(const model::ModelPair& model, const data::SplitDataset& dataset) {
  SplitAccuracy acc;
  const auto base = dataset.base_classes();
  const auto novel = dataset.novel_classes();
  acc.base = model::evaluate(model, dataset.base_eval.x, dataset.base_eval.labels, base, dataset.class_embeddings);
  acc.novel =
      model::evaluate(model, dataset.novel_eval.x, dataset.novel_eval.labels, novel, dataset.class_embeddings);
  acc.hm = harmonic_mean(acc.base, acc.novel);
  return acc;
}

model::ModelPair pretrain_zero_shot(const data::SplitDataset& dataset, const PretrainConfig& cfg) {
  cfg.validate();
  if (dataset.pretrain.x.cols() != cfg.dims.input || dataset.class_embeddings.cols() != cfg.dims.text_input)
    throw ConfigError("pretrain: dataset widths do not match model dimensions");
  Rng root(cfg.seed);
  Rng init_rng = root.split();
  Rng shuffle_rng = root.split();
  Rng prompt_rng = root.split();

  model::ModelPair model;
  model.seed = cfg.seed;
  model.tau = cfg.tau;
  model.vision = model::init_encoder(init_rng, cfg.dims.input, cfg.dims.prompt, cfg.dims.hidden, cfg.dims.embedding);
  model.text =
      model::init_encoder(init_rng, cfg.dims.text_input, cfg.dims.prompt, cfg.dims.hidden, cfg.dims.embedding);
  Matrix p = gaussian_matrix(init_rng, cfg.dims.prompt, 1, cfg.prompt_init_std);
  Matrix q = gaussian_matrix(init_rng, cfg.dims.prompt, 1, cfg.prompt_init_std);

  const data::LabeledRows& train = dataset.pretrain;
  std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  AdamSlot s_vw1, s_vw2, s_tw1, s_tw2, s_p, s_q;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix rows = select_rows(train.x, idx);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);

      model::EncoderCache vc, tc;
      const Matrix h = model::encode_vision(rows, model.vision, p.col(0), &vc);
      const Matrix g = model::encode_text(dataset.class_embeddings, model.text, q.col(0), &tc);
      const CrossEntropy ce = cross_entropy(h, g, labels, cfg.tau);
      if (!std::isfinite(ce.value)) throw TrainingError(epoch, "pretraining loss is not finite");
      const auto gv = model::encoder_backward(vc, model.vision, ce.d_h, true);
      const auto gt = model::encoder_backward(tc, model.text, ce.d_g, true);
      ++step;
      s_vw1.step(model.vision.w1, gv.w1, cfg.lr, step);
      s_vw2.step(model.vision.w2, gv.w2, cfg.lr, step);
      s_tw1.step(model.text.w1, gt.w1, cfg.lr, step);
      s_tw2.step(model.text.w2, gt.w2, cfg.lr, step);
      s_p.step(p, Matrix(gv.prompt), cfg.lr, step);
      s_q.step(q, Matrix(gt.prompt), cfg.lr, step);
    }
  }
  if (!model.vision.w1.allFinite() || !model.text.w1.allFinite())
    throw TrainingError(cfg.epochs, "pretraining diverged");
  model.zero_shot.p = p.col(0);
  model.zero_shot.q = q.col(0);
  init_adapted_prompts(model, prompt_rng, cfg.prompt_init_std);
  return model;
}

AdaptResult adapt(const model::ModelPair& initial, const data::SplitDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng prompt_rng = root.split();
  Rng shuffle_rng = root.split();

  AdaptResult result{initial, {}};
  model::ModelPair& model = result.model;
  init_adapted_prompts(model, prompt_rng, cfg.prompt_init_std);

  const auto base_classes = dataset.base_classes();
  Matrix class_inputs(static_cast<Eigen::Index>(base_classes.size()), dataset.class_embeddings.cols());
  for (std::size_t k = 0; k < base_classes.size(); ++k)
    class_inputs.row(static_cast<Eigen::Index>(k)) = dataset.class_embeddings.row(base_classes[k]);
  const data::LabeledRows& train = dataset.base_train;
  if (train.size() == 0) throw ConfigError("adapt: empty base training split");

  std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double ce_sum = 0.0, reg_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix rows = select_rows(train.x, idx);
      std::vector<int> labels;
      // Base classes are [0, C/2), so a global id is also its row in class_inputs.
      for (std::size_t i : idx) labels.push_back(train.labels[i]);

      const PromptGradients grads =
          grad_prompts(rows, labels, class_inputs, model, cfg.constraint, cfg.cost, cfg.solver);
      if (!std::isfinite(grads.total(cfg.constraint.lambda)) || !grads.dp.allFinite() || !grads.dq.allFinite())
        throw TrainingError(epoch, "adaptation loss is not finite");
      model.adapted.p -= cfg.lr * grads.dp;
      model.adapted.q -= cfg.lr * grads.dq;
      ce_sum += grads.ce_loss;
      reg_sum += grads.reg_loss;
      ++batches;
    }
    const SplitAccuracy acc = evaluate_splits(model, dataset);
    result.record.epochs.push_back({epoch, ce_sum / batches, reg_sum / batches, acc.base, acc.novel, acc.hm});
  }
  return result;
}

}  // namespace promptot::train
