#include "promptot/model.hpp"

#include "promptot/io.hpp"

#include <map>
#include <sstream>

namespace promptot::model {

EncoderWeights init_encoder(Rng& rng, Eigen::Index input, Eigen::Index prompt, Eigen::Index hidden,
                            Eigen::Index embedding) {
  EncoderWeights w;
  w.prompt_dim = prompt;
  w.w1 = gaussian_matrix(rng, hidden, input + prompt, 1.0 / std::sqrt(static_cast<double>(input + prompt)));
  w.w2 = gaussian_matrix(rng, embedding, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return w;
}

Matrix encode(const Matrix& inputs, const EncoderWeights& w, const Vector& prompt, EncoderCache* cache) {
  if (prompt.size() != w.prompt_dim || inputs.cols() != w.input_dim())
    throw ShapeError("encode: inputs " + shape_string(inputs.rows(), inputs.cols()) + " and prompt of size " +
                     std::to_string(prompt.size()) + " do not fit w1 " + shape_string(w.w1.rows(), w.w1.cols()));
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.augmented.resize(inputs.rows(), w.w1.cols());
  c.augmented.leftCols(inputs.cols()) = inputs;
  c.augmented.rightCols(prompt.size()).rowwise() = prompt.transpose();
  c.hidden = (c.augmented * w.w1.transpose()).array().tanh().matrix();
  c.raw = c.hidden * w.w2.transpose();
  c.norms = c.raw.rowwise().norm();
  c.out = normalize_rows(c.raw);
  return c.out;
}

EncoderGrads encoder_backward(const EncoderCache& cache, const EncoderWeights& w, const Matrix& d_out,
                              bool weight_grads) {
  if (d_out.rows() != cache.out.rows() || d_out.cols() != cache.out.cols())
    throw ShapeError("encoder_backward: gradient shape does not match the cached output");
  // Through normalization: d_raw = (I - h h^T) d_out / |raw|.
  const Vector radial = (cache.out.array() * d_out.array()).rowwise().sum();
  const Matrix d_raw =
      (d_out - radial.asDiagonal() * cache.out).array().colwise() / cache.norms.array();
  const Matrix d_hidden = d_raw * w.w2;
  const Matrix d_pre = (d_hidden.array() * (1.0 - cache.hidden.array().square())).matrix();

  EncoderGrads grads;
  grads.prompt = w.w1.rightCols(w.prompt_dim).transpose() * d_pre.colwise().sum().transpose();
  if (weight_grads) {
    grads.w2 = d_raw.transpose() * cache.hidden;
    grads.w1 = d_pre.transpose() * cache.augmented;
  }
  return grads;
}

Matrix logits(const Matrix& h, const Matrix& g, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  if (h.cols() != g.cols()) throw ShapeError("logits: embedding widths differ");
  return (h * g.transpose()) / tau;
}

Matrix predict(const Matrix& h, const Matrix& g, double tau) { return softmax_rows(logits(h, g, tau)); }

double evaluate(const ModelPair& model, const Matrix& rows, std::span<const int> labels,
                std::span<const int> class_set, const Matrix& class_inputs) {
  if (class_set.empty()) throw ConfigError("evaluate: empty class set");
  if (static_cast<Eigen::Index>(labels.size()) != rows.rows())
    throw ShapeError("evaluate: label count differs from row count");
  if (labels.empty()) return 0.0;
  Matrix class_rows(static_cast<Eigen::Index>(class_set.size()), class_inputs.cols());
  for (std::size_t k = 0; k < class_set.size(); ++k) {
    if (class_set[k] < 0 || class_set[k] >= class_inputs.rows())
      throw ShapeError("evaluate: class id " + std::to_string(class_set[k]) + " out of range");
    class_rows.row(static_cast<Eigen::Index>(k)) = class_inputs.row(class_set[k]);
  }
  const Matrix h = encode_vision(rows, model.vision, model.adapted.p);
  const Matrix g = encode_text(class_rows, model.text, model.adapted.q);
  // Argmax of the logits equals argmax of the softmax.
  const Matrix scores = logits(h, g, model.tau);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    if (class_set[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

constexpr std::string_view kCheckpointMagic = "promptot-checkpoint v1";

void write_section(std::ostringstream& out, const std::string& name, const Matrix& m) {
  out << "section " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << io::format_exact(m(i, j));
    out << '\n';
  }
}

Matrix as_column(const Vector& v) { return Matrix(v); }

}  // namespace

std::string checkpoint_text(const ModelPair& model) {
  std::ostringstream out;
  out << kCheckpointMagic << '\n';
  out << "seed " << model.seed << '\n';
  out << "tau " << io::format_exact(model.tau) << '\n';
  write_section(out, "vision.w1", model.vision.w1);
  write_section(out, "vision.w2", model.vision.w2);
  write_section(out, "text.w1", model.text.w1);
  write_section(out, "text.w2", model.text.w2);
  write_section(out, "adapted.p", as_column(model.adapted.p));
  write_section(out, "adapted.q", as_column(model.adapted.q));
  write_section(out, "zero_shot.p", as_column(model.zero_shot.p));
  write_section(out, "zero_shot.q", as_column(model.zero_shot.q));
  out << "end\n";
  return out.str();
}

void save_checkpoint(const ModelPair& model, const std::filesystem::path& path) {
  io::write_file(path, checkpoint_text(model));
}

ModelPair load_checkpoint(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const auto lines = io::split(text, '\n');
  std::size_t cursor = 0;
  auto next_line = [&]() -> std::string_view {
    if (cursor >= lines.size()) throw io::ParseError(cursor + 1, "unexpected end of checkpoint");
    return lines[cursor++];
  };
  if (next_line() != kCheckpointMagic) throw io::ParseError(1, "not a promptot v1 checkpoint");

  ModelPair model;
  std::map<std::string, Matrix, std::less<>> sections;
  bool saw_end = false;
  while (cursor < lines.size()) {
    const std::size_t line_no = cursor + 1;
    const std::string_view line = next_line();
    if (line.empty()) continue;
    const auto fields = io::split(line, ' ');
    if (fields[0] == "end") {
      saw_end = true;
      break;
    }
    if (fields[0] == "seed" && fields.size() == 2) {
      model.seed = static_cast<std::uint64_t>(io::parse_int(fields[1], line_no));
    } else if (fields[0] == "tau" && fields.size() == 2) {
      model.tau = io::parse_double(fields[1], line_no);
    } else if (fields[0] == "section" && fields.size() == 4) {
      const auto rows = io::parse_int(fields[2], line_no);
      const auto cols = io::parse_int(fields[3], line_no);
      if (rows < 0 || cols < 0 || rows > 1'000'000 || cols > 1'000'000)
        throw io::ParseError(line_no, "bad section shape");
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const std::size_t row_line = cursor + 1;
        const auto values = io::split(next_line(), ' ');
        if (static_cast<long long>(values.size()) != cols)
          throw io::ParseError(row_line, "expected " + std::to_string(cols) + " values");
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = io::parse_double(values[j], row_line);
      }
      sections.emplace(std::string(fields[1]), std::move(m));
    } else {
      throw io::ParseError(line_no, "unrecognized record '" + std::string(line) + "'");
    }
  }
  if (!saw_end) throw io::ParseError(lines.size(), "checkpoint truncated (missing 'end')");

  auto take = [&](const char* name) -> Matrix& {
    auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError(std::string("checkpoint missing section ") + name);
    return it->second;
  };
  auto take_vector = [&](const char* name) {
    const Matrix& m = take(name);
    if (m.cols() != 1) throw CheckpointError(std::string(name) + " must be a column");
    return Vector(m.col(0));
  };
  model.vision.w1 = take("vision.w1");
  model.vision.w2 = take("vision.w2");
  model.text.w1 = take("text.w1");
  model.text.w2 = take("text.w2");
  model.adapted.p = take_vector("adapted.p");
  model.adapted.q = take_vector("adapted.q");
  model.zero_shot.p = take_vector("zero_shot.p");
  model.zero_shot.q = take_vector("zero_shot.q");
  model.vision.prompt_dim = model.adapted.p.size();
  model.text.prompt_dim = model.adapted.q.size();
  if (model.zero_shot.p.size() != model.vision.prompt_dim || model.zero_shot.q.size() != model.text.prompt_dim ||
      model.vision.w1.cols() <= model.vision.prompt_dim || model.text.w1.cols() <= model.text.prompt_dim ||
      model.vision.w2.cols() != model.vision.w1.rows() || model.text.w2.cols() != model.text.w1.rows() ||
      model.vision.w2.rows() != model.text.w2.rows())
    throw CheckpointError("checkpoint sections have inconsistent shapes");
  if (!(model.tau > 0.0)) throw CheckpointError("checkpoint temperature must be > 0");
  return model;
}

}  // namespace promptot::model
