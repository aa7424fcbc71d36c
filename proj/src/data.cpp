#include "promptot/data.hpp"

#include "promptot/io.hpp"

#include <numeric>
#include <sstream>

namespace promptot::data {

namespace {

bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

constexpr std::string_view kHeaderPrefix = "# synth v1 seed=";

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes % 2 != 0)
    throw ConfigError("num_classes must be even and >= 2, got " + std::to_string(num_classes));
  if (dim < 1 || text_dim < 1) throw ConfigError("feature dimensions must be >= 1");
  if (train_per_class < 1 || eval_per_class < 1 || pretrain_per_class < 1)
    throw ConfigError("samples per class must be >= 1");
  if (!(domain_shift >= 0.0)) throw ConfigError("domain_shift must be >= 0");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (!(class_sep >= 0.0)) throw ConfigError("class_sep must be >= 0");
}

bool LabeledRows::operator==(const LabeledRows& other) const {
  return labels == other.labels && same_matrix(x, other.x);
}

bool SplitDataset::operator==(const SplitDataset& other) const {
  return seed == other.seed && num_classes == other.num_classes && pretrain == other.pretrain &&
         base_train == other.base_train &&
         base_eval == other.base_eval && novel_train == other.novel_train && novel_eval == other.novel_eval &&
         same_matrix(class_embeddings, other.class_embeddings);
}

std::vector<int> SplitDataset::base_classes() const {
  std::vector<int> ids(static_cast<std::size_t>(num_classes / 2));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int> SplitDataset::novel_classes() const {
  std::vector<int> ids(static_cast<std::size_t>(num_classes - num_classes / 2));
  std::iota(ids.begin(), ids.end(), num_classes / 2);
  return ids;
}

std::vector<int> SplitDataset::all_classes() const {
  std::vector<int> ids(static_cast<std::size_t>(num_classes));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

SplitDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng proto_rng = root.split();
  Rng text_rng = root.split();
  Rng sample_rng = root.split();
  Rng shift_rng = root.split();
  Rng source_rng = root.split();

  const Matrix prototypes = gaussian_matrix(proto_rng, spec.num_classes, spec.dim, spec.class_sep);
  const Matrix target_centers = prototypes + gaussian_matrix(shift_rng, spec.num_classes, spec.dim, spec.domain_shift);
  SplitDataset ds;
  ds.seed = spec.seed;
  ds.num_classes = spec.num_classes;
  ds.class_embeddings = gaussian_matrix(text_rng, spec.num_classes, spec.text_dim, 1.0);

  const int half = spec.num_classes / 2;
  auto draw = [&](LabeledRows& out, int first_class, int last_class, int per_class, const Matrix& centers,
                  Rng& rng) {
    const Eigen::Index n = static_cast<Eigen::Index>(last_class - first_class) * per_class;
    out.x.resize(n, spec.dim);
    out.labels.clear();
    Eigen::Index row = 0;
    for (int c = first_class; c < last_class; ++c)
      for (int s = 0; s < per_class; ++s, ++row) {
        out.x.row(row) = centers.row(c) + gaussian_matrix(rng, 1, spec.dim, spec.noise_std);
        out.labels.push_back(c);
      }
  };
  draw(ds.pretrain, 0, spec.num_classes, spec.pretrain_per_class, prototypes, source_rng);
  draw(ds.base_train, 0, half, spec.train_per_class, target_centers, sample_rng);
  draw(ds.novel_train, half, spec.num_classes, spec.train_per_class, target_centers, sample_rng);
  draw(ds.base_eval, 0, half, spec.eval_per_class, target_centers, sample_rng);
  draw(ds.novel_eval, half, spec.num_classes, spec.eval_per_class, target_centers, sample_rng);
  return ds;
}

namespace {

void write_rows(std::ostringstream& out, std::string_view name, const Matrix& x, const std::vector<int>* labels) {
  out << '@' << name << ' ' << x.rows() << ' ' << x.cols() << '\n';
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out << (labels ? (*labels)[static_cast<std::size_t>(i)] : static_cast<int>(i));
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << ',' << io::format_exact(x(i, j));
    out << '\n';
  }
}

}  // namespace

std::string to_text(const SplitDataset& ds) {
  std::ostringstream out;
  out << kHeaderPrefix << ds.seed << '\n';
  out << "@classes " << ds.num_classes << '\n';
  write_rows(out, "pretrain", ds.pretrain.x, &ds.pretrain.labels);
  write_rows(out, "base_train", ds.base_train.x, &ds.base_train.labels);
  write_rows(out, "base_eval", ds.base_eval.x, &ds.base_eval.labels);
  write_rows(out, "novel_train", ds.novel_train.x, &ds.novel_train.labels);
  write_rows(out, "novel_eval", ds.novel_eval.x, &ds.novel_eval.labels);
  write_rows(out, "class_embeddings", ds.class_embeddings, nullptr);
  return out.str();
}

SplitDataset from_text(const std::string& text) {
  const auto lines = io::split(text, '\n');
  std::size_t cursor = 0;
  auto next_line = [&]() -> std::string_view {
    if (cursor >= lines.size() || (cursor + 1 == lines.size() && lines[cursor].empty()))
      throw io::ParseError(cursor + 1, "unexpected end of dataset file");
    return lines[cursor++];
  };

  SplitDataset ds;
  const std::string_view header = next_line();
  if (header.substr(0, kHeaderPrefix.size()) != kHeaderPrefix)
    throw io::ParseError(1, "missing '# synth v1 seed=<u64>' header");
  ds.seed = static_cast<std::uint64_t>(io::parse_int(header.substr(kHeaderPrefix.size()), 1));

  {
    const std::size_t line_no = cursor + 1;
    const auto fields = io::split(next_line(), ' ');
    if (fields.size() != 2 || fields[0] != "@classes") throw io::ParseError(line_no, "expected '@classes <C>'");
    ds.num_classes = static_cast<int>(io::parse_int(fields[1], line_no));
    if (ds.num_classes < 2 || ds.num_classes % 2 != 0)
      throw io::ParseError(line_no, "class count must be even and >= 2");
  }

  auto read_block = [&](std::string_view name, Matrix& x, std::vector<int>* labels) {
    const std::size_t line_no = cursor + 1;
    const auto fields = io::split(next_line(), ' ');
    if (fields.size() != 3 || fields[0].substr(1) != name || fields[0][0] != '@')
      throw io::ParseError(line_no, "expected section '@" + std::string(name) + " <rows> <cols>'");
    const long long rows = io::parse_int(fields[1], line_no);
    const long long cols = io::parse_int(fields[2], line_no);
    if (rows < 0 || cols < 1 || rows > 10'000'000 || cols > 100'000)
      throw io::ParseError(line_no, "bad section shape");
    x.resize(rows, cols);
    if (labels) labels->clear();
    for (Eigen::Index i = 0; i < rows; ++i) {
      const std::size_t row_line = cursor + 1;
      const auto values = io::split(next_line(), ',');
      if (static_cast<long long>(values.size()) != cols + 1)
        throw io::ParseError(row_line, "expected " + std::to_string(cols + 1) + " comma-separated fields");
      const long long label = io::parse_int(values[0], row_line);
      if (labels) {
        if (label < 0 || label >= ds.num_classes) throw io::ParseError(row_line, "label out of range");
        labels->push_back(static_cast<int>(label));
      } else if (label != i) {
        throw io::ParseError(row_line, "class embedding rows must be numbered in order");
      }
      for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = io::parse_double(values[j + 1], row_line);
    }
  };
  read_block("pretrain", ds.pretrain.x, &ds.pretrain.labels);
  read_block("base_train", ds.base_train.x, &ds.base_train.labels);
  read_block("base_eval", ds.base_eval.x, &ds.base_eval.labels);
  read_block("novel_train", ds.novel_train.x, &ds.novel_train.labels);
  read_block("novel_eval", ds.novel_eval.x, &ds.novel_eval.labels);
  read_block("class_embeddings", ds.class_embeddings, nullptr);
  if (ds.class_embeddings.rows() != ds.num_classes)
    throw io::ParseError(cursor, "class embedding count differs from @classes");

  const int half = ds.num_classes / 2;
  auto check_split = [&](const LabeledRows& rows, bool base, const char* name) {
    for (int label : rows.labels)
      if ((label < half) != base)
        throw io::ParseError(cursor, std::string(name) + " holds a label from the other split");
    if (rows.x.cols() != ds.pretrain.x.cols())
      throw io::ParseError(cursor, std::string(name) + " has inconsistent feature width");
  };
  check_split(ds.base_train, true, "base_train");
  check_split(ds.base_eval, true, "base_eval");
  check_split(ds.novel_train, false, "novel_train");
  check_split(ds.novel_eval, false, "novel_eval");
  return ds;
}

void save(const SplitDataset& dataset, const std::filesystem::path& path) {
  io::write_file(path, to_text(dataset));
}

SplitDataset load(const std::filesystem::path& path) { return from_text(io::read_file(path)); }

}  // namespace promptot::data
