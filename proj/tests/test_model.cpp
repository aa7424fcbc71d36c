#include "promptot/io.hpp"
#include "promptot/model.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

using namespace promptot;
using namespace promptot::model;

namespace {

ModelPair random_model(std::uint64_t seed) {
  Rng rng(seed);
  ModelPair m;
  m.vision = init_encoder(rng, 6, 3, 12, 5);
  m.text = init_encoder(rng, 4, 3, 12, 5);
  m.adapted = {gaussian_vector(rng, 3, 0.5), gaussian_vector(rng, 3, 0.5)};
  m.zero_shot = {gaussian_vector(rng, 3, 0.5), gaussian_vector(rng, 3, 0.5)};
  m.tau = 0.05;
  m.seed = seed;
  return m;
}

// Scalar test loss <out, weights> so every output entry gets a distinct gradient.
double probe(const Matrix& inputs, const EncoderWeights& w, const Vector& prompt, const Matrix& weights) {
  return (encode(inputs, w, prompt).array() * weights.array()).sum();
}

}  // namespace

TEST_CASE("encoder outputs are unit rows of the embedding width") {
  const ModelPair m = random_model(1);
  Rng rng(2);
  const Matrix x = gaussian_matrix(rng, 7, 6, 1.0);
  const Matrix h = encode_vision(x, m.vision, m.adapted.p);
  CHECK(h.rows() == 7);
  CHECK(h.cols() == 5);
  for (Eigen::Index i = 0; i < 7; ++i) CHECK(h.row(i).norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(encode(gaussian_matrix(rng, 2, 5, 1.0), m.vision, m.adapted.p), ShapeError);
  CHECK_THROWS_AS(encode(x, m.vision, Vector::Zero(2)), ShapeError);
}

TEST_CASE("encoder_backward matches finite differences") {
  const ModelPair m = random_model(3);
  Rng rng(4);
  const Matrix x = gaussian_matrix(rng, 5, 6, 1.0);
  const Matrix upstream = gaussian_matrix(rng, 5, 5, 1.0);
  EncoderCache cache;
  encode(x, m.vision, m.adapted.p, &cache);
  const EncoderGrads grads = encoder_backward(cache, m.vision, upstream, true);
  const double h = 1e-6;

  for (Eigen::Index k = 0; k < m.adapted.p.size(); ++k) {
    Vector pp = m.adapted.p, pm = m.adapted.p;
    pp[k] += h;
    pm[k] -= h;
    const double numeric = (probe(x, m.vision, pp, upstream) - probe(x, m.vision, pm, upstream)) / (2 * h);
    CHECK(grads.prompt[k] == doctest::Approx(numeric).epsilon(1e-6).scale(1.0));
  }
  for (Eigen::Index i = 0; i < m.vision.w1.rows(); i += 3)
    for (Eigen::Index j = 0; j < m.vision.w1.cols(); ++j) {
      EncoderWeights wp = m.vision, wm = m.vision;
      wp.w1(i, j) += h;
      wm.w1(i, j) -= h;
      const double numeric = (probe(x, wp, m.adapted.p, upstream) - probe(x, wm, m.adapted.p, upstream)) / (2 * h);
      CHECK(grads.w1(i, j) == doctest::Approx(numeric).epsilon(1e-6).scale(1.0));
    }
  for (Eigen::Index i = 0; i < m.vision.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < m.vision.w2.cols(); j += 2) {
      EncoderWeights wp = m.vision, wm = m.vision;
      wp.w2(i, j) += h;
      wm.w2(i, j) -= h;
      const double numeric = (probe(x, wp, m.adapted.p, upstream) - probe(x, wm, m.adapted.p, upstream)) / (2 * h);
      CHECK(grads.w2(i, j) == doctest::Approx(numeric).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("logits scale cosine similarity by the temperature") {
  const Matrix h = (Matrix(1, 2) << 1, 0).finished();
  const Matrix g = (Matrix(2, 2) << 1, 0, 0, 1).finished();
  const Matrix l = logits(h, g, 0.01);
  CHECK(l(0, 0) == doctest::Approx(100.0));
  CHECK(l(0, 1) == doctest::Approx(0.0));
  CHECK_THROWS_AS(logits(h, g, 0.0), ConfigError);
  const Matrix p = predict(h, g, 0.5);
  CHECK(p.row(0).sum() == doctest::Approx(1.0));
  CHECK(p(0, 0) > p(0, 1));
}

TEST_CASE("evaluate restricts prediction to the class set") {
  const ModelPair m = random_model(5);
  Rng rng(6);
  const Matrix rows = gaussian_matrix(rng, 30, 6, 1.0);
  const Matrix classes = gaussian_matrix(rng, 4, 4, 1.0);
  const std::vector<int> labels(30, 2);
  CHECK(evaluate(m, rows, labels, std::vector<int>{2}, classes) == 1.0);
  CHECK_THROWS_AS(evaluate(m, rows, labels, std::vector<int>{}, classes), ConfigError);
  CHECK_THROWS(evaluate(m, rows, std::vector<int>(29, 2), std::vector<int>{2}, classes));
}

TEST_CASE("a random model is at chance level on random labels") {
  const ModelPair m = random_model(7);
  Rng rng(8);
  const int n = 8000;
  const Matrix rows = gaussian_matrix(rng, n, 6, 1.0);
  const Matrix classes = gaussian_matrix(rng, 4, 4, 1.0);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(4)));
  const double acc = evaluate(m, rows, labels, std::vector<int>{0, 1, 2, 3}, classes);
  CHECK(acc == doctest::Approx(0.25).epsilon(0.15));
}

TEST_CASE("checkpoints round-trip exactly") {
  const ModelPair m = random_model(9);
  const auto path = std::filesystem::temp_directory_path() / "promptot_ckpt_test.txt";
  save_checkpoint(m, path);
  const ModelPair back = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.vision.w1 == m.vision.w1);
  CHECK(back.vision.w2 == m.vision.w2);
  CHECK(back.text.w1 == m.text.w1);
  CHECK(back.text.w2 == m.text.w2);
  CHECK(back.vision.prompt_dim == 3);
  CHECK(back.adapted.p == m.adapted.p);
  CHECK(back.adapted.q == m.adapted.q);
  CHECK(back.zero_shot.p == m.zero_shot.p);
  CHECK(back.zero_shot.q == m.zero_shot.q);
  CHECK(back.tau == m.tau);
  CHECK(back.seed == m.seed);
  CHECK(checkpoint_text(back) == checkpoint_text(m));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string good = checkpoint_text(random_model(10));
  const auto path = std::filesystem::temp_directory_path() / "promptot_bad_ckpt.txt";
  auto load_text = [&](const std::string& text) {
    io::write_file(path, text);
    return load_checkpoint(path);
  };
  CHECK_THROWS_AS(load_text("not a checkpoint\n"), io::ParseError);
  CHECK_THROWS_AS(load_text(good.substr(0, good.size() / 2)), io::ParseError);
  std::string bad_number = good;
  bad_number.replace(bad_number.find("tau ") + 4, 1, "x");
  CHECK_THROWS_AS(load_text(bad_number), io::ParseError);
  std::string missing = good;
  const auto start = missing.find("section adapted.q");
  missing.erase(start, missing.find("section zero_shot.p") - start);
  CHECK_THROWS_AS(load_text(missing), CheckpointError);
  CHECK_THROWS(load_checkpoint(path.string() + ".missing"));
  std::filesystem::remove(path);
}

TEST_CASE("encoder determinism and prompt sensitivity") {
  Rng rng(0);
  const EncoderWeights w = init_encoder(rng, 4, 2, 8, 3);
  const Matrix x = gaussian_matrix(rng, 1, 4, 1.0);
  Matrix twice(2, 4);
  twice << x, x;
  const Matrix out = encode(twice, w, Vector::Zero(2));
  CHECK(out.row(0) == out.row(1));
  for (Eigen::Index i = 0; i < out.rows(); ++i) CHECK(std::abs(out.row(i).norm() - 1.0) <= 1e-12);
  const Vector p = (Vector(2) << 0.3, -0.2).finished();
  CHECK((encode(x, w, p) - encode(x, w, Vector::Zero(2))).norm() > 0.0);
}

TEST_CASE("text encoder with zero-shot prompts reproduces zero-shot embeddings") {
  const ModelPair m = random_model(11);
  Rng rng(12);
  const Matrix row = gaussian_matrix(rng, 1, 4, 1.0);
  Matrix classes(3, 4);
  classes << row, row, row;
  const Matrix g = encode_text(classes, m.text, m.zero_shot.q);
  CHECK(g.row(0) == g.row(2));
  ModelPair same = m;
  same.adapted.q = m.zero_shot.q;
  CHECK(encode_text(classes, same.text, same.adapted.q) == g);
}

TEST_CASE("prediction worked examples") {
  Matrix g = Matrix::Identity(3, 3);
  const Matrix h = g.row(0);
  const Matrix p = predict(h, g, 0.01);
  // softmax of (100, 0, 0)
  const double oracle = 1.0 / (1.0 + 2.0 * std::exp(-100.0));
  CHECK(p(0, 0) == doctest::Approx(oracle));
  CHECK(p(0, 0) > 0.999);

  const Matrix tied = predict((Matrix(1, 3) << 1, 1, 1).finished() / std::sqrt(3.0), g, 0.01);
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(tied(0, k) == doctest::Approx(1.0 / 3.0));

  Rng rng(13);
  const Matrix hs = normalize_rows(gaussian_matrix(rng, 20, 3, 1.0));
  const Matrix gs = normalize_rows(gaussian_matrix(rng, 4, 3, 1.0));
  const Matrix a = predict(hs, gs, 0.05);
  const Matrix b = predict(hs, gs, 0.01);
  for (Eigen::Index i = 0; i < 20; ++i) {
    Eigen::Index ia = 0, ib = 0;
    a.row(i).maxCoeff(&ia);
    b.row(i).maxCoeff(&ib);
    CHECK(ia == ib);
  }
}
