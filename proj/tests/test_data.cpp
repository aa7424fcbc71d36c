#include "promptot/data.hpp"
#include "promptot/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace promptot;
using namespace promptot::data;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.num_classes = 6;
  s.dim = 5;
  s.text_dim = 3;
  s.train_per_class = 4;
  s.eval_per_class = 3;
  s.pretrain_per_class = 2;
  s.seed = seed;
  return s;
}

std::size_t line_of(const std::string& text, std::string_view needle) {
  const auto pos = text.find(needle);
  return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) +
         1;
}

}  // namespace

TEST_CASE("generate is deterministic in the seed") {
  CHECK(generate(small_spec(3)) == generate(small_spec(3)));
  CHECK_FALSE(generate(small_spec(3)) == generate(small_spec(4)));
}

TEST_CASE("splits have the documented sizes and label ranges") {
  const SplitDataset ds = generate(small_spec());
  CHECK(ds.pretrain.size() == 12);
  CHECK(ds.base_train.size() == 12);
  CHECK(ds.novel_train.size() == 12);
  CHECK(ds.base_eval.size() == 9);
  CHECK(ds.novel_eval.size() == 9);
  CHECK(ds.class_embeddings.rows() == 6);
  CHECK(ds.class_embeddings.cols() == 3);
  for (int y : ds.base_train.labels) CHECK(y < 3);
  for (int y : ds.base_eval.labels) CHECK(y < 3);
  for (int y : ds.novel_train.labels) CHECK(y >= 3);
  for (int y : ds.novel_eval.labels) CHECK(y >= 3);
  const std::set<int> pretrain(ds.pretrain.labels.begin(), ds.pretrain.labels.end());
  CHECK(pretrain.size() == 6);
  CHECK(ds.base_classes() == std::vector<int>{0, 1, 2});
  CHECK(ds.novel_classes() == std::vector<int>{3, 4, 5});
  CHECK(ds.all_classes().size() == 6);
}

TEST_CASE("zero noise places every sample on its class center") {
  SyntheticSpec s = small_spec();
  s.noise_std = 0.0;
  s.domain_shift = 0.0;
  const SplitDataset ds = generate(s);
  for (Eigen::Index i = 1; i < ds.base_train.x.rows(); ++i)
    if (ds.base_train.labels[static_cast<std::size_t>(i)] == ds.base_train.labels[static_cast<std::size_t>(i - 1)])
      CHECK(ds.base_train.x.row(i) == ds.base_train.x.row(i - 1));
  CHECK(ds.pretrain.x.row(0) == ds.base_train.x.row(0));
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec s = small_spec();
  s.num_classes = 7;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec();
  s.num_classes = 0;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec();
  s.noise_std = -1.0;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec();
  s.train_per_class = 0;
  CHECK_THROWS_AS(generate(s), ConfigError);
}

TEST_CASE("the text format round-trips exactly") {
  const SplitDataset ds = generate(small_spec(5));
  const std::string text = to_text(ds);
  CHECK(text.rfind("# synth v1 seed=5\n@classes 6\n@pretrain 12 5\n", 0) == 0);
  CHECK(from_text(text) == ds);
  CHECK(to_text(from_text(text)) == text);

  const auto path = std::filesystem::temp_directory_path() / "promptot_data_test.txt";
  save(ds, path);
  CHECK(load(path) == ds);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load(path), io::IoError);
}

TEST_CASE("malformed dataset files report the offending line") {
  const std::string text = to_text(generate(small_spec()));
  auto expect_line = [](const std::string& bad, std::size_t line) {
    try {
      from_text(bad);
      FAIL("expected a parse error");
    } catch (const io::ParseError& e) {
      CHECK(e.line == line);
    }
  };

  expect_line("garbage\n" + text.substr(text.find('\n') + 1), 1);

  std::string bad_value = text;
  const auto row = bad_value.find("\n", bad_value.find("@base_train")) + 1;
  bad_value.replace(bad_value.find(',', row) + 1, 1, "z");
  expect_line(bad_value, line_of(bad_value, "@base_train") + 1);

  std::string wrong_split = text;
  const auto novel_row = wrong_split.find("\n", wrong_split.find("@novel_train")) + 1;
  wrong_split.replace(novel_row, 1, "0");
  CHECK_THROWS_AS(from_text(wrong_split), io::ParseError);

  std::string out_of_range = text;
  out_of_range.replace(row, 1, "9");
  expect_line(out_of_range, line_of(out_of_range, "@base_train") + 1);

  CHECK_THROWS_AS(from_text(text.substr(0, text.size() / 2)), io::ParseError);
  CHECK_THROWS_AS(from_text(""), io::ParseError);
}

TEST_CASE("splits are disjoint and together cover every class") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const SplitDataset ds = generate(small_spec(seed));
    std::set<int> base, novel;
    for (int y : ds.base_train.labels) base.insert(y);
    for (int y : ds.base_eval.labels) base.insert(y);
    for (int y : ds.novel_train.labels) novel.insert(y);
    for (int y : ds.novel_eval.labels) novel.insert(y);
    for (int y : base) CHECK(novel.count(y) == 0);
    CHECK(base.size() + novel.size() == 6);
  }
  const SplitDataset defaults = generate(SyntheticSpec{});
  CHECK(defaults.base_train.size() == 4 * 20);
  CHECK(defaults.novel_train.size() == 4 * 20);
}
