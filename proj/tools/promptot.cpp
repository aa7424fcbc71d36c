// promptot: synthetic datasets, zero-shot pretraining, prompt adaptation and
// the constraint experiments, driven from the command line.
//
// Exit codes: 0 success, 1 runtime/training/certificate failure, 2 usage or
// configuration error.

#include "promptot/harness.hpp"
#include "promptot/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

using namespace promptot;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CertificateFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options shared by every command that needs a dataset and a model.
struct Inputs {
  std::string data;
  std::string model;
  std::uint64_t data_seed = 0;
  std::uint64_t model_seed = 0;
};

struct Training {
  std::string constraint = "joint-ot";
  double lambda = 10.0;
  std::string solver = "exact";
  double epsilon = 0.0;
  std::string cost = "sqeuclidean";
  int epochs = 50;
  double lr = 0.2;
  int batch = 16;
  double prompt_init_std = 0.02;
  std::uint64_t seed = 0;
};

struct Options {
  std::string out;
  std::string manifest;
  std::string config;

  data::SyntheticSpec synth;
  train::PretrainConfig pretrain;
  Inputs inputs;
  Training training;

  int trials = 1000;
  std::uint64_t seed = 0;
  harness::FeasibleSetConfig feasible;
  std::string lambdas = "0,0.1,1,10,100,1000";
  std::string seeds = "0,1,2,3,4";
  std::string constraint_list = "none,l2,l1,cos,sep-ot,joint-ot,vision-ot,text-ot";
};

void add_inputs(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--data", in.data, "Dataset file; generated from --data-seed when omitted");
  cmd->add_option("--model", in.model, "Checkpoint; pretrained from --model-seed when omitted");
  cmd->add_option("--data-seed", in.data_seed, "Seed of the generated default dataset");
  cmd->add_option("--model-seed", in.model_seed, "Seed of the default pretraining run");
}

void add_training(CLI::App* cmd, Training& t, bool with_constraint) {
  if (with_constraint) {
    cmd->add_option("--constraint", t.constraint, "none|l2|l1|cos|sep-ot|joint-ot|vision-ot|text-ot");
    cmd->add_option("--seed", t.seed, "Adaptation seed");
  }
  cmd->add_option("--lambda", t.lambda, "Regularizer weight");
  cmd->add_option("--solver", t.solver, "exact|sinkhorn")->check(CLI::IsMember({"exact", "sinkhorn"}));
  cmd->add_option("--epsilon", t.epsilon, "Sinkhorn entropic weight; 0 selects 0.05 * mean cost");
  cmd->add_option("--cost", t.cost, "sqeuclidean|cosine");
  cmd->add_option("--epochs", t.epochs);
  cmd->add_option("--lr", t.lr);
  cmd->add_option("--batch", t.batch);
  cmd->add_option("--prompt-init-std", t.prompt_init_std);
}

train::TrainConfig to_train_config(const Training& t) {
  train::TrainConfig cfg;
  cfg.constraint = {constraints::parse_kind(t.constraint), t.lambda};
  cfg.cost = ot::parse_cost_kind(t.cost);
  if (t.solver == "sinkhorn") {
    ot::SinkhornConfig sk;
    sk.epsilon = t.epsilon;
    cfg.solver = sk;
  } else {
    cfg.solver = ot::ExactSolver{};
  }
  cfg.epochs = t.epochs;
  cfg.lr = t.lr;
  cfg.batch_size = t.batch;
  cfg.prompt_init_std = t.prompt_init_std;
  cfg.seed = t.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto field : io::split(text, ','))
    try {
      const long long v = io::parse_int(io::trim(field), 0);
      if (v < 0) throw UsageError("seeds must be >= 0");
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const io::ParseError&) {
      throw UsageError("bad seed list '" + text + "'");
    }
  if (out.empty()) throw UsageError("seed list is empty");
  return out;
}

std::vector<double> parse_lambda_list(const std::string& text) {
  std::vector<double> out;
  for (auto field : io::split(text, ','))
    try {
      const double v = io::parse_double(io::trim(field), 0);
      if (!(v >= 0.0)) throw UsageError("lambda values must be >= 0");
      out.push_back(v);
    } catch (const io::ParseError&) {
      throw UsageError("bad lambda list '" + text + "'");
    }
  if (out.empty()) throw UsageError("lambda list is empty");
  return out;
}

std::vector<constraints::Kind> parse_kind_list(const std::string& text) {
  std::vector<constraints::Kind> out;
  for (auto field : io::split(text, ',')) out.push_back(constraints::parse_kind(io::trim(field)));
  if (out.empty()) throw UsageError("constraint list is empty");
  return out;
}

data::SplitDataset load_dataset(const Inputs& in) {
  if (!in.data.empty()) return data::load(in.data);
  data::SyntheticSpec spec;
  spec.seed = in.data_seed;
  return data::generate(spec);
}

model::ModelPair load_model(const Inputs& in, const data::SplitDataset& dataset) {
  if (!in.model.empty()) return model::load_checkpoint(in.model);
  train::PretrainConfig cfg;
  cfg.seed = in.model_seed;
  return train::pretrain_zero_shot(dataset, cfg);
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty())
    std::cout << text;
  else
    io::write_file(out, text);
}

// Resolved options of the selected command, defaults included.
nlohmann::ordered_json manifest_for(const CLI::App& cmd, const Options& opt) {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const CLI::Option* o : cmd.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "manifest") continue;
    const auto& results = o->results();
    config[name] = results.empty() ? o->get_default_str() : results.back();
  }
  nlohmann::ordered_json m;
  m["command"] = cmd.get_name();
  m["version"] = PROMPTOT_VERSION;
  m["seed"] = config.contains("seed") ? config["seed"] : nlohmann::ordered_json(nullptr);
  m["config"] = config;
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
  if (!opt.out.empty()) outputs.push_back(opt.out);
  m["outputs"] = outputs;
  return m;
}

void write_manifest(const CLI::App& cmd, const Options& opt) {
  std::string path = opt.manifest;
  if (path.empty() && !opt.out.empty()) path = opt.out + ".manifest.json";
  if (path.empty()) return;
  io::write_file(path, manifest_for(cmd, opt).dump(2) + "\n");
}

// `key = value` lines become `--key value` arguments placed before the
// command-line flags, so flags win under the take-last policy.
std::vector<std::string> config_arguments(const std::string& path, const CLI::App& cmd) {
  const std::string text = io::read_file(path);
  std::vector<std::string> args;
  const auto lines = io::split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    std::string_view line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw io::ParseError(line_no, path + ": expected 'key = value'");
    const std::string key(io::trim(line.substr(0, eq)));
    const std::string value(io::trim(line.substr(eq + 1)));
    if (key.empty() || value.empty()) throw io::ParseError(line_no, path + ": empty key or value");
    if (key == "config" || key == "manifest" || key == "help")
      throw io::ParseError(line_no, path + ": key '" + key + "' is not allowed in a config file");
    bool known = false;
    for (const CLI::Option* o : cmd.get_options())
      if (o->get_single_name() == key) known = true;
    if (!known) throw io::ParseError(line_no, path + ": unknown key '" + key + "' for " + cmd.get_name());
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

// Finds `--config PATH` or `--config=PATH` after the subcommand name.
std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

void print_accuracy(const char* label, const train::SplitAccuracy& acc) {
  std::printf("%s base_acc %s novel_acc %s hm %s\n", label, io::format_fixed(acc.base).c_str(),
              io::format_fixed(acc.novel).c_str(), io::format_fixed(acc.hm).c_str());
}

int run_gen_data(const Options& opt) {
  const auto ds = data::generate(opt.synth);
  data::save(ds, opt.out);
  std::printf("wrote %s: %d classes, %lld base_train rows, %lld novel_eval rows\n", opt.out.c_str(),
              ds.num_classes, static_cast<long long>(ds.base_train.size()),
              static_cast<long long>(ds.novel_eval.size()));
  return 0;
}

int run_pretrain(const Options& opt) {
  const auto ds = load_dataset(opt.inputs);
  const auto model = train::pretrain_zero_shot(ds, opt.pretrain);
  model::save_checkpoint(model, opt.out);
  model::ModelPair zero_shot = model;
  zero_shot.adapted = zero_shot.zero_shot;
  print_accuracy("zero-shot", train::evaluate_splits(zero_shot, ds));
  return 0;
}

int run_adapt(const Options& opt, const std::string& checkpoint_out) {
  const auto cfg = to_train_config(opt.training);
  const auto ds = load_dataset(opt.inputs);
  const auto model = load_model(opt.inputs, ds);
  const auto result = train::adapt(model, ds, cfg);
  emit(result.record.to_csv(), opt.out);
  if (!checkpoint_out.empty()) model::save_checkpoint(result.model, checkpoint_out);
  return 0;
}

int run_check_lemma2(const Options& opt) {
  const auto r = harness::check_lemma2(opt.trials, opt.seed);
  std::printf("trials %d checks %d\n", r.trials, r.checks);
  std::printf("min_gap %s max_gap %s\n", io::format_fixed(r.min_gap).c_str(), io::format_fixed(r.max_gap).c_str());
  std::printf("%d violations\n", r.violations);
  if (r.violations != 0) throw CertificateFailure("joint OT exceeded the point-wise loss");
  return 0;
}

int run_feasible_set(const Options& opt) {
  harness::FeasibleSetConfig cfg = opt.feasible;
  cfg.seed = opt.seed;
  const auto ds = load_dataset(opt.inputs);
  const auto model = load_model(opt.inputs, ds);
  const auto r = harness::feasible_set_experiment(model, ds, cfg);
  emit(harness::feasible_csv(r), opt.out);
  if (r.violations != 0) throw CertificateFailure("point-wise feasible set is not inside the OT feasible set");
  return 0;
}

int run_sweep_lambda(const Options& opt) {
  train::TrainConfig cfg = to_train_config(opt.training);
  const auto lambdas = parse_lambda_list(opt.lambdas);
  const auto seeds = parse_seed_list(opt.seeds);
  const auto ds = load_dataset(opt.inputs);
  const auto model = load_model(opt.inputs, ds);
  emit(harness::lambda_csv(harness::lambda_sweep(model, ds, lambdas, seeds, cfg)), opt.out);
  return 0;
}

int run_compare(const Options& opt) {
  train::TrainConfig cfg = to_train_config(opt.training);
  const auto kinds = parse_kind_list(opt.constraint_list);
  const auto seeds = parse_seed_list(opt.seeds);
  const auto ds = load_dataset(opt.inputs);
  const auto model = load_model(opt.inputs, ds);
  emit(harness::compare_csv(harness::compare_constraints(model, ds, kinds, seeds, cfg)), opt.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt adaptation with optimal-transport consistency constraints"};
  app.set_version_flag("--version", PROMPTOT_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Options opt;
  std::string checkpoint_out;
  auto add_common = [&](CLI::App* cmd, bool out_required) {
    auto* out = cmd->add_option("--out", opt.out, "Output path");
    if (out_required) out->required();
    cmd->add_option("--manifest", opt.manifest, "Run manifest path; defaults to <out>.manifest.json");
    cmd->add_option("--config", opt.config, "File of 'key = value' lines; flags override it");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic base/novel dataset");
  add_common(gen, true);
  gen->add_option("--classes", opt.synth.num_classes, "Class count (even)");
  gen->add_option("--dim", opt.synth.dim);
  gen->add_option("--text-dim", opt.synth.text_dim);
  gen->add_option("--train-per-class", opt.synth.train_per_class);
  gen->add_option("--eval-per-class", opt.synth.eval_per_class);
  gen->add_option("--pretrain-per-class", opt.synth.pretrain_per_class);
  gen->add_option("--noise", opt.synth.noise_std);
  gen->add_option("--sep", opt.synth.class_sep);
  gen->add_option("--shift", opt.synth.domain_shift);
  gen->add_option("--seed", opt.synth.seed);

  auto* pre = app.add_subcommand("pretrain", "Pretrain the zero-shot model and write a checkpoint");
  add_common(pre, true);
  pre->add_option("--data", opt.inputs.data);
  pre->add_option("--data-seed", opt.inputs.data_seed);
  pre->add_option("--epochs", opt.pretrain.epochs);
  pre->add_option("--lr", opt.pretrain.lr);
  pre->add_option("--batch", opt.pretrain.batch_size);
  pre->add_option("--hidden", opt.pretrain.dims.hidden);
  pre->add_option("--embedding", opt.pretrain.dims.embedding);
  pre->add_option("--prompt-dim", opt.pretrain.dims.prompt);
  pre->add_option("--tau", opt.pretrain.tau);
  pre->add_option("--seed", opt.pretrain.seed);

  auto* ad = app.add_subcommand("adapt", "Adapt the prompts on base classes; writes the per-epoch CSV");
  add_common(ad, false);
  add_inputs(ad, opt.inputs);
  add_training(ad, opt.training, true);
  ad->add_option("--checkpoint", checkpoint_out, "Also save the adapted model here");

  auto* lemma = app.add_subcommand("check-lemma2", "Check joint OT <= point-wise loss on random instances");
  add_common(lemma, false);
  lemma->add_option("--trials", opt.trials);
  lemma->add_option("--seed", opt.seed);

  auto* fs = app.add_subcommand("feasible-set", "Compare point-wise and OT feasible prompt sets by sampling");
  add_common(fs, false);
  add_inputs(fs, opt.inputs);
  fs->add_option("--samples", opt.feasible.num_samples);
  fs->add_option("--epsilon", opt.feasible.epsilon, "Constraint radius; 0 calibrates to --occupancy");
  fs->add_option("--occupancy", opt.feasible.target_occupancy);
  fs->add_option("--prompt-std", opt.feasible.prompt_std);
  fs->add_option("--seed", opt.seed);

  auto* sweep = app.add_subcommand("sweep-lambda", "Joint OT adaptation over a lambda grid and seeds");
  add_common(sweep, false);
  add_inputs(sweep, opt.inputs);
  add_training(sweep, opt.training, false);
  sweep->add_option("--lambdas", opt.lambdas, "Comma-separated lambda grid");
  sweep->add_option("--seeds", opt.seeds, "Comma-separated seeds");

  auto* cmp = app.add_subcommand("compare", "Adaptation under each constraint kind and seed");
  add_common(cmp, false);
  add_inputs(cmp, opt.inputs);
  add_training(cmp, opt.training, false);
  cmp->add_option("--constraints", opt.constraint_list, "Comma-separated constraint kinds");
  cmp->add_option("--seeds", opt.seeds, "Comma-separated seeds");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty()) {
      if (const CLI::App* cmd = app.get_subcommand_no_throw(args[0])) {
        if (const auto path = find_config(std::vector<std::string>(args.begin() + 1, args.end()))) {
          auto extra = config_arguments(*path, *cmd);
          args.insert(args.begin() + 1, extra.begin(), extra.end());
        }
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const io::ParseError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const io::IoError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd == gen) opt.synth.validate();
    if (cmd == pre) opt.pretrain.validate();
    if (cmd == ad || cmd == sweep || cmd == cmp) to_train_config(opt.training);
    write_manifest(*cmd, opt);
    if (cmd == gen) return run_gen_data(opt);
    if (cmd == pre) return run_pretrain(opt);
    if (cmd == ad) return run_adapt(opt, checkpoint_out);
    if (cmd == lemma) return run_check_lemma2(opt);
    if (cmd == fs) return run_feasible_set(opt);
    if (cmd == sweep) return run_sweep_lambda(opt);
    return run_compare(opt);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const CertificateFailure& e) {
    std::fprintf(stderr, "certificate failed: %s\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
