#include "excelformer/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "excelformer/gradsuite.hpp"
#include "excelformer/io.hpp"
#include "excelformer/preprocess.hpp"
#include "excelformer/rotharness.hpp"

namespace excelformer {

using nlohmann::json;
namespace fs = std::filesystem;

void apply_config(RunConfig& c, const json& j) {
  if (!j.is_object()) throw DataError("config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "blocks") c.model.blocks = v.get<std::size_t>();
      else if (key == "d") c.model.d = v.get<std::size_t>();
      else if (key == "heads") c.model.heads = v.get<std::size_t>();
      else if (key == "attn_dropout") c.model.attn_dropout = v.get<double>();
      else if (key == "gamma") c.model.gamma = v.get<double>();
      else if (key == "variant") c.variant = parse_variant(v.get<std::string>());
      else if (key == "lr") c.train.lr = v.get<double>();
      else if (key == "weight_decay") c.train.weight_decay = v.get<double>();
      else if (key == "batch_size") c.train.batch_size = v.get<std::size_t>();
      else if (key == "max_epochs") c.train.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.train.patience = v.get<std::size_t>();
      else if (key == "seed") c.train.seed = v.get<std::uint64_t>();
      else if (key == "mix") c.train.mix.scheme = parse_mix_scheme(v.get<std::string>());
      else if (key == "alpha_hid") c.train.mix.alpha_hid = v.get<double>();
      else if (key == "alpha_feat") c.train.mix.alpha_feat = v.get<double>();
      else if (key == "alpha_baseline") c.train.mix.alpha_baseline = v.get<double>();
      else throw DataError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config value: ") + e.what());
  }
}

json config_to_json(const RunConfig& c) {
  return json{{"blocks", c.model.blocks},
              {"d", c.model.d},
              {"heads", c.model.heads},
              {"attn_dropout", c.model.attn_dropout},
              {"gamma", c.model.gamma},
              {"variant", std::string(to_string(c.variant))},
              {"lr", c.train.lr},
              {"weight_decay", c.train.weight_decay},
              {"batch_size", c.train.batch_size},
              {"max_epochs", c.train.max_epochs},
              {"patience", c.train.patience},
              {"seed", c.train.seed},
              {"mix", std::string(to_string(c.train.mix.scheme))},
              {"alpha_hid", c.train.mix.alpha_hid},
              {"alpha_feat", c.train.mix.alpha_feat},
              {"alpha_baseline", c.train.mix.alpha_baseline}};
}

namespace {

// Flags shared by `train` and `rotate-exp`; each overrides the config file
// only when given on the command line.
struct HyperFlags {
  std::string config_file;
  std::uint64_t seed = 0;
  std::string mix, variant;
  std::size_t blocks = 0, d = 0, heads = 0, batch_size = 0, max_epochs = 0, patience = 0;
  double dropout = 0, gamma = 0, lr = 0, weight_decay = 0, alpha_hid = 0, alpha_feat = 0,
         alpha_baseline = 0;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat JSON config file")->check(CLI::ExistingFile);
    add(app->add_option("--seed", seed, "random seed"), [this](RunConfig& c) { c.train.seed = seed; });
    add(app->add_option("--mix", mix, "none|hid|feat|both|mixup|cutmix"),
        [this](RunConfig& c) { c.train.mix.scheme = parse_mix_scheme(mix); });
    add(app->add_option("--variant", variant, "full|no-spa|no-iai|vanilla"),
        [this](RunConfig& c) { c.variant = parse_variant(variant); });
    add(app->add_option("--blocks", blocks), [this](RunConfig& c) { c.model.blocks = blocks; });
    add(app->add_option("--d", d, "embedding width"), [this](RunConfig& c) { c.model.d = d; });
    add(app->add_option("--heads", heads), [this](RunConfig& c) { c.model.heads = heads; });
    add(app->add_option("--attn-dropout", dropout), [this](RunConfig& c) { c.model.attn_dropout = dropout; });
    add(app->add_option("--gamma", gamma), [this](RunConfig& c) { c.model.gamma = gamma; });
    add(app->add_option("--lr", lr), [this](RunConfig& c) { c.train.lr = lr; });
    add(app->add_option("--weight-decay", weight_decay),
        [this](RunConfig& c) { c.train.weight_decay = weight_decay; });
    add(app->add_option("--batch-size", batch_size), [this](RunConfig& c) { c.train.batch_size = batch_size; });
    add(app->add_option("--max-epochs", max_epochs), [this](RunConfig& c) { c.train.max_epochs = max_epochs; });
    add(app->add_option("--patience", patience), [this](RunConfig& c) { c.train.patience = patience; });
    add(app->add_option("--alpha-hid", alpha_hid), [this](RunConfig& c) { c.train.mix.alpha_hid = alpha_hid; });
    add(app->add_option("--alpha-feat", alpha_feat),
        [this](RunConfig& c) { c.train.mix.alpha_feat = alpha_feat; });
    add(app->add_option("--alpha", alpha_baseline, "Beta parameter of the Mixup / CutMix baselines"),
        [this](RunConfig& c) { c.train.mix.alpha_baseline = alpha_baseline; });
  }

  void add(CLI::Option* opt, std::function<void(RunConfig&)> fn) { overrides.emplace_back(opt, std::move(fn)); }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) apply_config(c, read_json(config_file));
    for (const auto& [opt, fn] : overrides) {
      if (opt->count() > 0) fn(c);
    }
    c.model.apply(c.variant);
    c.model.validate();
    c.train.validate();
    return c;
  }
};

std::vector<double> labels_of(const TabularDataset& d, const std::vector<std::size_t>& rows) {
  std::vector<double> y;
  for (std::size_t r : rows) y.push_back(d.labels[r]);
  return y;
}

json importance_json(const std::vector<std::string>& names, const ImportanceVector& imp) {
  json out = json::array();
  for (std::size_t j = 0; j < names.size(); ++j) out.push_back({{"feature", names[j]}, {"value", imp[j]}});
  return out;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, task = "binary", target, out;
  std::vector<std::string> categorical;
  HyperFlags hyper;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig config = a.hyper.resolve();
  const CsvTable table = read_csv(a.data);
  TabularDataset data = to_dataset(table, LoadOptions{a.target, parse_task(a.task), a.categorical, {}});
  split(data, config.train.seed);
  const PreparedData prepared = preprocess_pipeline(data);

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "log.jsonl");
  if (!log) throw std::runtime_error("cannot write to '" + a.out + "'");
  const FitResult result = fit(training_data(prepared, data), config.model, config.train,
                               [&](const EpochLog& e) {
                                 log << json{{"epoch", e.epoch},
                                             {"train_loss", e.train_loss},
                                             {"val_metric", e.val_metric},
                                             {"wall_seconds", e.wall_seconds}}
                                            .dump()
                                     << '\n';
                               });

  const std::vector<std::size_t> test_rows = data.rows_in(Split::test);
  const Tensor pred = result.trained.predict(take_rows(prepared.features, test_rows));
  const double test_metric = task_metric(pred, labels_of(data, test_rows), data.task);

  const Checkpoint ckpt{result.trained, prepared.pipeline, a.target, data.class_names};
  save_checkpoint(fs::path(a.out) / "model.ckpt", ckpt);

  CsvTable test_table{table.header, {}};
  for (std::size_t r : test_rows) test_table.rows.push_back(table.rows[r]);
  write_text(fs::path(a.out) / "test_split.csv", format_csv(test_table));

  const json results{{"version", kResultsVersion},
                     {"task", std::string(to_string(data.task))},
                     {"metric", metric_name(data.task)},
                     {"test_metric", test_metric},
                     {"best_val_metric", result.best_val_metric},
                     {"best_epoch", result.best_epoch},
                     {"epochs_run", result.log.size()},
                     {"seed", config.train.seed},
                     {"rows", {{"train", data.rows_in(Split::train).size()},
                               {"val", data.rows_in(Split::val).size()},
                               {"test", test_rows.size()}}},
                     {"importance", importance_json(prepared.pipeline.feature_names, prepared.importance)},
                     {"config", config_to_json(config)}};
  write_text(fs::path(a.out) / "results.json", results.dump(2) + "\n");
  out << json{{"metric", metric_name(data.task)}, {"test_metric", test_metric},
              {"epochs_run", result.log.size()}}.dump()
      << '\n';
  return kExitOk;
}

// ------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string model, data, task;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const Task task = ckpt.trained.model.config().task;
  if (!a.task.empty() && parse_task(a.task) != task) {
    throw DataError("model was trained for task '" + std::string(to_string(task)) +
                    "', not '" + a.task + "'");
  }
  const CsvTable table = read_csv(a.data);
  std::vector<std::string> expected = ckpt.pipeline.feature_names, found;
  for (const std::string& h : table.header) {
    if (h != ckpt.target) found.push_back(h);
  }
  const auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const std::string& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (found != expected) {
    throw DataError("feature columns do not match the model; expected [" + join(expected) +
                    "], found [" + join(found) + "]");
  }
  std::vector<std::string> categorical;
  for (std::size_t j = 0; j < expected.size(); ++j) {
    if (ckpt.pipeline.categorical[j]) categorical.push_back(expected[j]);
  }
  const TabularDataset data = to_dataset(table, LoadOptions{ckpt.target, task, categorical, ckpt.class_names});
  for (std::size_t j = 0; j < expected.size(); ++j) {
    if (!ckpt.pipeline.categorical[j] && data.columns[j].categorical) {
      throw DataError("column '" + expected[j] + "' must be numeric");
    }
  }
  const Tensor pred = ckpt.trained.predict(ckpt.pipeline.transform(data));
  out << json{{"metric", metric_name(task)},
              {"value", task_metric(pred, data.labels, task)},
              {"rows", data.rows()}}.dump()
      << '\n';
  return kExitOk;
}

// ----------------------------------------------------------- rotate-exp

struct RotateArgs {
  std::string data, target, task = "binary", synthetic, variants = "full,vanilla", out;
  std::vector<std::string> categorical;
  std::size_t seeds = 5, n = 1000, informative = 2, noise = 4;
  bool add_noise = false;
  HyperFlags hyper;
};

int cmd_rotate(const RotateArgs& a, std::ostream& out) {
  const RunConfig config = a.hyper.resolve();
  RotationExperiment exp;
  exp.variants.clear();
  std::stringstream ss(a.variants);
  for (std::string v; std::getline(ss, v, ',');) exp.variants.push_back(parse_variant(v));
  exp.seeds = a.seeds;
  exp.first_seed = config.train.seed;
  exp.model = config.model;
  exp.train = config.train;

  TabularDataset data;
  if (!a.synthetic.empty() == !a.data.empty()) {
    throw DataError("rotate-exp needs exactly one of --data or --synthetic");
  }
  if (!a.synthetic.empty()) {
    data = gen_synthetic(SyntheticSpec{parse_synthetic_kind(a.synthetic), a.n, a.informative, a.noise,
                                       parse_task(a.task), config.train.seed});
  } else {
    if (a.target.empty()) throw DataError("--data needs --target");
    data = load_dataset(a.data, LoadOptions{a.target, parse_task(a.task), a.categorical, {}});
  }
  if (a.add_noise) data = add_noise_features(data, config.train.seed).data;

  const std::vector<RotationRecord> records = run_rotation_experiment(data, exp);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "rotation_results.csv", rotation_csv(records));
  const std::string summary = rotation_summary_json(records, data.task);
  write_text(fs::path(a.out) / "rotation_summary.json", summary);
  out << summary;
  return kExitOk;
}

// ------------------------------------------------------------ gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t points = 5;
  double corrupt = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto reports = gradcheck_suite(a.seed, GradsuiteOptions{a.points, 1e-5, a.corrupt});
  bool ok = true;
  out << std::left << std::setw(12) << "layer" << std::setw(16) << "max_rel_error" << std::setw(9)
      << "tensors" << "status\n";
  for (const GradcheckReport& r : reports) {
    ok = ok && r.passed();
    out << std::left << std::setw(12) << r.layer << std::setw(16) << std::scientific
        << std::setprecision(3) << r.max_error << std::defaultfloat << std::setw(9) << r.tensors
        << (r.passed() ? "ok" : "FAIL") << '\n';
  }
  out << (ok ? "all layers within " : "gradient check FAILED; tolerance ") << kGradcheckTolerance << '\n';
  return ok ? kExitOk : kExitFailure;
}

// ------------------------------------------------------------- gen-data

struct GenArgs {
  std::string kind = "linear", task = "binary", out;
  std::size_t n = 1000, informative = 2, noise = 4;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const TabularDataset d = gen_synthetic(
      SyntheticSpec{parse_synthetic_kind(a.kind), a.n, a.informative, a.noise, parse_task(a.task), a.seed});
  CsvTable t;
  for (const Column& c : d.columns) t.header.push_back(c.name);
  t.header.push_back("target");
  for (std::size_t i = 0; i < d.rows(); ++i) {
    std::vector<std::string> row;
    for (const Column& c : d.columns) {
      std::ostringstream v;
      v << std::setprecision(17) << c.numeric[i];
      row.push_back(v.str());
    }
    std::ostringstream y;
    y << std::setprecision(17) << d.labels[i];
    row.push_back(y.str());
    t.rows.push_back(std::move(row));
  }
  write_text(a.out, format_csv(t));
  out << "wrote " << d.rows() << " rows to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ExcelFormer tabular learner", "excelformer"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train a model and evaluate it on the held-out test split");
  t->add_option("--data", train.data, "CSV file with a header row")->required()->check(CLI::ExistingFile);
  t->add_option("--task", train.task, "binary|multiclass|regression")->required();
  t->add_option("--target", train.target, "label column")->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--categorical", train.categorical, "columns to treat as categorical")->delimiter(',');
  train.hyper.attach(t);

  EvaluateArgs eval;
  CLI::App* e = app.add_subcommand("evaluate", "score a checkpoint on a CSV file");
  e->add_option("--model", eval.model, "model.ckpt from train")->required()->check(CLI::ExistingFile);
  e->add_option("--data", eval.data, "CSV file with the training columns")->required()->check(CLI::ExistingFile);
  e->add_option("--task", eval.task, "assert the model's task");

  RotateArgs rot;
  CLI::App* r = app.add_subcommand("rotate-exp", "train variants on unrotated and randomly rotated features");
  r->add_option("--data", rot.data, "CSV file")->check(CLI::ExistingFile);
  r->add_option("--target", rot.target, "label column for --data");
  r->add_option("--task", rot.task, "binary|multiclass|regression");
  r->add_option("--categorical", rot.categorical)->delimiter(',');
  r->add_option("--synthetic", rot.synthetic, "linear|xor|piecewise");
  r->add_option("--n", rot.n, "synthetic rows");
  r->add_option("--informative", rot.informative, "synthetic informative columns");
  r->add_option("--noise", rot.noise, "synthetic noise columns");
  r->add_flag("--add-noise", rot.add_noise, "append one Gaussian column per feature");
  r->add_option("--variants", rot.variants, "comma list of full|no-spa|no-iai|vanilla");
  r->add_option("--seeds", rot.seeds, "number of seeds");
  r->add_option("--out", rot.out, "output directory")->required();
  rot.hyper.attach(r);

  GradcheckArgs gc;
  CLI::App* g = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  g->add_option("--seed", gc.seed);
  g->add_option("--points", gc.points, "random points per layer");
  g->add_option("--corrupt", gc.corrupt, "add this to one analytic gradient entry")->group("");

  GenArgs gen;
  CLI::App* gd = app.add_subcommand("gen-data", "write a synthetic dataset as CSV (label column 'target')");
  gd->add_option("--kind", gen.kind, "linear|xor|piecewise");
  gd->add_option("--task", gen.task, "binary|multiclass|regression");
  gd->add_option("--n", gen.n);
  gd->add_option("--informative", gen.informative);
  gd->add_option("--noise", gen.noise);
  gd->add_option("--seed", gen.seed);
  gd->add_option("--out", gen.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_evaluate(eval, out);
    if (r->parsed()) return cmd_rotate(rot, out);
    if (g->parsed()) return cmd_gradcheck(gc, out);
    if (gd->parsed()) return cmd_gen(gen, out);
  } catch (const DataError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace excelformer
