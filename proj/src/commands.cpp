#include "stem/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "stem/analysis.hpp"
#include "stem/checkpoint.hpp"
#include "stem/errors.hpp"
#include "stem/metrics.hpp"
#include "stem/synthetic.hpp"
#include "stem/train.hpp"

namespace stem {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

std::string num(std::optional<double> v) { return v ? num(*v) : "NA"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void prepare_out_dir(const fs::path& out, bool force) {
  if (out.empty()) throw ConfigError("no output directory (use --out or out_dir)");
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    throw ConfigError("output directory '" + out.string() + "' exists; pass --force to overwrite");
  }
  fs::create_directories(out);
}

void write_resolved_config(RunConfig cfg, const fs::path& out) {
  cfg.out_dir = out.string();
  write_text(out / "config.resolved.json", to_json(cfg).dump(2) + "\n");
}

std::string task_label(const std::vector<std::string>& names, std::size_t t) {
  return t < names.size() ? names[t] : "task" + std::to_string(t);
}

struct RunSummary {
  fs::path dir;
  double lr = 0.0;
  std::optional<double> best_val_auc;
  std::size_t best_epoch = 0;
};

RunSummary train_one(const RunConfig& cfg, const DataSplits& splits, const fs::path& out,
                     std::ostream& log) {
  ModelConfig mc = cfg.model;
  mc.num_tasks = splits.train.num_tasks();
  const Model model(mc, splits.train.schema());
  const FitResult fit_result = fit(model, splits.train, splits.val, cfg.train);
  fs::create_directories(out);
  save_model_dir(out, model, fit_result.best, splits.train.task_names());
  write_text(out / "train_log.csv", training_log_csv(fit_result, model));
  RunConfig resolved = cfg;
  resolved.learning_rates = {cfg.train.learning_rate};
  write_resolved_config(resolved, out);

  RunSummary s;
  s.dir = out;
  s.lr = cfg.train.learning_rate;
  s.best_epoch = fit_result.best_epoch;
  for (const auto& e : fit_result.log) {
    if (e.selected) s.best_val_auc = e.val.average_auc;
  }
  log << to_string(mc.variant) << " lr=" << num(s.lr) << ": best epoch " << s.best_epoch
      << ", val avg AUC " << num(s.best_val_auc) << "\n";
  return s;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::kConfig: return kExitConfig;
      case ErrorKind::kParse:
      case ErrorKind::kEmptyInput:
      case ErrorKind::kBounds:
      case ErrorKind::kData: return kExitData;
      case ErrorKind::kShape:
      case ErrorKind::kNumeric: return kExitNumeric;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return kExitData;
  return 1;
}

PreparedData prepare_data(const RunConfig& cfg) {
  Dataset data;
  if (cfg.data.synthetic) {
    data = generate_synthetic(*cfg.data.synthetic).dataset;
  } else if (cfg.data.csv) {
    data = load_csv(*cfg.data.csv);
  } else {
    throw ConfigError("data: need a synthetic block or a csv path");
  }
  DataSplits raw = split(data, cfg.data.split, cfg.seed);
  FilterResult filtered = frequency_filter(raw.train, cfg.data.min_count);
  PreparedData out;
  out.splits.train = std::move(filtered.filtered);
  out.splits.val = filtered.remap.apply(raw.val);
  out.splits.test = filtered.remap.apply(raw.test);
  out.remap = std::move(filtered.remap);
  return out;
}

DataSplits load_splits(const RunConfig& cfg) {
  if (!cfg.data.dir) return prepare_data(cfg).splits;
  const fs::path dir(*cfg.data.dir);
  const json schema_doc = read_json(dir / "schema.json");
  FieldSchema schema;
  std::vector<std::string> names;
  try {
    schema.vocab_sizes = schema_doc.at("vocab_sizes").get<std::vector<std::uint32_t>>();
    names = schema_doc.at("task_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError("schema.json: " + std::string(e.what()));
  }
  DataSplits s;
  s.train = load_csv(dir / "train.csv", schema);
  s.val = load_csv(dir / "val.csv", schema);
  s.test = load_csv(dir / "test.csv", schema);
  for (Dataset* d : {&s.train, &s.val, &s.test}) d->set_task_names(names);
  return s;
}

void save_model_dir(const fs::path& dir, const Model& model, const ParamStore& params,
                    const std::vector<std::string>& task_names) {
  json j;
  j["model"] = to_json(model.config());
  j["vocab_sizes"] = model.schema().vocab_sizes;
  j["task_names"] = task_names;
  j["tables"] = model.arch().tables;
  write_text(dir / "model.json", j.dump(2) + "\n");
  save_checkpoint(params, dir / "model.ckpt");
}

LoadedModel load_model_dir(const fs::path& dir) {
  const json j = read_json(dir / "model.json");
  FieldSchema schema;
  std::vector<std::string> names;
  ModelConfig mc;
  try {
    schema.vocab_sizes = j.at("vocab_sizes").get<std::vector<std::uint32_t>>();
    names = j.at("task_names").get<std::vector<std::string>>();
    mc = model_config_from_json(j.at("model"));
  } catch (const json::exception& e) {
    throw ParseError("model.json in '" + dir.string() + "': " + e.what());
  }
  LoadedModel lm{Model(mc, schema), load_checkpoint(dir / "model.ckpt"), names,
                 fs::absolute(dir).lexically_normal().filename().string()};
  if (lm.label.empty()) lm.label = fs::absolute(dir).parent_path().filename().string();
  // Every parameter the architecture expects must be present with its shape.
  const ParamStore expected = lm.model.init_params(0);
  for (const auto& [name, e] : expected) {
    if (!lm.params.contains(name)) {
      throw ConfigError("checkpoint '" + dir.string() + "' lacks parameter '" + name + "'");
    }
    if (!lm.params.at(name).value.same_shape(e.value)) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " +
                       lm.params.at(name).value.shape_string() + ", expected " +
                       e.value.shape_string());
    }
  }
  return lm;
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log) {
  if (!cfg.data.synthetic && !cfg.data.csv) {
    throw ConfigError("gen-data: config needs data.synthetic (or data.csv)");
  }
  const PreparedData prepared = prepare_data(cfg);
  prepare_out_dir(out, force);
  const auto& s = prepared.splits;
  write_csv(s.train, out / "train.csv");
  write_csv(s.val, out / "val.csv");
  write_csv(s.test, out / "test.csv");
  prepared.remap.save(out / "remap.csv");
  json schema;
  schema["vocab_sizes"] = s.train.schema().vocab_sizes;
  schema["task_names"] = s.train.task_names();
  write_text(out / "schema.json", schema.dump(2) + "\n");

  std::ostringstream m;
  m << "seed=" << cfg.seed << "\n";
  m << "train_size=" << s.train.size() << "\nval_size=" << s.val.size()
    << "\ntest_size=" << s.test.size() << "\n";
  m << "min_count=" << cfg.data.min_count << "\n";
  if (cfg.data.synthetic) {
    const auto& sc = *cfg.data.synthetic;
    const SyntheticData gen = generate_synthetic(sc);
    m << "synthetic_seed=" << sc.seed << "\nrho=" << num(sc.rho)
      << "\nnum_samples=" << sc.num_samples << "\n";
    for (std::size_t t = 0; t < sc.num_tasks(); ++t) {
      m << "bias." << sc.task_names[t] << "=" << num(gen.bias[t]) << "\n";
      m << "positive_ratio." << sc.task_names[t] << "=" << num(gen.dataset.positive_ratio(t))
        << "\n";
    }
    if (sc.num_tasks() >= 2) {
      std::vector<double> p0(gen.probabilities.rows()), p1(gen.probabilities.rows());
      for (std::size_t i = 0; i < p0.size(); ++i) {
        p0[i] = gen.probabilities(i, 0);
        p1[i] = gen.probabilities(i, 1);
      }
      m << "prob_correlation=" << num(pearson(p0, p1)) << "\n";
    }
  } else {
    for (std::size_t t = 0; t < s.train.num_tasks(); ++t) {
      m << "positive_ratio." << s.train.task_names()[t] << "=" << num(s.train.positive_ratio(t))
        << "\n";
    }
  }
  write_text(out / "manifest.txt", m.str());
  write_resolved_config(cfg, out);
  log << "wrote " << s.train.size() << "/" << s.val.size() << "/" << s.test.size()
      << " samples to " << out.string() << "\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log) {
  const DataSplits splits = load_splits(cfg);
  if (cfg.model_num_tasks_given && cfg.model.num_tasks != splits.train.num_tasks()) {
    throw ConfigError("model.num_tasks = " + std::to_string(cfg.model.num_tasks) +
                      " but the dataset has " + std::to_string(splits.train.num_tasks()) +
                      " label columns");
  }
  prepare_out_dir(out, force);
  if (cfg.learning_rates.size() == 1) {
    RunConfig one = cfg;
    one.train.learning_rate = cfg.learning_rates.front();
    train_one(one, splits, out, log);
    return;
  }
  std::vector<RunSummary> runs;
  for (double lr : cfg.learning_rates) {
    RunConfig one = cfg;
    one.train.learning_rate = lr;
    runs.push_back(train_one(one, splits, out / ("lr_" + num(lr)), log));
  }
  const auto best = std::max_element(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
    return a.best_val_auc.value_or(-1.0) < b.best_val_auc.value_or(-1.0);
  });
  const fs::path link = out / "best";
  fs::remove(link);
  fs::create_directory_symlink(best->dir.filename(), link);
  write_text(out / "best.txt", best->dir.filename().string() + "\n");
  std::ostringstream grid;
  grid << "learning_rate,best_epoch,val_avg_auc,selected\n";
  for (const auto& r : runs) {
    grid << num(r.lr) << ',' << r.best_epoch << ',' << num(r.best_val_auc) << ','
         << (&r == &*best ? 1 : 0) << '\n';
  }
  write_text(out / "grid.csv", grid.str());
  write_resolved_config(cfg, out);
  log << "best: " << best->dir.filename().string() << "\n";
}

void cmd_eval(const RunConfig& cfg, const fs::path& checkpoint,
              const std::vector<fs::path>& single_task, const fs::path& out, bool force,
              bool split_only, std::ostream& log) {
  const DataSplits splits = load_splits(cfg);
  const Dataset& test = splits.test;
  auto check_schema = [&](const LoadedModel& lm) {
    if (!(lm.model.schema() == test.schema())) {
      throw ConfigError("checkpoint '" + lm.label + "' was trained on a different schema");
    }
  };

  std::vector<LoadedModel> singles;
  for (const auto& dir : single_task) {
    singles.push_back(load_model_dir(dir));
    check_schema(singles.back());
    if (singles.back().model.config().variant != VariantKind::kSingleTask) {
      throw ConfigError("'" + dir.string() + "' is not a single-task checkpoint");
    }
  }
  auto single_for = [&](std::size_t task) -> const LoadedModel* {
    for (const auto& s : singles) {
      if (s.model.config().single_task == task) return &s;
    }
    return nullptr;
  };

  const bool want_buckets = split_only || cfg.eval.buckets;
  std::optional<BucketSplit> buckets;
  if (want_buckets) {
    const LoadedModel* st_a = single_for(cfg.eval.focus_task);
    const LoadedModel* st_b = single_for(cfg.eval.other_task);
    if (st_a == nullptr || st_b == nullptr) {
      throw ConfigError("bucket split needs single-task checkpoints for tasks " +
                        std::to_string(cfg.eval.focus_task) + " and " +
                        std::to_string(cfg.eval.other_task));
    }
    const Matrix pa = st_a->model.predict(st_a->params, test);
    const Matrix pb = st_b->model.predict(st_b->params, test);
    std::vector<double> fa(test.size()), fb(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      fa[i] = pa(i, cfg.eval.focus_task);
      fb[i] = pb(i, cfg.eval.other_task);
    }
    buckets = subset_split(fa, fb, cfg.eval.lo, cfg.eval.hi, cfg.eval.n_buckets);
  }

  prepare_out_dir(out, force);
  write_resolved_config(cfg, out);
  if (buckets) {
    std::ostringstream b;
    b << "sample_idx,bucket_a,bucket_b,delta,subset\n";
    for (std::size_t i = 0; i < buckets->size(); ++i) {
      b << i << ',' << buckets->bucket_a[i] << ',' << buckets->bucket_b[i] << ','
        << buckets->delta[i] << ',' << to_string(buckets->subset[i]) << '\n';
    }
    write_text(out / "buckets.csv", b.str());
  }
  if (split_only) {
    log << "bucket split: B_Overwhelming=" << buckets->count(Subset::kBOverwhelming)
        << " Comparable=" << buckets->count(Subset::kComparable)
        << " A_Overwhelming=" << buckets->count(Subset::kAOverwhelming) << "\n";
    return;
  }

  const LoadedModel lm = load_model_dir(checkpoint);
  check_schema(lm);
  const auto& tasks = lm.model.arch().active_tasks;
  const Matrix preds = lm.model.predict(lm.params, test);
  const MetricsReport report = evaluate_predictions(preds, test, tasks);
  const auto& names = test.task_names();

  std::optional<double> gain;
  if (!singles.empty()) {
    std::vector<MetricsReport> st_reports;
    for (const auto& s : singles) {
      st_reports.push_back(evaluate_predictions(s.model.predict(s.params, test), test,
                                                s.model.arch().active_tasks));
    }
    gain = mtl_gain(report, st_reports);
  }

  std::ostringstream p;
  p << "sample_idx,task,score,label\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t t : tasks) {
      p << i << ',' << task_label(names, t) << ',' << num(preds(i, t)) << ','
        << int(test.label(i, t)) << '\n';
    }
  }
  write_text(out / "predictions.csv", p.str());

  std::ostringstream m;
  m << "task,metric,subset,value\n";
  for (const auto& tm : report.tasks) {
    m << task_label(names, tm.task) << ",auc,all," << num(tm.auc) << '\n';
    m << task_label(names, tm.task) << ",logloss,all," << num(tm.logloss) << '\n';
  }
  m << "all,average_auc,all," << num(report.average_auc) << '\n';
  if (gain) m << "all,mtl_gain,all," << num(*gain) << '\n';

  log << std::left << std::setw(16) << "task" << std::setw(14) << "AUC" << "Logloss\n";
  for (const auto& tm : report.tasks) {
    log << std::setw(16) << task_label(names, tm.task) << std::setw(14) << num(tm.auc)
        << num(tm.logloss) << "\n";
  }
  log << std::setw(16) << "average" << num(report.average_auc) << "\n";
  if (gain) log << std::setw(16) << "MTL gain" << num(*gain) << "\n";

  if (buckets) {
    const std::size_t focus = cfg.eval.focus_task;
    if (std::find(tasks.begin(), tasks.end(), focus) == tasks.end()) {
      throw ConfigError("checkpoint does not model the focus task " + std::to_string(focus));
    }
    std::vector<double> fs_scores(test.size());
    std::vector<std::uint8_t> fs_labels(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      fs_scores[i] = preds(i, focus);
      fs_labels[i] = test.label(i, focus);
    }
    const auto per_subset = evaluate_subsets(fs_scores, fs_labels, *buckets);
    std::ostringstream st;
    st << "subset,delta_range,count,auc\n";
    const std::string lo = std::to_string(cfg.eval.lo);
    const std::string hi = std::to_string(cfg.eval.hi);
    const std::string nb = std::to_string(cfg.eval.n_buckets - 1);
    log << "\n" << std::setw(16) << "subset" << std::setw(12) << "delta" << std::setw(10)
        << "count" << "AUC(" << task_label(names, focus) << ")\n";
    for (const auto& sa : per_subset) {
      const std::string range = sa.subset == Subset::kBOverwhelming ? "[-" + nb + "," + lo + "]"
                                : sa.subset == Subset::kComparable  ? "(" + lo + "," + hi + "]"
                                                                    : "(" + hi + "," + nb + "]";
      st << to_string(sa.subset) << ',' << range << ',' << sa.count << ',' << num(sa.auc) << '\n';
      m << task_label(names, focus) << ",auc," << to_string(sa.subset) << ',' << num(sa.auc)
        << '\n';
      m << task_label(names, focus) << ",count," << to_string(sa.subset) << ',' << sa.count
        << '\n';
      log << std::setw(16) << to_string(sa.subset) << std::setw(12) << range << std::setw(10)
          << sa.count << num(sa.auc) << "\n";
    }
    write_text(out / "subsets.csv", st.str());
  }
  write_text(out / "metrics.csv", m.str());
}

void cmd_analyze(const RunConfig& cfg, const std::vector<fs::path>& checkpoints,
                 const fs::path& out, bool force, std::ostream& log) {
  const DataSplits splits = load_splits(cfg);
  const Dataset& test = splits.test;
  std::vector<LoadedModel> models;
  for (const auto& dir : checkpoints) {
    models.push_back(load_model_dir(dir));
    if (!(models.back().model.schema() == test.schema())) {
      throw ConfigError("checkpoint '" + dir.string() + "' was trained on a different schema");
    }
    for (const auto& table : cfg.analysis.tables) {
      if (!models.back().params.contains(table)) {
        throw ConfigError("checkpoint '" + dir.string() + "' has no table '" + table + "'");
      }
    }
  }
  auto single_for = [&](std::size_t task) -> const LoadedModel* {
    for (const auto& m : models) {
      if (m.model.config().variant == VariantKind::kSingleTask &&
          m.model.config().single_task == task) {
        return &m;
      }
    }
    return nullptr;
  };
  const LoadedModel* st_a = single_for(cfg.eval.focus_task);
  const LoadedModel* st_b = single_for(cfg.eval.other_task);
  if (st_a == nullptr || st_b == nullptr) {
    throw ConfigError("analyze needs single-task checkpoints for tasks " +
                      std::to_string(cfg.eval.focus_task) + " and " +
                      std::to_string(cfg.eval.other_task));
  }
  const PairSet candidates =
      candidate_pairs(test, cfg.analysis.user_field, cfg.analysis.item_field);
  const ContradictorySelection sel =
      select_contradictory(candidates, st_a->params.at(kSharedTable).value,
                           st_b->params.at(kSharedTable).value, cfg.analysis.top_frac,
                           cfg.analysis.bottom_frac);

  prepare_out_dir(out, force);
  write_resolved_config(cfg, out);
  std::ostringstream man;
  man << "num_candidates=" << sel.num_candidates << "\nnum_selected=" << sel.selected.size()
      << "\nselected_fraction=" << num(sel.fraction) << "\nprovenance=" << sel.selected.provenance
      << "\n";
  std::map<std::string, int> seen;
  for (const auto& m : models) {
    std::string label = m.label;
    if (seen[label]++ > 0) label += "_" + std::to_string(seen[m.label] - 1);
    for (const auto& table : m.model.arch().tables) {
      const Matrix& values = m.params.at(table).value;
      const auto rows = distance_histogram(sel.selected, candidates, values, cfg.analysis.bins);
      const std::string file = "hist_" + label + "_" + table + ".csv";
      write_text(out / file, histogram_csv(label + "/" + table, rows));
      if (!sel.selected.pairs.empty()) {
        man << "mean_distance_S." << label << "." << table << "="
            << num(mean_distance(sel.selected, values)) << "\n";
      }
      man << "mean_distance_all." << label << "." << table << "="
          << num(mean_distance(candidates, values)) << "\n";
      log << "wrote " << file << "\n";
    }
  }
  write_text(out / "manifest.txt", man.str());
  log << "selected " << sel.selected.size() << " of " << sel.num_candidates << " pairs ("
      << num(sel.fraction) << ")\n";
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task recommender engine with shared and task-specific embeddings"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool force = false;
  };
  Common common;
  std::vector<std::string> checkpoints;
  std::vector<std::string> single_task;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run configuration (JSON)")->required();
    sub->add_option("--out", common.out, "Output directory (defaults to out_dir)");
    sub->add_option("--seed", common.seed, "Override the master seed");
    sub->add_flag("--force", common.force, "Overwrite an existing output directory");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Generate and split a synthetic dataset");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "Train a model (grid over learning rates)");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoints, "Model directory")->required();
  eval->add_option("--single-task", single_task, "Single-task model directories");
  CLI::App* bucket = app.add_subcommand("bucket-split", "Bucket the test split into subsets");
  add_common(bucket);
  bucket->add_option("--single-task", single_task, "Single-task model directories")->required();
  CLI::App* analyze = app.add_subcommand("analyze", "Contradictory user-item pair analysis");
  add_common(analyze);
  analyze->add_option("--checkpoint", checkpoints, "Model directories")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  try {
    RunConfig cfg = load_run_config(common.config);
    if (common.seed) cfg.set_seed(*common.seed);
    const fs::path out_dir = common.out.empty() ? fs::path(cfg.out_dir) : fs::path(common.out);
    std::vector<fs::path> ckpts(checkpoints.begin(), checkpoints.end());
    std::vector<fs::path> singles(single_task.begin(), single_task.end());
    if (gen->parsed()) {
      cmd_gen_data(cfg, out_dir, common.force, out);
    } else if (train->parsed()) {
      cmd_train(cfg, out_dir, common.force, out);
    } else if (eval->parsed()) {
      if (ckpts.size() != 1) throw ConfigError("eval takes exactly one --checkpoint");
      cmd_eval(cfg, ckpts.front(), singles, out_dir, common.force, false, out);
    } else if (bucket->parsed()) {
      cmd_eval(cfg, {}, singles, out_dir, common.force, true, out);
    } else if (analyze->parsed()) {
      cmd_analyze(cfg, ckpts, out_dir, common.force, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace stem
