// vsamil: convert, train, evaluate, tune, milcheck and diagnose from the shell.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
// failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vsamil/vsamil.hpp"

namespace fs = std::filesystem;
using namespace vsamil;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Run seed (overrides the config)");
  cmd->add_option("--config", c.config, "Flat JSON config with dotted keys");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
}

Json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string("cannot open ") + what + " " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(std::string(what) + " " + path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

RunConfig resolve_config(const Common& c, std::optional<RunConfig> base = std::nullopt) {
  RunConfig cfg = base ? *base : RunConfig{};
  if (!c.config.empty()) {
    const Json j = read_json_file(c.config, "config");
    try {
      cfg = RunConfig::from_json(j, cfg);
    } catch (const ConfigError& e) {
      throw ConfigError(c.config + ": " + e.what());
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

MilDataset load_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset given (use --data or the 'dataset' config key)");
  if (!fs::exists(path)) throw DataError("dataset not found: " + path);
  return load_jsonl(path);
}

/// Uses the split stored in the file when present, otherwise the seeded one.
MilDataset with_split(MilDataset ds, const RunConfig& cfg) {
  if (!ds.split.empty()) return ds;
  return split(std::move(ds), cfg.split, RunSeeds::of(cfg).split);
}

std::string metrics_csv(const SplitMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "split,accuracy,auroc,tp,fp,tn,fn,n_bags\n";
  auto row = [&](const char* name, const MetricsReport& r) {
    os << name << ',' << r.accuracy << ',' << r.auroc << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ','
       << r.n << '\n';
  };
  row("train", m.train);
  row("val", m.val);
  row("test", m.test);
  return os.str();
}

void print_metrics(const std::string& split, const MetricsReport& m) {
  std::cout << std::left << std::setw(6) << split << std::right << std::fixed << std::setprecision(4)
            << "  accuracy " << m.accuracy << "  auroc " << m.auroc << "  (tp " << m.tp << ", fp " << m.fp << ", tn "
            << m.tn << ", fn " << m.fn << ", n " << m.n << ")\n";
}

/// Trains, then writes model.json, manifest.json, metrics.json and metrics.csv.
PipelineRun train_and_save(const MilDataset& ds, const RunConfig& cfg) {
  const PipelineRun run = train_pipeline(ds, cfg);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  const fs::path model = out / "model.json";
  run.model.save(model);
  write_json(out / "manifest.json", make_manifest(cfg, run, model.string()));
  write_json(out / "metrics.json", run.metrics.to_json());
  write_text(out / "metrics.csv", metrics_csv(run.metrics));
  return run;
}

// ---------------------------------------------------------------------------

struct ConvertArgs {
  std::string input, output, schema = "csv", name;
  std::size_t bag_column = 0, label_column = 1;
};

int run_convert(const ConvertArgs& a, const Common& c) {
  CsvSchema schema;
  if (a.schema == "csv") schema.format = CsvFormat::csv;
  else if (a.schema == "svmlight") schema.format = CsvFormat::svmlight;
  else throw ConfigError("unknown --schema '" + a.schema + "' (csv or svmlight)");
  schema.bag_column = a.bag_column;
  schema.label_column = a.label_column;
  MilDataset ds = convert_csv(a.input, schema);
  if (!a.name.empty()) ds.name = a.name;
  if (c.seed) {
    RunConfig cfg = resolve_config(c);
    ds = split(std::move(ds), cfg.split, cfg.seed);
  }
  std::string output = a.output;
  if (output.empty()) output = (fs::path(c.out.empty() ? "." : c.out) / (ds.name + ".jsonl")).string();
  if (fs::path(output).has_parent_path()) fs::create_directories(fs::path(output).parent_path());
  save_jsonl(ds, output);
  const Json summary{{"name", ds.name},
                     {"bags", ds.bags.size()},
                     {"positive", ds.count(BagLabel::positive)},
                     {"negative", ds.count(BagLabel::negative)},
                     {"instances", ds.instance_count()},
                     {"feature_dim", ds.feature_dim},
                     {"output", output}};
  std::cout << ds.name << ": " << ds.bags.size() << " bags (" << ds.count(BagLabel::positive) << " positive, "
            << ds.count(BagLabel::negative) << " negative), " << ds.instance_count() << " instances, "
            << ds.feature_dim << " features -> " << output << "\n"
            << summary.dump() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, manifest;
};

int run_train(const TrainArgs& a, const Common& c) {
  std::optional<RunConfig> base;
  if (!a.manifest.empty()) base = config_from_manifest(read_json_file(a.manifest, "manifest"));
  RunConfig cfg = resolve_config(c, base);
  if (!a.data.empty()) cfg.dataset = a.data;
  const MilDataset ds = with_split(load_dataset(cfg.dataset), cfg);
  const PipelineRun run = train_and_save(ds, cfg);
  std::cout << "trained " << ds.name << " (B=" << cfg.blocks << ", L=" << cfg.layers << ", k=" << cfg.clusters
            << ", K=" << cfg.concepts << ") -> " << cfg.out << "\n";
  print_metrics("train", run.metrics.train);
  print_metrics("val", run.metrics.val);
  print_metrics("test", run.metrics.test);
  std::cout << run.metrics.to_json().dump() << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string model, data, split = "test";
};

int run_evaluate(const EvaluateArgs& a, const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const PipelineModel model = PipelineModel::load(a.model);
  const std::string data = a.data.empty() ? cfg.dataset : a.data;
  const MilDataset ds = with_split(load_dataset(data), cfg);
  if (ds.feature_dim != model.autoencoder.input_dim()) {
    throw DataError("dataset has " + std::to_string(ds.feature_dim) + " features, model expects " +
                    std::to_string(model.autoencoder.input_dim()));
  }
  const MilDataset part = a.split == "all" ? ds : ds.subset(split_from_string(a.split));
  if (part.bags.empty()) throw DataError("split '" + a.split + "' has no bags");
  const MetricsReport m = evaluate(model.scorer(), part);
  print_metrics(a.split, m);
  Json j = m.to_json();
  j["split"] = a.split;
  std::cout << j.dump() << "\n";
  if (!c.out.empty()) {
    write_json(fs::path(c.out) / ("metrics_" + a.split + ".json"), j);
    std::ostringstream csv;
    csv.precision(17);
    csv << "split,accuracy,auroc,tp,fp,tn,fn,n_bags\n"
        << a.split << ',' << m.accuracy << ',' << m.auroc << ',' << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn
        << ',' << m.n << '\n';
    write_text(fs::path(c.out) / ("metrics_" + a.split + ".csv"), csv.str());
  }
  return kOk;
}

struct TuneArgs {
  std::string data;
  std::size_t trials = 50, jobs = 1;
};

int run_tune(const TuneArgs& a, const Common& c) {
  RunConfig cfg = resolve_config(c);
  if (!a.data.empty()) cfg.dataset = a.data;
  const MilDataset ds = with_split(load_dataset(cfg.dataset), cfg);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  TuneOptions opts;
  opts.trials = a.trials;
  opts.jobs = a.jobs;
  opts.log_path = out / "trials.jsonl";
  opts.on_trial = [](std::size_t done, std::size_t total) {
    std::cerr << "\rtrial " << done << "/" << total << std::flush;
  };
  const TuneResult r = tune(ds, cfg, opts);
  std::cerr << "\n";
  if (r.resumed) std::cout << "resumed " << r.resumed << " trials from " << opts.log_path->string() << "\n";

  std::ostringstream csv;
  csv.precision(17);
  csv << "trial,blocks,layers,clusters,concepts,clf_lr,val_auroc,val_accuracy,test_auroc,test_accuracy,error\n";
  for (const auto& t : r.trials) {
    csv << t.index << ',' << t.config.blocks << ',' << t.config.layers << ',' << t.config.clusters << ','
        << t.config.concepts << ',' << t.config.clf_lr << ',' << t.metrics.val.auroc << ',' << t.metrics.val.accuracy
        << ',' << t.metrics.test.auroc << ',' << t.metrics.test.accuracy << ',' << '"' << t.error << '"' << '\n';
  }
  write_text(out / "trials.csv", csv.str());

  const TrialRecord& best = r.best_trial();
  RunConfig best_cfg = best.config;
  best_cfg.out = (out / "best").string();
  write_json(out / "best_config.json", best_cfg.to_json());
  const PipelineRun run = train_and_save(ds, best_cfg);
  std::cout << "best trial " << best.index << ": B=" << best_cfg.blocks << " L=" << best_cfg.layers
            << " k=" << best_cfg.clusters << " K=" << best_cfg.concepts << " clf_lr=" << best_cfg.clf_lr << "\n";
  print_metrics("val", run.metrics.val);
  print_metrics("test", run.metrics.test);
  std::cout << Json{{"best_trial", best.index}, {"config", best_cfg.to_json()}, {"metrics", run.metrics.to_json()}}.dump()
            << "\n";
  return kOk;
}

struct MilcheckArgs {
  std::size_t trials = 20;
  bool controls = false;
};

int run_milcheck(const MilcheckArgs& a, const Common& c) {
  const RunConfig cfg = resolve_config(c);
  std::vector<PoisonSpec> specs;
  for (int v = 1; v <= 3; ++v) {
    PoisonSpec p;
    p.variant = v;
    p.seed = derive_seed(cfg.seed, 200 + v);
    specs.push_back(p);
  }
  TuneOptions opts;
  opts.trials = a.trials;
  opts.space.blocks_min = opts.space.blocks_max = cfg.blocks;
  opts.space.layers_min = opts.space.layers_max = cfg.layers;
  const auto rows = milcheck(tuned_pipeline_factory(cfg, opts), specs);
  Json report{{"pipeline", milcheck_json(rows)}};
  std::string csv = milcheck_csv(rows);
  std::cout << csv;
  if (a.controls) {
    const auto valid = milcheck([&](const MilDataset&) { return controls::witness_oracle(specs[0]); }, specs);
    const auto invalid = milcheck([&](const MilDataset&) { return controls::anti_witness_oracle(specs[0]); }, specs);
    report["valid_oracle"] = milcheck_json(valid);
    report["invalid_oracle"] = milcheck_json(invalid);
    std::cout << "valid oracle\n" << milcheck_csv(valid) << "invalid oracle\n" << milcheck_csv(invalid);
  }
  bool pass = true;
  for (const auto& r : rows) pass = pass && r.pass;
  std::cout << (pass ? "PASS" : "FAIL") << ": pipeline " << (pass ? "passes" : "fails") << " the poison variants\n";
  const fs::path out(cfg.out);
  write_text(out / "milcheck.csv", csv);
  write_json(out / "milcheck.json", report);
  return kOk;
}

struct DiagnoseArgs {
  std::string data;
  std::size_t k_min = 2, k_max = 10;
};

int run_diagnose(const DiagnoseArgs& a, const Common& c) {
  RunConfig cfg = resolve_config(c);
  if (!a.data.empty()) cfg.dataset = a.data;
  const MilDataset ds = with_split(load_dataset(cfg.dataset), cfg);
  const EncodedStage enc = fit_encoder_stage(ds, cfg);
  const auto train = all_instances(enc.encoded.subset(Split::train));
  const auto diag = cluster_diagnostics(train, a.k_min, std::min(a.k_max, train.size() - 1), RunSeeds::of(cfg).kmeans);

  std::ostringstream csv;
  csv.precision(17);
  csv << "k,inertia,silhouette\n";
  for (const auto& d : diag) csv << d.k << ',' << d.inertia << ',' << d.silhouette << '\n';
  const DistributionRow row{ds.name, distribution_report(train),
                            distribution_report(all_instances(enc.encoded.subset(Split::test)))};
  const std::string table = format_distribution_table(std::span<const DistributionRow>(&row, 1));
  std::cout << csv.str() << '\n' << table;

  Json loss = Json::array();
  for (const auto& e : enc.report.epochs) {
    loss.push_back(Json{{"total", e.total},
                        {"reconstruction", e.reconstruction},
                        {"property1", e.property1},
                        {"property2", e.property2},
                        {"property3", e.property3}});
  }
  Json clusters = Json::array();
  for (const auto& d : diag) clusters.push_back({{"k", d.k}, {"inertia", d.inertia}, {"silhouette", d.silhouette}});
  const Json j{{"clusters", clusters},
               {"distribution", {{"train", to_json(row.train)}, {"test", to_json(row.test)}}},
               {"autoencoder_loss", loss}};
  const fs::path out(cfg.out);
  write_text(out / "diagnostics.csv", csv.str());
  write_text(out / "distribution.txt", table);
  write_json(out / "diagnostics.json", j);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VSA-MIL: multiple instance learning with HLB hypervectors"};
  app.require_subcommand(1);

  Common common;
  ConvertArgs convert_args;
  TrainArgs train_args;
  EvaluateArgs eval_args;
  TuneArgs tune_args;
  MilcheckArgs milcheck_args;
  DiagnoseArgs diagnose_args;

  auto* convert = app.add_subcommand("convert", "CSV or svmlight-style MIL table to JSONL");
  add_common(convert, common);
  convert->add_option("--input", convert_args.input, "Input table")->required()->check(CLI::ExistingFile);
  convert->add_option("--output", convert_args.output, "Output JSONL (default <out>/<name>.jsonl)");
  convert->add_option("--schema", convert_args.schema, "csv or svmlight");
  convert->add_option("--bag-column", convert_args.bag_column, "Zero-based bag id column (csv)");
  convert->add_option("--label-column", convert_args.label_column, "Zero-based label column (csv)");
  convert->add_option("--name", convert_args.name, "Dataset name (default: file stem)");

  auto* train = app.add_subcommand("train", "Train the full pipeline and write model + manifest");
  add_common(train, common);
  train->add_option("--data", train_args.data, "JSONL dataset (overrides the config)");
  train->add_option("--manifest", train_args.manifest, "Re-run the configuration stored in a manifest");

  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset split with a saved model");
  add_common(evaluate, common);
  evaluate->add_option("--model", eval_args.model, "Model JSON")->required();
  evaluate->add_option("--data", eval_args.data, "JSONL dataset");
  evaluate->add_option("--split", eval_args.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* tune_cmd = app.add_subcommand("tune", "Random search over B, L, k, K and classifier lr");
  add_common(tune_cmd, common);
  tune_cmd->add_option("--data", tune_args.data, "JSONL dataset (overrides the config)");
  tune_cmd->add_option("--trials", tune_args.trials, "Number of trials")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--jobs", tune_args.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* milcheck_cmd = app.add_subcommand("milcheck", "MIL validity tests on poisoned synthetic data");
  add_common(milcheck_cmd, common);
  milcheck_cmd->add_option("--trials", milcheck_args.trials, "Tuner trials per variant")->check(CLI::PositiveNumber);
  milcheck_cmd->add_flag("--controls", milcheck_args.controls, "Also run the valid and invalid oracles");

  auto* diagnose = app.add_subcommand("diagnose", "Elbow/silhouette table and latent distribution");
  add_common(diagnose, common);
  diagnose->add_option("--data", diagnose_args.data, "JSONL dataset (overrides the config)");
  diagnose->add_option("--kmin", diagnose_args.k_min, "Smallest k");
  diagnose->add_option("--kmax", diagnose_args.k_max, "Largest k");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*convert) return run_convert(convert_args, common);
    if (*train) return run_train(train_args, common);
    if (*evaluate) return run_evaluate(eval_args, common);
    if (*tune_cmd) return run_tune(tune_args, common);
    if (*milcheck_cmd) return run_milcheck(milcheck_args, common);
    if (*diagnose) return run_diagnose(diagnose_args, common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
