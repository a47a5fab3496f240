// SPDX-License-Identifier: Apache-2.0
#include "normalign/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "normalign/checkpoint.hpp"
#include "normalign/config.hpp"
#include "normalign/errors.hpp"
#include "normalign/gradient_suite.hpp"
#include "normalign/trainer.hpp"

namespace normalign {

namespace fs = std::filesystem;

namespace {

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::size_t thread_cap() {
  const char* v = std::getenv("NORM_ALIGN_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError("NORM_ALIGN_THREADS", "expected a positive integer");
  return n;
}

struct GenDataArgs {
  std::string spec, out;
};
struct TrainArgs {
  std::string config, data, out, mode;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  bool has_epochs = false, has_seed = false;
};
struct EvalArgs {
  std::string checkpoint, data, split = "target_test";
};
struct GradcheckArgs {
  double tol = 1e-4, step = 1e-5;
  std::uint64_t seed = 0;
};
struct PresetArgs {
  std::string name, out, spec, config;
  std::size_t seeds = 3;
  std::size_t epochs = 0;
  bool has_epochs = false;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  DatasetSpec spec;
  if (!a.spec.empty()) spec = dataset_spec_from_json(read_json_file(a.spec));
  spec.validate();
  const auto ds = generate(spec);
  save(ds, a.out);
  err << "wrote " << ds.size() << " clips to " << a.out << "\n";
  std::vector<std::string> splits;
  for (std::size_t k = 0; k < spec.num_source_domains; ++k) splits.push_back("source_" + std::to_string(k));
  splits.push_back("target_train");
  splits.push_back("target_test");
  out << "domain";
  for (const auto& m : spec.modalities) out << "\t" << m.name;
  out << "\n";
  char buf[64];
  for (const auto& s : splits) {
    out << s;
    for (double v : input_mean_norms(ds, s)) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      out << buf;
    }
    out << "\n";
  }
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  if (!a.config.empty()) config = train_config_from_json(read_json_file(a.config));
  if (!a.mode.empty()) {
    try {
      config.mode = train_mode_from_string(a.mode);
    } catch (const ContractError& e) {
      throw ConfigError("--mode", e.what());
    }
  }
  if (a.has_epochs) config.epochs = a.epochs;
  if (a.has_seed) config.seed = a.seed;
  config.validate();
  const auto ds = load(a.data);
  const auto start = std::chrono::steady_clock::now();
  err << "training " << to_string(config.mode) << " for " << config.epochs << " epochs on " << ds.size()
      << " clips\n";
  const auto result = train(config, ds);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "report.jsonl", report_jsonl(result.report));
  write_text(fs::path(a.out) / "summary.json", report_summary(result.report).dump(2) + "\n");
  save_checkpoint(result.streams, fs::path(a.out) / "model.ckpt");
  const auto& last = result.report.epochs.back();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  err << "done in " << secs << " s; " << config.eval_split << " verb top-1 " << last.metrics.verb_top1
      << ", noun top-1 " << last.metrics.noun_top1 << ", action top-1 " << last.metrics.action_top1 << "\n";
  (void)out;
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const auto streams = load_checkpoint(a.checkpoint);
  const auto ds = load(a.data);
  const auto& spec = ds.spec();
  for (const auto& s : streams) {
    const auto& c = s.config();
    if (c.modalities != spec.modalities || c.frames != spec.frames || c.verb_classes != spec.verb_classes ||
        c.noun_classes != spec.noun_classes)
      throw ConfigError("--checkpoint", "model shapes do not match the dataset");
  }
  if (a.split == "target_train") throw ConfigError("--split", "target_train has no labels");
  EvalMetrics m;
  try {
    m = evaluate(streams, ds, a.split);
  } catch (const ContractError& e) {
    throw ConfigError("--split", e.what());
  }
  out << to_json(m).dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  const auto rows = run_gradient_suite(a.seed, a.step, a.tol);
  bool ok = true;
  char buf[256];
  out << "check\tmax_rel_err\tstatus\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.3e\t%s\n", r.name.c_str(), r.report.max_rel_error,
                  r.report.passed ? "pass" : "FAIL");
    out << buf;
    ok = ok && r.report.passed;
  }
  if (!ok) err << "gradient check failed at tol " << a.tol << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_preset(const PresetArgs& a, std::ostream& out, std::ostream& err) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), a.name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("--name", "unknown preset '" + a.name + "'; valid: " + list);
  }
  if (a.seeds < 1) throw ConfigError("--seeds", "must be >= 1");
  DatasetSpec spec = a.spec.empty() ? default_preset_spec() : dataset_spec_from_json(read_json_file(a.spec));
  TrainConfig base = a.config.empty() ? default_preset_config() : train_config_from_json(read_json_file(a.config));
  if (a.has_epochs) base.epochs = a.epochs;
  std::vector<std::uint64_t> seeds(a.seeds);
  std::iota(seeds.begin(), seeds.end(), 0);
  const std::size_t threads = thread_cap();
  err << "running " << a.name << " with " << seeds.size() << " seeds on " << threads << " thread(s)\n";
  const auto result = run_preset(a.name, spec, base, seeds, threads);
  const std::string csv = preset_csv(result);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / (a.name + ".csv"), csv);
    write_text(fs::path(a.out) / (a.name + ".json"), to_json(result).dump(2) + "\n");
  }
  out << csv;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Norm-alignment domain adaptation toolkit"};
  app.require_subcommand(1);
  app.footer("\n" + config_reference() +
             "\nExit codes: 0 success, 1 check failure, 2 input error, 3 numerical abort, 4 contract violation.\n"
             "NORM_ALIGN_THREADS caps preset parallelism (default 1).");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--spec", gen.spec, "Dataset spec JSON (defaults if omitted)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train streams and write report and checkpoint");
  train_cmd->add_option("--config", tr.config, "Training config JSON (defaults if omitted)");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--mode", tr.mode, "source_only | dg_rna | uda_full | custom");
  auto* epochs_opt = train_cmd->add_option("--epochs", tr.epochs, "Override the epoch count");
  auto* seed_opt = train_cmd->add_option("--seed", tr.seed, "Override the seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; metrics JSON on stdout");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "Labeled split")->capture_default_str();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss and a micro model");
  gc_cmd->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  gc_cmd->add_option("--step", gc.step, "Central difference step")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "Input seed")->capture_default_str();

  PresetArgs pr;
  auto* preset_cmd = app.add_subcommand("preset", "Run a comparison preset; CSV on stdout");
  preset_cmd->add_option("--name", pr.name, "table2-left | table2-right")->required();
  preset_cmd->add_option("--seeds", pr.seeds, "Number of seeds (0..n-1)")->capture_default_str();
  preset_cmd->add_option("--out", pr.out, "Directory for <name>.csv and <name>.json");
  preset_cmd->add_option("--spec", pr.spec, "Dataset spec JSON (preset default if omitted)");
  preset_cmd->add_option("--config", pr.config, "Base training config JSON (preset default if omitted)");
  auto* preset_epochs = preset_cmd->add_option("--epochs", pr.epochs, "Override the epoch count");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  tr.has_epochs = epochs_opt->count() > 0;
  tr.has_seed = seed_opt->count() > 0;
  pr.has_epochs = preset_epochs->count() > 0;

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out, err);
    if (train_cmd->parsed()) return cmd_train(tr, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, out, err);
    if (preset_cmd->parsed()) return cmd_preset(pr, out, err);
  } catch (const ConfigError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const NumericalAbort& e) {
    err << "numerical abort in term '" << e.term() << "': " << e.what() << "\n";
    return kExitNumericalAbort;
  } catch (const LabelHygieneViolation& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContractViolation;
  } catch (const ContractError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContractViolation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitInputError;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, out, err);
}

}  // namespace normalign
