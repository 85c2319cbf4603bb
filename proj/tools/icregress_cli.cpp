// Command-line front end: synthetic corpus generation, base training,
// adaptation, evaluation, and the config-driven experiment kinds.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "icregress/icregress.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

struct ExperimentCliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_override;
  bool resume = false;
};

void add_experiment_options(CLI::App* cmd, ExperimentCliOptions& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config JSON")->required();
  cmd->add_option("--seed", opts.seed, "run a single seed instead of the config's list");
  cmd->add_option("--out", opts.out_override, "override the config's output directory");
  cmd->add_flag("--resume", opts.resume, "reuse persisted checkpoints when present");
}

int run_experiment_command(const ExperimentCliOptions& opts, icregress::ExperimentKind kind) {
  icregress::ExperimentConfig config =
      icregress::experiment_config_from_json(read_json_file(opts.config_path));
  if (config.kind != kind &&
      !(kind == icregress::ExperimentKind::kKSweep &&
        config.kind == icregress::ExperimentKind::kTraitAdapt)) {
    throw std::runtime_error(std::string("config kind '") + icregress::to_string(config.kind) +
                             "' does not match this subcommand");
  }
  if (opts.seed) config.seeds = {*opts.seed};
  if (!opts.out_override.empty()) config.output_dir = opts.out_override;
  if (opts.resume) config.resume = true;
  const icregress::ExperimentReport report = icregress::run_experiment(config);
  json out;
  out["output_dir"] = config.output_dir;
  out["report"] = config.output_dir + "/report.json";
  out["cells"] = report.cells.size();
  out["plots"] = report.plot_csv_paths;
  std::cout << out.dump(2) << "\n";
  return 0;
}

icregress::TrainConfig train_config_from_flags(int epochs, int batch_size, double lr,
                                               double momentum, std::uint64_t seed) {
  icregress::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.learning_rate = lr;
  cfg.momentum = momentum;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IcRegress: incremental-learning regression framework for multimodal "
               "driver object referencing"};
  app.require_subcommand(1);

  // generate
  std::string gen_config;
  std::string gen_out = "dataset";
  bool gen_split = false;
  bool gen_csv = false;
  double gen_val_fraction = 0.10, gen_test_fraction = 0.10;
  bool gen_balance = false;
  std::optional<std::uint64_t> gen_seed;
  auto* generate = app.add_subcommand("generate", "synthesize a participant population");
  generate->add_option("--config", gen_config, "population spec JSON (optional)");
  generate->add_option("--out", gen_out, "output directory");
  generate->add_option("--seed", gen_seed, "override the population seed");
  generate->add_flag("--split", gen_split, "also write train/validation/test subsets");
  generate->add_option("--val-fraction", gen_val_fraction, "validation participant fraction");
  generate->add_option("--test-fraction", gen_test_fraction, "test participant fraction");
  generate->add_flag("--balance-traits", gen_balance, "balance test split across experience");
  generate->add_flag("--csv", gen_csv, "also export the flat feature CSV");

  // train-base
  std::string tb_data, tb_out = "model";
  double tb_k = 0.125;
  int tb_epochs = 100, tb_batch = 32;
  double tb_lr = 1e-3, tb_momentum = 0.9, tb_dropout = 0.3;
  std::uint64_t tb_seed = 0;
  auto* train_base_cmd =
      app.add_subcommand("train-base", "train the base model and select exemplars");
  train_base_cmd->add_option("--data", tb_data, "dataset directory")->required();
  train_base_cmd->add_option("--out", tb_out, "output directory");
  train_base_cmd->add_option("--k", tb_k, "memory size: fraction of BL (<1) or count (>=1)");
  train_base_cmd->add_option("--epochs", tb_epochs, "training epochs");
  train_base_cmd->add_option("--batch-size", tb_batch, "mini-batch size");
  train_base_cmd->add_option("--learning-rate", tb_lr, "SGD learning rate");
  train_base_cmd->add_option("--momentum", tb_momentum, "SGD momentum");
  train_base_cmd->add_option("--dropout", tb_dropout, "dropout probability");
  train_base_cmd->add_option("--seed", tb_seed, "training seed");

  // adapt
  std::string ad_base, ad_exemplars, ad_data, ad_out = "adapted.icrg";
  int ad_epochs = 100, ad_batch = 32;
  double ad_lr = 1e-3, ad_momentum = 0.9;
  std::uint64_t ad_seed = 0;
  bool ad_scratch = false;
  auto* adapt_cmd = app.add_subcommand("adapt", "adapt a base model on a new data stream");
  adapt_cmd->add_option("--base", ad_base, "base checkpoint (.icrg)")->required();
  adapt_cmd->add_option("--exemplars", ad_exemplars, "exemplar JSONL (omit for none)");
  adapt_cmd->add_option("--data", ad_data, "new-data dataset directory")->required();
  adapt_cmd->add_option("--out", ad_out, "adapted checkpoint path");
  adapt_cmd->add_option("--epochs", ad_epochs, "training epochs");
  adapt_cmd->add_option("--batch-size", ad_batch, "mini-batch size");
  adapt_cmd->add_option("--learning-rate", ad_lr, "SGD learning rate");
  adapt_cmd->add_option("--momentum", ad_momentum, "SGD momentum");
  adapt_cmd->add_option("--seed", ad_seed, "training seed");
  adapt_cmd->add_flag("--scratch", ad_scratch,
                      "retrain from scratch on exemplars + stream instead of fine-tuning");

  // evaluate
  std::string ev_model, ev_data, ev_out, ev_csv;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  evaluate_cmd->add_option("--model", ev_model, "checkpoint (.icrg)")->required();
  evaluate_cmd->add_option("--data", ev_data, "dataset directory")->required();
  evaluate_cmd->add_option("--out", ev_out, "write the result JSON here (stdout otherwise)");
  evaluate_cmd->add_option("--per-sample", ev_csv, "also write a per-sample CSV");

  // experiment kinds
  ExperimentCliOptions ablate_opts, sweep_opts, person_opts, forget_opts;
  add_experiment_options(app.add_subcommand("ablate", "modality ablation study"), ablate_opts);
  add_experiment_options(
      app.add_subcommand("sweep-k", "memory-size sweep against baselines (k_sweep/trait_adapt)"),
      sweep_opts);
  add_experiment_options(app.add_subcommand("personalize", "per-driver personalization study"),
                         person_opts);
  add_experiment_options(app.add_subcommand("forgetting", "two-population drift diagnostics"),
                         forget_opts);

  // emit-plots
  std::string ep_report, ep_out = ".";
  auto* emit_cmd = app.add_subcommand("emit-plots", "re-emit plot CSVs from a saved report");
  emit_cmd->add_option("--report", ep_report, "report.json path")->required();
  emit_cmd->add_option("--out", ep_out, "directory to write plots/ into");

  std::string active = "";
  try {
    app.parse(argc, argv);
    if (generate->parsed()) {
      active = "generate";
      icregress::PopulationSpec spec;
      if (!gen_config.empty()) spec = icregress::population_from_json(read_json_file(gen_config));
      if (gen_seed) spec.seed = *gen_seed;
      const icregress::Dataset dataset = icregress::generate_population(spec);
      fs::create_directories(gen_out);
      icregress::save_dataset(dataset, icregress::DatasetPaths::in_dir(gen_out));
      if (gen_csv) icregress::export_features_csv(dataset, fs::path(gen_out) / "features.csv");
      json out = {{"samples", dataset.samples.size()},
                  {"participants", dataset.manifest.size()},
                  {"out", gen_out}};
      if (gen_split) {
        const icregress::DatasetSplit split = icregress::split_dataset(
            dataset.samples, gen_val_fraction, gen_test_fraction, gen_balance,
            icregress::mix_seed(spec.seed, "split"));
        const auto save_part = [&](const char* name,
                                   const std::vector<icregress::ReferencingSample>& samples) {
          icregress::Dataset part;
          part.samples = samples;
          for (const auto& s : samples) part.manifest[s.participant_id] = dataset.manifest.at(s.participant_id);
          const fs::path dir = fs::path(gen_out) / name;
          fs::create_directories(dir);
          icregress::save_dataset(part, icregress::DatasetPaths::in_dir(dir));
          out[name] = part.samples.size();
        };
        save_part("train", split.train);
        save_part("validation", split.validation);
        save_part("test", split.test);
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (train_base_cmd->parsed()) {
      active = "train-base";
      const icregress::Dataset dataset =
          icregress::load_dataset(icregress::DatasetPaths::in_dir(tb_data));
      if (dataset.samples.empty()) throw std::runtime_error("dataset has no samples");
      const auto arrays = icregress::to_arrays(dataset.samples);
      const std::size_t memory = icregress::resolve_memory_size(tb_k, arrays.features.size());
      icregress::ArchitectureDescriptor desc;
      desc.dropout_p = tb_dropout;
      const icregress::TrainConfig cfg =
          train_config_from_flags(tb_epochs, tb_batch, tb_lr, tb_momentum, tb_seed);
      const icregress::RegressorParams params =
          icregress::train(arrays.features, arrays.targets, cfg, desc);
      const icregress::ExemplarSet exemplars = icregress::select_exemplars(
          arrays.features, arrays.targets, params, memory, arrays.ids);
      fs::create_directories(tb_out);
      icregress::save_checkpoint(params, fs::path(tb_out) / "base.icrg");
      icregress::save_exemplars(exemplars, fs::path(tb_out) / "exemplars.jsonl");
      const auto eval = icregress::evaluate(dataset.samples, params);
      json summary = {{"base_checkpoint", (fs::path(tb_out) / "base.icrg").string()},
                      {"exemplars", (fs::path(tb_out) / "exemplars.jsonl").string()},
                      {"memory_size", memory},
                      {"base_length", arrays.features.size()},
                      {"training_eval", icregress::eval_result_to_json(eval)}};
      write_json_file(summary, fs::path(tb_out) / "training_summary.json");
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
    if (adapt_cmd->parsed()) {
      active = "adapt";
      const icregress::RegressorParams base = icregress::load_checkpoint(ad_base);
      icregress::ExemplarSet exemplars;
      if (!ad_exemplars.empty()) exemplars = icregress::load_exemplars(ad_exemplars);
      const icregress::Dataset dataset =
          icregress::load_dataset(icregress::DatasetPaths::in_dir(ad_data));
      const auto arrays = icregress::to_arrays(dataset.samples);
      const auto stream = icregress::to_stream(arrays, 64);
      const icregress::TrainConfig cfg =
          train_config_from_flags(ad_epochs, ad_batch, ad_lr, ad_momentum, ad_seed);
      const icregress::RegressorParams adapted =
          icregress::adapt(exemplars, stream, ad_scratch ? nullptr : &base, cfg);
      icregress::save_checkpoint(adapted, ad_out);
      json out = {{"adapted_checkpoint", ad_out},
                  {"stream_samples", arrays.features.size()},
                  {"exemplars", exemplars.size()}};
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (evaluate_cmd->parsed()) {
      active = "evaluate";
      const icregress::RegressorParams params = icregress::load_checkpoint(ev_model);
      const icregress::Dataset dataset =
          icregress::load_dataset(icregress::DatasetPaths::in_dir(ev_data));
      icregress::EvalOptions opts;
      opts.keep_per_sample = !ev_csv.empty();
      const icregress::EvalResult result = icregress::evaluate(dataset.samples, params, opts);
      if (!ev_csv.empty()) icregress::write_per_sample_csv(result, ev_csv);
      const json out = icregress::eval_result_to_json(result);
      if (ev_out.empty()) {
        std::cout << out.dump(2) << "\n";
      } else {
        write_json_file(out, ev_out);
        std::cout << json({{"eval", ev_out}}).dump(2) << "\n";
      }
      return 0;
    }
    if (app.get_subcommand("ablate")->parsed()) {
      active = "ablate";
      return run_experiment_command(ablate_opts, icregress::ExperimentKind::kAblation);
    }
    if (app.get_subcommand("sweep-k")->parsed()) {
      active = "sweep-k";
      return run_experiment_command(sweep_opts, icregress::ExperimentKind::kKSweep);
    }
    if (app.get_subcommand("personalize")->parsed()) {
      active = "personalize";
      return run_experiment_command(person_opts, icregress::ExperimentKind::kPersonalization);
    }
    if (app.get_subcommand("forgetting")->parsed()) {
      active = "forgetting";
      return run_experiment_command(forget_opts, icregress::ExperimentKind::kForgetting);
    }
    if (emit_cmd->parsed()) {
      active = "emit-plots";
      const icregress::ExperimentReport report =
          icregress::report_from_json(read_json_file(ep_report));
      const auto paths = icregress::emit_plotdata(report, ep_out);
      std::cout << json({{"plots", paths}}).dump(2) << "\n";
      return 0;
    }
    throw std::runtime_error("no subcommand given");
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << json({{"error", {{"message", e.what()}, {"command", "argument parsing"}}}}).dump()
              << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json({{"error",
                        {{"message", e.what()}, {"command", active.empty() ? "startup" : active}}}})
                     .dump()
              << "\n";
    return 1;
  }
}
