// Experiment driver: dataset generation, two-phase training with the
// rho-mixed compositional objective, evaluation and the ablation grid.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "hoi/config.hpp"
#include "hoi/data.hpp"
#include "hoi/eval.hpp"
#include "hoi/matching.hpp"
#include "hoi/optim.hpp"
#include "hoi/train.hpp"

namespace {

using namespace hoi;

data::Dataset load_dataset_dir(const std::string& dir, const std::string& spec_path) {
  data::DatasetSpec spec;
  if (!spec_path.empty()) {
    spec = load_dataset_spec(spec_path);
  } else if (std::filesystem::exists(dir + "/spec.json")) {
    spec = load_dataset_spec(dir + "/spec.json");
  }
  data::Dataset ds = data::load_dataset(dir, spec);
  ds.spec.num_objects = ds.table.num_objects;
  ds.spec.num_actions = ds.table.num_actions;
  return ds;
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir,
                 std::int64_t seed_override) {
  data::DatasetSpec spec;
  if (!spec_path.empty()) spec = load_dataset_spec(spec_path);
  if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
  const data::Dataset ds = data::build_dataset(spec);
  data::save_dataset(out_dir, ds);
  // spec echo so later commands rebuild the census with the same thresholds
  write_dataset_spec(out_dir + "/spec.json", spec);

  std::cout << "dataset written to " << out_dir << "\n"
            << "  train scenes: " << ds.train.size() << "\n"
            << "  test scenes:  " << ds.test.size() << "\n"
            << "  categories:   " << ds.table.num_categories() << " (rare "
            << ds.census.rare_count() << ", non-rare " << ds.census.nonrare_count() << ")\n";
  return 0;
}

int cmd_train(const exp::ExperimentConfig& cfg, const std::string& dataset_dir,
              const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  const data::Dataset ds = load_dataset_dir(dataset_dir, spec_path);
  const exp::RunResult run =
      exp::train_and_eval(cfg, ds, cfg.mode, cfg.rho, seed, out_dir, &std::cout);
  std::cout << "final mAP full " << run.report.map_full << " rare " << run.report.map_rare
            << " nonrare " << run.report.map_nonrare << "\n"
            << "artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_eval(const exp::ExperimentConfig& cfg, const std::string& dataset_dir,
             const std::string& spec_path, const std::string& checkpoint,
             const std::string& out_path, std::uint64_t seed, bool oracle) {
  const data::Dataset ds = load_dataset_dir(dataset_dir, spec_path);

  model::ModelConfig mc = cfg.model;
  mc.num_object_classes = ds.spec.num_objects;
  mc.num_action_classes = ds.spec.num_actions;
  mc.grid_h = ds.spec.grid_h;
  mc.grid_w = ds.spec.grid_w;
  mc.grid_c = ds.spec.grid_c;
  const auto head = cfg.mode == exp::Mode::baseline ? model::ActionHeadKind::interaction_only
                                                    : model::ActionHeadKind::concat;
  model::HoiModel m(mc, head, seed);
  if (!oracle) {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint required unless --oracle");
    ad::load_checkpoint(checkpoint, m.params());
  }

  eval::EvalOptions eo;
  eo.top_k = cfg.top_k;
  eo.use_nms = cfg.use_nms;
  eo.nms_iou = cfg.nms_iou;
  eo.oracle_predictions = oracle;
  const eval::EvalReport report = eval::evaluate(m, ds.test, ds.census, ds.table, eo);
  eval::write_report_csv(out_path, report, ds.table);
  std::cout << "mAP full " << report.map_full << " rare " << report.map_rare << " nonrare "
            << report.map_nonrare << " -> " << out_path << "\n";
  return 0;
}

int cmd_ablate(const exp::ExperimentConfig& cfg, const std::string& dataset_dir,
               const std::string& spec_path, const std::string& out_dir) {
  const data::Dataset ds = load_dataset_dir(dataset_dir, spec_path);
  const exp::AblationResult result = exp::run_ablation(cfg, ds, out_dir, &std::cout);
  std::cout << exp::format_ablation_table(result.rows);
  std::cout << "cells in " << out_dir << "/ablation.csv\n";
  return 0;
}

int cmd_report(const std::string& ablation_csv) {
  const auto cells = exp::read_ablation_csv(ablation_csv);
  std::cout << exp::format_ablation_table(exp::summarize_cells(cells));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional human-object-interaction learning on synthetic scenes"};
  app.require_subcommand(1);

  std::string spec_path, config_path, dataset_dir, out_dir = "out", checkpoint, ablation_csv;
  std::int64_t seed = -1;
  bool no_nms = false, oracle = false;
  double rho = -1.0;
  std::string mode;
  int jobs = 0;

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON (defaults used when omitted)");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override the spec seed");

  auto* train = app.add_subcommand("train", "train one model and evaluate it");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--dataset", dataset_dir, "generated dataset directory")->required();
  train->add_option("--dataset-spec", spec_path, "dataset spec JSON override");
  train->add_option("--out", out_dir, "run output directory")->required();
  train->add_option("--seed", seed, "training seed (default 1)");
  train->add_option("--mode", mode, "baseline | baseline_star | compo");
  train->add_option("--rho", rho, "loss mix weight for compo mode");
  train->add_flag("--no-nms", no_nms, "disable pairwise NMS at evaluation");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  evalc->add_option("--config", config_path, "experiment config JSON");
  evalc->add_option("--dataset", dataset_dir, "generated dataset directory")->required();
  evalc->add_option("--dataset-spec", spec_path, "dataset spec JSON override");
  evalc->add_option("--checkpoint", checkpoint, "checkpoint file");
  evalc->add_option("--out", out_dir, "report CSV path")->required();
  evalc->add_option("--seed", seed, "model seed used when no checkpoint is given");
  evalc->add_option("--mode", mode, "head layout of the checkpoint");
  evalc->add_flag("--no-nms", no_nms, "disable pairwise NMS");
  evalc->add_flag("--oracle", oracle, "inject ground truth as predictions (evaluator sanity)");

  auto* ablate = app.add_subcommand("ablate", "run the {baseline, baseline*, compo x rho} grid");
  ablate->add_option("--config", config_path, "experiment config JSON");
  ablate->add_option("--dataset", dataset_dir, "generated dataset directory")->required();
  ablate->add_option("--dataset-spec", spec_path, "dataset spec JSON override");
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--jobs", jobs, "parallel runs (default: hardware threads)");

  auto* report = app.add_subcommand("report", "re-print the ablation table from stored cells");
  report->add_option("--ablation", ablation_csv, "ablation.csv path")->required();

  auto* defaults = app.add_subcommand("write-defaults", "write default config files");
  defaults->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(spec_path, out_dir, seed);

    exp::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = hoi::load_experiment_config(config_path);
    if (!mode.empty()) cfg.mode = exp::mode_from_name(mode);
    if (rho >= 0.0) {
      cfg.rho = rho;
      cfg.weights.rho = rho;
    }
    if (no_nms) cfg.use_nms = false;
    if (jobs > 0) cfg.jobs = jobs;

    if (train->parsed()) {
      return cmd_train(cfg, dataset_dir, spec_path, out_dir,
                       seed >= 0 ? static_cast<std::uint64_t>(seed) : 1);
    }
    if (evalc->parsed()) {
      return cmd_eval(cfg, dataset_dir, spec_path, checkpoint, out_dir,
                      seed >= 0 ? static_cast<std::uint64_t>(seed) : 1, oracle);
    }
    if (ablate->parsed()) return cmd_ablate(cfg, dataset_dir, spec_path, out_dir);
    if (report->parsed()) return cmd_report(ablation_csv);
    if (defaults->parsed()) {
      std::filesystem::create_directories(out_dir);
      hoi::write_default_dataset_spec(out_dir + "/dataset_spec.json");
      hoi::write_default_experiment_config(out_dir + "/experiment.json");
      std::cout << "defaults written to " << out_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
