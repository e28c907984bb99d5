#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hoi/data.hpp"
#include "hoi/eval.hpp"
#include "hoi/losses.hpp"
#include "hoi/model.hpp"
#include "hoi/recompose.hpp"

namespace hoi::exp {

enum class Mode { baseline, baseline_star, compo };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct ExperimentConfig {
  Mode mode = Mode::compo;
  double rho = 0.75;
  std::vector<double> rho_grid = {0.5, 0.75, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // two-phase schedule: phase 1 with a 10x lr drop at lr_drop_epoch, then a
  // short phase 2 at lr_phase2 with the encoder frozen
  int epochs_phase1 = 30;
  int epochs_phase2 = 4;
  int lr_drop_epoch = 20;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 1e-4;
  double weight_decay = 1e-4;

  bool detach_recomposed = false;
  loss::LossWeights weights;

  int top_k = 100;
  bool use_nms = true;
  double nms_iou = 0.7;

  model::ModelConfig model;  // class counts / grid filled from the dataset
  int jobs = 0;              // 0 = hardware concurrency (ablation only)

  std::string canonical_string(const data::DatasetSpec& dataset_spec) const;
  std::string config_hash(const data::DatasetSpec& dataset_spec) const;
};

// One training step over a batch of one or two scenes.
struct StepOutcome {
  loss::LossReport report;
};

struct RunResult {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<loss::LossReport> steps;
  std::vector<loss::LossReport> epoch_means;
  eval::EvalReport report;
  std::string encoder_checksum_after_phase1;
  std::string encoder_checksum_final;
  double wall_seconds = 0.0;  // excluded from the deterministic record
};

// Trains one configuration on the dataset and evaluates on the test split.
// Writes loss.csv, runrecord.json, eval.csv, checkpoint.txt and meta.txt
// under run_dir when run_dir is non-empty.
RunResult train_and_eval(const ExperimentConfig& cfg, const data::Dataset& ds,
                         Mode mode, double rho, std::uint64_t seed,
                         const std::string& run_dir, std::ostream* log = nullptr);

void write_loss_csv(const std::string& path, const std::vector<loss::LossReport>& steps);
std::vector<loss::LossReport> read_loss_csv(const std::string& path);

struct AblationCell {
  std::string method;  // "baseline", "baseline_star", "compo(rho=...)"
  Mode mode = Mode::baseline;
  double rho = 1.0;
  std::uint64_t seed = 0;
  double map_full = 0.0, map_rare = 0.0, map_nonrare = 0.0;
};

struct AblationSummaryRow {
  std::string method;
  double mean_full = 0.0, std_full = 0.0;
  double mean_rare = 0.0, std_rare = 0.0;
  double mean_nonrare = 0.0, std_nonrare = 0.0;
  int n_seeds = 0;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::vector<AblationSummaryRow> rows;
};

// Full grid {baseline, baseline_star, compo x rho_grid} x seeds. Cells run in
// parallel (cfg.jobs threads); outputs land under out_dir.
AblationResult run_ablation(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const std::string& out_dir, std::ostream* log = nullptr);

std::vector<AblationSummaryRow> summarize_cells(const std::vector<AblationCell>& cells);
void write_ablation_csv(const std::string& path, const std::vector<AblationCell>& cells);
std::vector<AblationCell> read_ablation_csv(const std::string& path);
std::string format_ablation_table(const std::vector<AblationSummaryRow>& rows);

// Deterministic checksum over the encoder parameters (phase-2 freeze proof).
std::string encoder_checksum(const model::HoiModel& m);

}  // namespace hoi::exp
