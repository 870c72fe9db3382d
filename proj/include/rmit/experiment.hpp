#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmit/trainer.hpp"

namespace rmit {

/// Where the images come from. Synthetic data is rendered twice: the
/// training set from `seed`, the test set from `test_seed`. Folder data is
/// split per domain by `train_fraction`.
struct DatasetSpec {
  enum class Kind { synthetic, folder } kind = Kind::synthetic;
  SyntheticShapesSpec synthetic;
  int test_samples_per_domain = 20;
  std::uint64_t test_seed = 2;
  std::filesystem::path folder;
  int image_size = 32;
  int image_channels = 3;
  double train_fraction = 0.9;
  std::uint64_t split_seed = 0;

  std::int64_t num_domains() const;  // folder data: counted on disk
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);  // InvalidSpec
};

/// Train/test data for one run. The training labels are corrupted with a
/// stream derived from config.seed, so each trial draws its own noise.
TrainingData build_training_data(const DatasetSpec& dataset, const TrainConfig& config);

struct PlanCell {
  Variant variant = Variant::rmit;
  RobustMethod classifier = RobustMethod::naive;
  NoiseKind noise = NoiseKind::none;
  double noise_rate = 0.0;
  std::optional<double> alpha;
  double drop_rate = 0.0;  // co-teaching tau; defaults to the noise rate when 0
  std::vector<std::uint64_t> seeds;
  nlohmann::json overrides = nlohmann::json::object();  // merged into the config last

  std::string model_label() const;      // e.g. "RMIT", "StarGAN + forward"
  std::string condition_label() const;  // e.g. "clean", "symmetric 0.5"
  nlohmann::json to_json() const;
  static PlanCell from_json(const nlohmann::json& j);
};

struct ExperimentPlan {
  std::string name = "plan";
  DatasetSpec dataset;
  nlohmann::json base = nlohmann::json::object();  // partial TrainConfig applied to every cell
  std::vector<PlanCell> cells;
  std::string output_root = "runs";

  // Checks that every cell and seed resolves to a valid TrainConfig.
  void validate() const;  // InvalidSpec
  TrainConfig resolve(const PlanCell& cell, std::uint64_t seed) const;

  nlohmann::json to_json() const;
  static ExperimentPlan from_json(const nlohmann::json& j);
  static ExperimentPlan load(const std::filesystem::path& path);
};

// Identity of one run: FNV-1a over the resolved config and the dataset spec.
std::string run_key(const TrainConfig& config, const DatasetSpec& dataset);

struct RunRecord {
  std::string model;
  std::string condition;
  std::uint64_t seed = 0;
  std::string run_key;
  bool completed = false;
  std::string error;
  MetricsReport final;  // last evaluation
  double eval_classifier_test_accuracy = 0.0;
  ScoreTrajectory trajectory;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Trains one run into run_dir (result.json, logs, checkpoint) unless a
/// completed result.json is already there. Incomplete runs restart unless
/// `resume` is set, in which case they continue from their checkpoint.
RunRecord execute_run(const TrainConfig& config, const DatasetSpec& dataset, const std::filesystem::path& run_dir,
                      bool resume, const std::string& model, const std::string& condition);

struct RunPlanOptions {
  std::filesystem::path out_dir;  // overrides the plan's output_root when set
  int workers = 1;
  bool resume = false;
  // Worker processes re-invoke this executable as
  // `<exe> run-cell --job <file>`; needed when workers > 1.
  std::filesystem::path worker_executable;
};

struct PlanOutcome {
  std::filesystem::path out_dir;
  std::vector<RunRecord> records;  // plan order: cell, then seed
  int executed = 0;
  int skipped = 0;  // already complete
  int failed = 0;
};

PlanOutcome run_plan(const ExperimentPlan& plan, const RunPlanOptions& options);

// Worker side of run_plan: reads a job file written by the parent.
int run_job_file(const std::filesystem::path& job_file);

// Lower median: the element at index (n - 1) / 2 after sorting.
double lower_median(std::vector<double> values);

struct ReportRow {
  std::string model;
  std::string condition;
  int runs = 0;
  int failed = 0;
  double ca = 0.0, fid = 0.0, is_score = 0.0, kid = 0.0;
  std::vector<std::string> run_keys;
};

struct Report {
  std::vector<ReportRow> rows;
  std::string csv;
  std::string table;  // model rows, condition column groups
};

Report aggregate_report(const std::vector<RunRecord>& records);

/// Cells for a mixture-rate sweep. alpha = 1 resolves to the plain cycle
/// variant and alpha = 0 to RMIT, so those cells share their configs.
std::vector<PlanCell> alpha_sweep_cells(const PlanCell& base, const std::vector<double>& alphas);

struct SweepPoint {
  double alpha = 0.0;
  double ca = 0.0;
  double fid = 0.0;
  int runs = 0;
};
std::vector<SweepPoint> alpha_sweep_report(const std::vector<PlanCell>& cells, const std::vector<double>& alphas,
                                           const std::vector<RunRecord>& records);

struct CorrelationEntry {
  std::string a, b;
  std::optional<double> rho;  // empty when a series is constant
};

struct CorrelationReport {
  std::vector<CorrelationEntry> entries;  // the six pairs of CA, FID, IS, KID
  std::string csv;
};

// Over the final metrics of every completed run. Needs at least 5 runs.
CorrelationReport correlation_report(const std::vector<RunRecord>& records);

// Reads every result.json under out_dir/runs.
std::vector<RunRecord> collect_records(const std::filesystem::path& out_dir);

// Report files: report.csv, report.txt, correlation.csv and scatter SVGs,
// trajectory SVGs per run.
void write_report_files(const std::filesystem::path& out_dir, const std::vector<RunRecord>& records);
void write_correlation_files(const std::filesystem::path& out_dir, const std::vector<RunRecord>& records);
void write_trajectory_plots(const std::filesystem::path& out_dir, const std::vector<RunRecord>& records);
void write_sweep_files(const std::filesystem::path& out_dir, const std::vector<SweepPoint>& points);

}  // namespace rmit
