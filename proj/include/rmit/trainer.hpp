#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "rmit/checkpoint.hpp"
#include "rmit/common.hpp"
#include "rmit/datasets.hpp"
#include "rmit/losses.hpp"
#include "rmit/metrics.hpp"
#include "rmit/networks.hpp"
#include "rmit/noise.hpp"
#include "rmit/robust.hpp"

namespace rmit {

struct EvalClassifierTraining {
  std::int64_t iterations = 300;
  std::int64_t batch_size = 32;
  double lr = 1e-3;
};

struct TrainConfig {
  Variant variant = Variant::rmit;
  LossWeights weights;
  RobustClsConfig robust_cls;
  NoiseSpec noise;
  int epochs_flat = 20;
  int epochs_decay = 20;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int d_steps_per_g = 5;
  int batch_size = 16;
  std::uint64_t seed = 0;

  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  RelabelMode relabel_mode = RelabelMode::sample;
  double hflip_probability = 0.5;
  int eval_every_epochs = 5;
  int classifier_eval_every_iterations = 100;
  int checkpoint_every_epochs = 5;
  EvaluationSettings evaluation;
  EvalClassifierTraining eval_classifier;

  int total_epochs() const { return epochs_flat + epochs_decay; }
  void validate() const;  // InvalidSpec

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);  // InvalidSpec on unknown keys or bad values
  // FNV-1a over the canonical JSON, as 16 hex digits.
  std::string hash() const;

  // Transition matrix used by forward correction: the configured one, or the
  // matrix of the noise spec.
  TransitionMatrix forward_transition() const;

  static TrainConfig desk(Variant variant, std::int64_t num_domains = 3);
};

/// lr for epoch < epochs_flat, then linear descent reaching 0 at the end of
/// the schedule. Throws InvalidInput outside [0, total_epochs).
double lr_at(int epoch, const TrainConfig& config);

struct TrainState {
  TrainConfig config;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  Discriminator second_discriminator{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_g;
  std::unique_ptr<torch::optim::Adam> optimizer_d;
  std::unique_ptr<torch::optim::Adam> optimizer_d2;
  CoteachingState coteaching;
  std::int64_t d_steps = 0;
  std::int64_t g_steps = 0;

  // Seeds torch's default generator with config.seed before building.
  static TrainState create(const TrainConfig& config);

  bool initialized() const { return !generator.is_empty() && !discriminator.is_empty() && optimizer_g; }
  void set_lr(double lr);

  Translator translator();
  // The classifier whose logits enter L^f_cls and the relabeling: C, or
  // peer A under co-teaching.
  Classifier classifier();
};

struct StepResult {
  LossBundle losses;
  bool generator_updated = false;
};

/// One D/C update (and D' when active); every d_steps_per_g-th call also
/// updates G. Throws NumericalError with the LossBundle in the message on a
/// non-finite term, before any parameter changes.
StepResult train_step(TrainState& state, const Batch<TrainingAccess>& batch);

/// Accuracy (percent) of the D/C classifier head, or peer A, on images with
/// the given labels. Dropout disabled during the measurement.
double classifier_accuracy(TrainState& state, const torch::Tensor& images, std::span<const std::int64_t> labels);

/// Trains the evaluation CNN on clean labels from a seeded default generator.
EvalClassifier train_eval_classifier(const LabeledDataset& train, const EvalClassifierTraining& settings,
                                     std::uint64_t seed);

struct TrajectoryPoint {
  std::int64_t step = 0;
  int epoch = 0;
  std::string metric;
  double value = 0.0;
};

class ScoreTrajectory {
 public:
  void add(std::int64_t step, int epoch, std::string metric, double value);  // InvalidInput on non-increasing step
  const std::vector<TrajectoryPoint>& points() const { return points_; }
  std::vector<TrajectoryPoint> series(std::string_view metric) const;

  nlohmann::json to_json() const;
  static ScoreTrajectory from_json(const nlohmann::json& j);

 private:
  std::vector<TrajectoryPoint> points_;
};

struct TrainingData {
  LabeledDataset train;  // noisy labels already assigned
  LabeledDataset test;   // clean labels used for evaluation
  // Seeds the evaluation CNN; shared by every run on the same data so CA
  // values are comparable across runs.
  std::uint64_t eval_classifier_seed = 0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool resume = false;
  // Stop after this many completed epochs (a checkpoint is written first).
  std::optional<int> stop_after_epoch;
};

struct RunResult {
  ScoreTrajectory trajectory;
  std::vector<MetricsReport> reports;
  CheckpointArchive checkpoint;
  int epochs_completed = 0;
  std::int64_t d_steps = 0;
  std::int64_t g_steps = 0;
  double eval_classifier_test_accuracy = 0.0;
};

/// Files under out_dir: checkpoint.rmit, train_log.jsonl (LossBundle rows),
/// metrics.jsonl (MetricsReport rows), trajectory.jsonl.
RunResult run_training(const TrainConfig& config, const TrainingData& data, const RunOptions& options = {});

// Full state including the evaluation classifier, epoch and trajectory.
CheckpointArchive make_checkpoint(TrainState& state, EvalClassifier& eval_classifier, int epoch,
                                  const ScoreTrajectory& trajectory, const std::vector<MetricsReport>& reports,
                                  const Rng& shuffle_rng);

}  // namespace rmit
