#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "rmit/common.hpp"
#include "rmit/noise.hpp"

namespace rmit {

struct LabeledSample {
  torch::Tensor image;  // [C, H, W] in [-1, 1]
  std::int64_t clean_label = 0;
  std::int64_t noisy_label = 0;
  std::string sample_id;
};

/// Desk-scale stand-in for a facial-expression dataset: every domain is a
/// hue family painted onto a soft disc whose position, radius and background
/// vary smoothly, so translation means "recolour, keep pose and background".
struct SyntheticShapesSpec {
  int num_domains = 3;
  int samples_per_domain = 200;
  int image_size = 32;
  int image_channels = 3;
  double position_jitter = 0.2;           // centre drawn from 0.5 +- jitter (fraction of the side)
  double radius_min = 0.2, radius_max = 0.32;
  double background_min = -0.6, background_max = 0.2;
  double background_gradient = 0.3;       // max tilt of the background ramp
  double hue_jitter = 0.02;
  std::uint64_t seed = 1;

  void validate() const;  // InvalidSpec
};

std::vector<LabeledSample> generate_synthetic(const SyntheticShapesSpec& spec);
std::vector<std::string> synthetic_domain_names(int num_domains);

struct TrainingAccess {};
struct EvaluationAccess {};

template <class Access>
struct Batch;

// Training batches carry only the (possibly corrupted) labels.
template <>
struct Batch<TrainingAccess> {
  torch::Tensor images;
  torch::Tensor labels;
};

template <>
struct Batch<EvaluationAccess> {
  torch::Tensor images;
  torch::Tensor noisy_labels;
  torch::Tensor clean_labels;
};

class LabeledDataset;

/// Sequential batches over a fixed sample order. The Access tag decides at
/// compile time whether clean labels are reachable.
template <class Access>
class BatchIterator {
 public:
  static constexpr bool exposes_clean_labels = std::is_same_v<Access, EvaluationAccess>;

  BatchIterator(const LabeledDataset& dataset, std::vector<std::int64_t> order, std::int64_t batch_size,
                bool drop_last);

  std::optional<Batch<Access>> next();
  std::int64_t batches_remaining() const;

 private:
  const LabeledDataset* dataset_;
  std::vector<std::int64_t> order_;
  std::int64_t batch_size_;
  bool drop_last_;
  std::size_t cursor_ = 0;
};

class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<LabeledSample> samples, std::int64_t num_domains,
                 std::vector<std::string> domain_names = {});

  std::int64_t size() const { return static_cast<std::int64_t>(ids_.size()); }
  std::int64_t num_domains() const { return num_domains_; }
  const std::vector<std::string>& domain_names() const { return domain_names_; }
  const std::vector<std::string>& sample_ids() const { return ids_; }
  const torch::Tensor& images() const { return images_; }  // [N, C, H, W]
  std::int64_t image_size() const { return images_.defined() ? images_.size(2) : 0; }
  std::int64_t image_channels() const { return images_.defined() ? images_.size(1) : 0; }

  const std::vector<std::int64_t>& noisy_labels() const { return noisy_; }
  // Evaluation only. Training code goes through BatchIterator<TrainingAccess>.
  const std::vector<std::int64_t>& clean_labels() const { return clean_; }

  LabeledSample sample(std::int64_t index) const;
  LabeledDataset subset(const std::vector<std::int64_t>& indices) const;

  // Replaces noisy labels with a fresh corruption of the clean ones.
  void apply_noise(const TransitionMatrix& transition, Rng& rng);
  void set_noisy_labels(std::vector<std::int64_t> labels);
  std::vector<LabelAssignment> assignments() const;

  BatchIterator<TrainingAccess> training_batches(std::vector<std::int64_t> order, std::int64_t batch_size) const;
  BatchIterator<EvaluationAccess> evaluation_batches(std::int64_t batch_size) const;

 private:
  template <class>
  friend class BatchIterator;

  torch::Tensor images_;
  std::vector<std::int64_t> clean_;
  std::vector<std::int64_t> noisy_;
  std::vector<std::string> ids_;
  std::int64_t num_domains_ = 0;
  std::vector<std::string> domain_names_;
};

struct DatasetSplit {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
};

/// Stratified per clean label. The train total is floor(fraction * N) and the
/// per-domain quotas are assigned by largest remainder.
DatasetSplit split_stratified(const LabeledDataset& dataset, double train_fraction, std::uint64_t seed);
nlohmann::json split_manifest(const LabeledDataset& dataset, const DatasetSplit& split);

struct FolderLoadResult {
  std::vector<LabeledSample> samples;
  std::vector<std::string> domain_names;
  int skipped = 0;  // unreadable files
};

/// root/<domain>/<file>; domains indexed in lexicographic order. Images are
/// resized to image_size and mapped to [-1, 1].
FolderLoadResult load_image_folder(const std::filesystem::path& root, int image_size, int image_channels = 3);
void export_image_folder(const LabeledDataset& dataset, const std::filesystem::path& root);

// Per-image Bernoulli(probability) mirror mask and its application.
torch::Tensor hflip_mask(std::int64_t batch, double probability, std::optional<torch::Generator> generator = {});
torch::Tensor augment_hflip(const torch::Tensor& batch, double probability = 0.5,
                            std::optional<torch::Generator> generator = {});

}  // namespace rmit
