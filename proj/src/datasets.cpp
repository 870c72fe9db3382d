#include "rmit/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rmit/error.hpp"

namespace rmit {
namespace fs = std::filesystem;

void SyntheticShapesSpec::validate() const {
  if (num_domains < 2) throw InvalidSpec("synthetic dataset needs at least 2 domains");
  if (samples_per_domain < 1) throw InvalidSpec("samples_per_domain must be positive");
  if (image_size < 4) throw InvalidSpec("image_size must be at least 4");
  if (image_channels != 3) throw InvalidSpec("synthetic domains are hue families and need 3 channels");
  if (!(radius_min > 0.0 && radius_min <= radius_max) || position_jitter < 0.0 || hue_jitter < 0.0 ||
      background_min > background_max || background_gradient < 0.0) {
    throw InvalidSpec("invalid synthetic nuisance ranges");
  }
}

std::vector<std::string> synthetic_domain_names(int num_domains) {
  std::vector<std::string> names;
  for (int k = 0; k < num_domains; ++k) names.push_back("domain_" + std::to_string(k));
  return names;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Fully saturated HSV colour at hue h (turns), RGB in [0, 1].
std::array<double, 3> hue_to_rgb(double h) {
  h -= std::floor(h);
  const double x = h * 6.0;
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  switch (sector) {
    case 0:
      return {1.0, f, 0.0};
    case 1:
      return {1.0 - f, 1.0, 0.0};
    case 2:
      return {0.0, 1.0, f};
    case 3:
      return {0.0, 1.0 - f, 1.0};
    case 4:
      return {f, 0.0, 1.0};
    default:
      return {1.0, 0.0, 1.0 - f};
  }
}

}  // namespace

std::vector<LabeledSample> generate_synthetic(const SyntheticShapesSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int s = spec.image_size;
  const double denom = static_cast<double>(s - 1);
  std::vector<LabeledSample> out;
  out.reserve(static_cast<std::size_t>(spec.num_domains) * static_cast<std::size_t>(spec.samples_per_domain));
  for (int k = 0; k < spec.num_domains; ++k) {
    for (int i = 0; i < spec.samples_per_domain; ++i) {
      const double bg = uniform(rng, spec.background_min, spec.background_max);
      const double gx = uniform(rng, -spec.background_gradient, spec.background_gradient);
      const double gy = uniform(rng, -spec.background_gradient, spec.background_gradient);
      const double cx = uniform(rng, 0.5 - spec.position_jitter, 0.5 + spec.position_jitter);
      const double cy = uniform(rng, 0.5 - spec.position_jitter, 0.5 + spec.position_jitter);
      const double r = uniform(rng, spec.radius_min, spec.radius_max);
      const double hue =
          static_cast<double>(k) / spec.num_domains + uniform(rng, -spec.hue_jitter, spec.hue_jitter);
      const auto rgb = hue_to_rgb(hue);

      auto image = torch::empty({3, s, s}, torch::kFloat);
      auto acc = image.accessor<float, 3>();
      for (int row = 0; row < s; ++row) {
        const double v = row / denom;
        for (int col = 0; col < s; ++col) {
          const double u = col / denom;
          const double background = bg + gx * (u - 0.5) + gy * (v - 0.5);
          const double dist = std::hypot(u - cx, v - cy);
          const double mask = std::clamp((r - dist) * s / 1.5 + 0.5, 0.0, 1.0);
          for (int ch = 0; ch < 3; ++ch) {
            const double fg = -0.8 + 1.7 * rgb[static_cast<std::size_t>(ch)];
            acc[ch][row][col] = static_cast<float>(std::clamp(background * (1.0 - mask) + fg * mask, -1.0, 1.0));
          }
        }
      }
      LabeledSample sample;
      sample.image = image;
      sample.clean_label = k;
      sample.noisy_label = k;
      sample.sample_id = "syn" + std::to_string(spec.seed) + "_d" + std::to_string(k) + "_" + std::to_string(i);
      out.push_back(std::move(sample));
    }
  }
  return out;
}

template <class Access>
BatchIterator<Access>::BatchIterator(const LabeledDataset& dataset, std::vector<std::int64_t> order,
                                     std::int64_t batch_size, bool drop_last)
    : dataset_(&dataset), order_(std::move(order)), batch_size_(batch_size), drop_last_(drop_last) {
  if (batch_size_ < 1) throw InvalidInput("batch size must be positive");
  for (auto i : order_) {
    if (i < 0 || i >= dataset.size()) throw InvalidInput("sample index out of range");
  }
}

template <class Access>
std::int64_t BatchIterator<Access>::batches_remaining() const {
  const auto left = static_cast<std::int64_t>(order_.size() - cursor_);
  return drop_last_ ? left / batch_size_ : (left + batch_size_ - 1) / batch_size_;
}

template <class Access>
std::optional<Batch<Access>> BatchIterator<Access>::next() {
  const auto left = static_cast<std::int64_t>(order_.size() - cursor_);
  if (left == 0 || (drop_last_ && left < batch_size_)) return std::nullopt;
  const auto len = std::min(left, batch_size_);
  std::vector<std::int64_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                order_.begin() + static_cast<std::ptrdiff_t>(cursor_) + len);
  cursor_ += static_cast<std::size_t>(len);
  auto index = torch::tensor(idx, torch::kLong);
  std::vector<std::int64_t> noisy;
  for (auto i : idx) noisy.push_back(dataset_->noisy_[static_cast<std::size_t>(i)]);
  Batch<Access> batch;
  batch.images = dataset_->images_.index_select(0, index);
  if constexpr (exposes_clean_labels) {
    std::vector<std::int64_t> clean;
    for (auto i : idx) clean.push_back(dataset_->clean_[static_cast<std::size_t>(i)]);
    batch.noisy_labels = torch::tensor(noisy, torch::kLong);
    batch.clean_labels = torch::tensor(clean, torch::kLong);
  } else {
    batch.labels = torch::tensor(noisy, torch::kLong);
  }
  return batch;
}

template class BatchIterator<TrainingAccess>;
template class BatchIterator<EvaluationAccess>;

LabeledDataset::LabeledDataset(std::vector<LabeledSample> samples, std::int64_t num_domains,
                               std::vector<std::string> domain_names)
    : num_domains_(num_domains), domain_names_(std::move(domain_names)) {
  if (num_domains_ < 2) throw InvalidInput("dataset needs at least 2 domains");
  if (domain_names_.empty()) domain_names_ = synthetic_domain_names(static_cast<int>(num_domains_));
  if (static_cast<std::int64_t>(domain_names_.size()) != num_domains_) {
    throw InvalidInput("one domain name per domain expected");
  }
  std::vector<torch::Tensor> images;
  for (auto& s : samples) {
    if (s.clean_label < 0 || s.clean_label >= num_domains_ || s.noisy_label < 0 || s.noisy_label >= num_domains_) {
      throw InvalidInput("sample '" + s.sample_id + "' has a label outside [0, c)");
    }
    images.push_back(s.image);
    clean_.push_back(s.clean_label);
    noisy_.push_back(s.noisy_label);
    ids_.push_back(std::move(s.sample_id));
  }
  if (!images.empty()) images_ = torch::stack(images).contiguous();
}

LabeledSample LabeledDataset::sample(std::int64_t index) const {
  if (index < 0 || index >= size()) throw InvalidInput("sample index out of range");
  const auto i = static_cast<std::size_t>(index);
  return {images_[index], clean_[i], noisy_[i], ids_[i]};
}

LabeledDataset LabeledDataset::subset(const std::vector<std::int64_t>& indices) const {
  std::vector<LabeledSample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(sample(i));
  return LabeledDataset(std::move(picked), num_domains_, domain_names_);
}

void LabeledDataset::apply_noise(const TransitionMatrix& transition, Rng& rng) {
  if (transition.num_classes() != num_domains_) throw InvalidInput("transition matrix size differs from c");
  noisy_ = corrupt(clean_, transition, rng);
}

void LabeledDataset::set_noisy_labels(std::vector<std::int64_t> labels) {
  if (labels.size() != clean_.size()) throw InvalidInput("one noisy label per sample expected");
  for (auto y : labels) {
    if (y < 0 || y >= num_domains_) throw InvalidInput("noisy label outside [0, c)");
  }
  noisy_ = std::move(labels);
}

std::vector<LabelAssignment> LabeledDataset::assignments() const {
  std::vector<LabelAssignment> out;
  for (std::size_t i = 0; i < ids_.size(); ++i) out.push_back({ids_[i], clean_[i], noisy_[i]});
  return out;
}

BatchIterator<TrainingAccess> LabeledDataset::training_batches(std::vector<std::int64_t> order,
                                                              std::int64_t batch_size) const {
  return BatchIterator<TrainingAccess>(*this, std::move(order), batch_size, /*drop_last=*/true);
}

BatchIterator<EvaluationAccess> LabeledDataset::evaluation_batches(std::int64_t batch_size) const {
  std::vector<std::int64_t> order(static_cast<std::size_t>(size()));
  std::iota(order.begin(), order.end(), 0);
  return BatchIterator<EvaluationAccess>(*this, std::move(order), batch_size, /*drop_last=*/false);
}

DatasetSplit split_stratified(const LabeledDataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train fraction must lie in (0, 1)");
  const auto c = dataset.num_domains();
  std::vector<std::vector<std::int64_t>> by_domain(static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    by_domain[static_cast<std::size_t>(dataset.clean_labels()[static_cast<std::size_t>(i)])].push_back(i);
  }
  const auto total = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(dataset.size())));
  std::vector<std::int64_t> quota(static_cast<std::size_t>(c));
  std::vector<std::pair<double, std::int64_t>> remainders;
  std::int64_t assigned = 0;
  for (std::int64_t k = 0; k < c; ++k) {
    const double exact = train_fraction * static_cast<double>(by_domain[static_cast<std::size_t>(k)].size());
    quota[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(std::floor(exact));
    assigned += quota[static_cast<std::size_t>(k)];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r, ++assigned) {
    ++quota[static_cast<std::size_t>(remainders[r].second)];
  }

  Rng rng(seed);
  DatasetSplit split;
  for (std::int64_t k = 0; k < c; ++k) {
    auto members = by_domain[static_cast<std::size_t>(k)];
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[uniform_index(rng, i)]);
    }
    const auto q = static_cast<std::size_t>(quota[static_cast<std::size_t>(k)]);
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(q), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

nlohmann::json split_manifest(const LabeledDataset& dataset, const DatasetSplit& split) {
  nlohmann::json doc;
  doc["format"] = "rmit-split";
  doc["version"] = 1;
  auto& table = doc["samples"] = nlohmann::json::object();
  for (auto i : split.train) table[dataset.sample_ids()[static_cast<std::size_t>(i)]] = "train";
  for (auto i : split.test) table[dataset.sample_ids()[static_cast<std::size_t>(i)]] = "test";
  return doc;
}

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".pgm" || ext == ".ppm";
}

torch::Tensor mat_to_tensor(const cv::Mat& image, int image_size, int channels) {
  cv::Mat resized;
  cv::resize(image, resized, cv::Size(image_size, image_size), 0, 0, cv::INTER_AREA);
  if (channels == 3) cv::cvtColor(resized, resized, cv::COLOR_BGR2RGB);
  cv::Mat as_float;
  resized.convertTo(as_float, CV_32F, 2.0 / 255.0, -1.0);
  auto t = torch::from_blob(as_float.data, {image_size, image_size, channels}, torch::kFloat).clone();
  return t.permute({2, 0, 1}).contiguous();
}

}  // namespace

FolderLoadResult load_image_folder(const fs::path& root, int image_size, int image_channels) {
  if (image_channels != 1 && image_channels != 3) throw InvalidInput("image folders load 1 or 3 channels");
  if (!fs::is_directory(root)) throw InvalidInput("image folder '" + root.string() + "' does not exist");
  FolderLoadResult out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) out.domain_names.push_back(entry.path().filename().string());
  }
  std::sort(out.domain_names.begin(), out.domain_names.end());
  if (out.domain_names.empty()) throw InvalidInput("image folder '" + root.string() + "' has no domains");

  const int flag = image_channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE;
  for (std::size_t k = 0; k < out.domain_names.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / out.domain_names[k])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& file : files) {
      cv::Mat image = cv::imread(file.string(), flag);
      if (image.empty()) {
        ++out.skipped;
        continue;
      }
      LabeledSample s;
      s.image = mat_to_tensor(image, image_size, image_channels);
      s.clean_label = static_cast<std::int64_t>(k);
      s.noisy_label = s.clean_label;
      s.sample_id = out.domain_names[k] + "/" + file.filename().string();
      out.samples.push_back(std::move(s));
      ++loaded;
    }
    if (loaded == 0) throw InvalidInput("domain '" + out.domain_names[k] + "' contains no readable images");
  }
  return out;
}

void export_image_folder(const LabeledDataset& dataset, const fs::path& root) {
  for (const auto& name : dataset.domain_names()) fs::create_directories(root / name);
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    const auto s = dataset.sample(i);
    auto hwc = ((s.image.permute({1, 2, 0}).contiguous() + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8);
    const int channels = static_cast<int>(hwc.size(2));
    cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), channels == 3 ? CV_8UC3 : CV_8UC1,
                hwc.data_ptr<std::uint8_t>());
    cv::Mat out = mat.clone();
    if (channels == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
    auto file = s.sample_id;
    std::replace(file.begin(), file.end(), '/', '_');
    if (fs::path(file).extension() != ".png") file += ".png";
    const auto path = root / dataset.domain_names()[static_cast<std::size_t>(s.clean_label)] / file;
    if (!cv::imwrite(path.string(), out)) throw InvalidInput("cannot write " + path.string());
  }
}

torch::Tensor hflip_mask(std::int64_t batch, double probability, std::optional<torch::Generator> generator) {
  if (!(probability >= 0.0 && probability <= 1.0)) throw InvalidInput("flip probability must lie in [0, 1]");
  return torch::rand({batch}, generator, torch::TensorOptions().dtype(torch::kDouble)) < probability;
}

torch::Tensor augment_hflip(const torch::Tensor& batch, double probability,
                            std::optional<torch::Generator> generator) {
  if (batch.dim() != 4) throw InvalidInput("augment_hflip expects [B, C, H, W]");
  auto mask = hflip_mask(batch.size(0), probability, std::move(generator)).view({-1, 1, 1, 1});
  return torch::where(mask, batch.flip({3}), batch);
}

}  // namespace rmit
