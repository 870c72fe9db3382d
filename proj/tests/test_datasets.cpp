#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>

#include "rmit/datasets.hpp"
#include "rmit/error.hpp"

using namespace rmit;
namespace fs = std::filesystem;

static_assert(!BatchIterator<TrainingAccess>::exposes_clean_labels);
static_assert(BatchIterator<EvaluationAccess>::exposes_clean_labels);

namespace {

LabeledDataset small_dataset(int per_domain = 10, std::uint64_t seed = 1) {
  SyntheticShapesSpec spec;
  spec.samples_per_domain = per_domain;
  spec.image_size = 16;
  spec.seed = seed;
  return LabeledDataset(generate_synthetic(spec), spec.num_domains, synthetic_domain_names(spec.num_domains));
}

}  // namespace

TEST(Synthetic, ShapeRangeAndIds) {
  auto ds = small_dataset();
  EXPECT_EQ(ds.size(), 30);
  EXPECT_EQ(ds.images().sizes(), (std::vector<std::int64_t>{30, 3, 16, 16}));
  EXPECT_LE(ds.images().max().item<double>(), 1.0);
  EXPECT_GE(ds.images().min().item<double>(), -1.0);
  std::set<std::string> ids(ds.sample_ids().begin(), ds.sample_ids().end());
  EXPECT_EQ(ids.size(), 30u);
  EXPECT_EQ(ds.noisy_labels(), ds.clean_labels());
}

TEST(Synthetic, DeterministicPerSeed) {
  auto a = small_dataset(5, 4), b = small_dataset(5, 4), c = small_dataset(5, 5);
  EXPECT_TRUE(torch::equal(a.images(), b.images()));
  EXPECT_FALSE(torch::equal(a.images(), c.images()));
}

TEST(Synthetic, DomainsDifferInColour) {
  auto ds = small_dataset(20);
  // Per-domain mean colours must separate the domains.
  std::vector<torch::Tensor> means;
  for (int d = 0; d < 3; ++d) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < ds.size(); ++i)
      if (ds.clean_labels()[i] == d) idx.push_back(i);
    means.push_back(ds.images().index_select(0, torch::tensor(idx)).mean({0, 2, 3}));
  }
  EXPECT_GT((means[0] - means[1]).abs().max().item<double>(), 0.1);
  EXPECT_GT((means[1] - means[2]).abs().max().item<double>(), 0.1);
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticShapesSpec spec;
  spec.image_channels = 1;
  EXPECT_THROW(spec.validate(), InvalidSpec);
  spec = {};
  spec.radius_min = 0.5;
  spec.radius_max = 0.1;
  EXPECT_THROW(spec.validate(), InvalidSpec);
}

TEST(Batches, TrainingDropsLastAndUsesNoisyLabels) {
  auto ds = small_dataset();
  std::vector<std::int64_t> noisy(ds.size(), 2);
  ds.set_noisy_labels(noisy);
  std::vector<std::int64_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  auto it = ds.training_batches(order, 8);
  EXPECT_EQ(it.batches_remaining(), 3);
  int n = 0;
  while (auto b = it.next()) {
    EXPECT_EQ(b->images.size(0), 8);
    EXPECT_TRUE(torch::all(b->labels == 2).item<bool>());
    ++n;
  }
  EXPECT_EQ(n, 3);
}

TEST(Batches, EvaluationKeepsRemainderAndCleanLabels) {
  auto ds = small_dataset();
  ds.set_noisy_labels(std::vector<std::int64_t>(ds.size(), 0));
  auto it = ds.evaluation_batches(8);
  std::int64_t seen = 0;
  while (auto b = it.next()) {
    const auto n = b->images.size(0);
    EXPECT_TRUE(torch::all(b->noisy_labels == 0).item<bool>());
    for (std::int64_t i = 0; i < n; ++i) EXPECT_EQ(b->clean_labels[i].item<std::int64_t>(), ds.clean_labels()[seen + i]);
    seen += n;
  }
  EXPECT_EQ(seen, 30);
}

TEST(Noise, ApplyNoiseKeepsCleanLabels) {
  auto ds = small_dataset(100);
  const auto clean = ds.clean_labels();
  Rng rng(3);
  ds.apply_noise(build_symmetric(3, 0.5), rng);
  EXPECT_EQ(ds.clean_labels(), clean);
  int flipped = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) flipped += ds.noisy_labels()[i] != clean[i];
  EXPECT_GT(flipped, 100);
  EXPECT_LT(flipped, 200);
  const auto a = ds.assignments();
  EXPECT_EQ(a.size(), 300u);
  EXPECT_THROW(ds.set_noisy_labels({0, 1}), InvalidInput);
}

TEST(Split, StratifiedDisjointAndDeterministic) {
  auto ds = small_dataset(11);
  const auto s = split_stratified(ds, 0.7, 5);
  EXPECT_EQ(s.train.size(), 23u);  // floor(0.7 * 33)
  EXPECT_EQ(s.train.size() + s.test.size(), 33u);
  std::set<std::int64_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_FALSE(all.count(i));
  std::vector<int> per(3, 0);
  for (auto i : s.train) per[ds.clean_labels()[i]]++;
  for (int c : per) {
    EXPECT_GE(c, 7);
    EXPECT_LE(c, 8);
  }
  const auto again = split_stratified(ds, 0.7, 5);
  EXPECT_EQ(again.train, s.train);
  const auto manifest = split_manifest(ds, s);
  EXPECT_EQ(manifest.at("samples").size(), 33u);
}

TEST(Folder, ExportAndReload) {
  auto ds = small_dataset(3);
  const auto root = fs::temp_directory_path() / "rmit_test_folder";
  fs::remove_all(root);
  export_image_folder(ds, root);
  std::ofstream(root / ds.domain_names()[0] / "broken.png") << "not an image";
  const auto loaded = load_image_folder(root, 16);
  EXPECT_EQ(loaded.samples.size(), 9u);
  EXPECT_EQ(loaded.skipped, 1);
  EXPECT_EQ(loaded.domain_names.size(), 3u);
  std::vector<torch::Tensor> images;
  for (const auto& s : loaded.samples) images.push_back(s.image);
  auto stacked = torch::stack(images);
  EXPECT_EQ(stacked.sizes(), ds.images().sizes());
  // Same multiset of images up to 8-bit quantisation.
  EXPECT_LT((stacked.mean(0) - ds.images().mean(0)).abs().max().item<double>(), 2.0 / 255 + 1e-6);
  fs::remove_all(root);
  EXPECT_THROW(load_image_folder(root, 16), InvalidInput);
}

TEST(Augment, FlipMaskRateAndMirror) {
  auto mask = hflip_mask(20000, 0.3, at::detail::createCPUGenerator(2));
  EXPECT_NEAR(mask.to(torch::kDouble).mean().item<double>(), 0.3, 3 * std::sqrt(0.21 / 20000));
  auto x = torch::arange(2 * 1 * 2 * 3, torch::kFloat).view({2, 1, 2, 3});
  auto all = augment_hflip(x, 1.0);
  EXPECT_TRUE(torch::equal(all, x.flip({3})));
  EXPECT_TRUE(torch::equal(augment_hflip(x, 0.0), x));
}
