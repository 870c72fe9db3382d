#include <gtest/gtest.h>

#include "rmit/error.hpp"
#include "rmit/networks.hpp"

using namespace rmit;

namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, bool bias) {
  return in * out * k * k + (bias ? out : 0);
}

// Counted layer by layer from the architecture description.
std::int64_t expected_generator_params(const GeneratorConfig& g) {
  const auto w = g.base_width, c = g.num_domains, ch = g.image_channels;
  std::int64_t n = conv_params(ch + c, w, g.stem_kernel, false) + 2 * w;
  n += conv_params(w, 2 * w, 4, false) + 2 * 2 * w;
  n += conv_params(2 * w, 4 * w, 4, false) + 2 * 4 * w;
  n += g.num_res_blocks * 2 * (conv_params(4 * w, 4 * w, 3, false) + 2 * 4 * w);
  n += conv_params(4 * w, 2 * w, 4, false) + 2 * 2 * w;
  n += conv_params(2 * w, w, 4, false) + 2 * w;
  n += conv_params(w, ch, g.head_kernel, false);
  if (g.attention_variant) n += conv_params(w, 1, g.head_kernel, false);
  return n;
}

std::int64_t expected_patch_discriminator_params(const DiscriminatorConfig& d) {
  std::int64_t n = 0, in = d.image_channels;
  for (std::int64_t i = 0; i < d.num_down; ++i) {
    const std::int64_t out = d.base_width << i;
    n += conv_params(in, out, 4, true);
    in = out;
  }
  n += conv_params(in, 1, 3, false);
  n += conv_params(in, d.num_domains, d.image_size >> d.num_down, false);
  return n;
}

}  // namespace

TEST(Generator, ParameterCountDesk) {
  const auto cfg = GeneratorConfig::desk(3);
  Generator g(cfg);
  EXPECT_EQ(parameter_count(*g), expected_generator_params(cfg));
  EXPECT_EQ(parameter_count(*g), 237264);
}

TEST(Generator, ParameterCountFullScale) {
  const auto cfg = GeneratorConfig::full_128(5);
  Generator g(cfg);
  EXPECT_EQ(parameter_count(*g), expected_generator_params(cfg));
}

TEST(Generator, ParameterCountAttention) {
  const auto cfg = GeneratorConfig::full_48_attention(7);
  Generator g(cfg);
  EXPECT_EQ(parameter_count(*g), expected_generator_params(cfg));
}

TEST(Generator, OutputShapeAndRange) {
  torch::manual_seed(0);
  Generator g(GeneratorConfig::desk(3));
  auto x = torch::rand({4, 3, 32, 32}) * 2 - 1;
  auto y = torch::tensor({0, 1, 2, 1}, torch::kLong);
  auto out = generate(g, x, y);
  EXPECT_EQ(out.sizes(), x.sizes());
  EXPECT_LE(out.abs().max().item<double>(), 1.0);
}

TEST(Generator, AttentionBlendsInput) {
  torch::manual_seed(1);
  auto cfg = GeneratorConfig::full_48_attention(3);
  cfg.base_width = 4;
  cfg.num_res_blocks = 1;
  Generator g(cfg);
  auto x = torch::rand({2, 1, 48, 48}) * 2 - 1;
  auto y = torch::tensor({2, 0}, torch::kLong);
  auto a = generate_attention(g, x, y);
  EXPECT_TRUE(torch::allclose(a.output, a.attention_mask * a.color_mask + (1 - a.attention_mask) * x));
  EXPECT_GE(a.attention_mask.min().item<double>(), 0.0);
  EXPECT_LE(a.attention_mask.max().item<double>(), 1.0);
  EXPECT_TRUE(torch::equal(g->forward(x, y), a.output));
}

TEST(Generator, AttentionHeadRequired) {
  Generator g(GeneratorConfig::desk(3));
  EXPECT_THROW(g->forward_attention(torch::zeros({1, 3, 32, 32}), torch::zeros({1}, torch::kLong)), LifecycleError);
}

TEST(Generator, RejectsBadConfigAndInputs) {
  auto cfg = GeneratorConfig::desk(3);
  cfg.image_size = 30;
  EXPECT_THROW(cfg.validate(), InvalidSpec);
  cfg = GeneratorConfig::desk(3);
  cfg.stem_kernel = 4;
  EXPECT_THROW(cfg.validate(), InvalidSpec);

  Generator empty{nullptr};
  EXPECT_THROW(generate(empty, torch::zeros({1, 3, 32, 32}), torch::zeros({1}, torch::kLong)), LifecycleError);
  Generator g(GeneratorConfig::desk(3));
  EXPECT_THROW(generate(g, torch::zeros({1, 3, 16, 16}), torch::zeros({1}, torch::kLong)), InvalidInput);
  EXPECT_THROW(generate(g, torch::zeros({1, 3, 32, 32}), torch::full({1}, 3, torch::kLong)), InvalidInput);
}

TEST(ConditionConcat, OneHotPlanes) {
  auto x = torch::zeros({2, 1, 4, 4});
  auto out = condition_concat(x, torch::tensor({2, 0}, torch::kLong), 3);
  ASSERT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 4, 4, 4}));
  EXPECT_EQ(out[0][3].sum().item<double>(), 16.0);
  EXPECT_EQ(out[0][1].sum().item<double>(), 0.0);
  EXPECT_EQ(out[1][1].sum().item<double>(), 16.0);
}

TEST(ConditionConcat, AttributeVectorsCopied) {
  auto x = torch::zeros({1, 1, 2, 2});
  auto out = condition_concat(x, torch::tensor({{1.0f, 0.0f, 1.0f}}), 3);
  EXPECT_EQ(out[0][1].sum().item<double>(), 4.0);
  EXPECT_EQ(out[0][2].sum().item<double>(), 0.0);
  EXPECT_THROW(condition_concat(x, torch::zeros({1, 2}), 3), InvalidInput);
}

TEST(Discriminator, ParameterCountAndShapes) {
  const auto cfg = DiscriminatorConfig::desk(3);
  Discriminator d(cfg);
  EXPECT_EQ(parameter_count(*d), expected_patch_discriminator_params(cfg));
  auto out = discriminate(d, torch::zeros({5, 3, 32, 32}));
  EXPECT_EQ(out.realness.sizes(), (std::vector<std::int64_t>{5, 1, 2, 2}));
  EXPECT_EQ(out.class_logits.sizes(), (std::vector<std::int64_t>{5, 3}));
}

TEST(Discriminator, FullScalePatch) {
  const auto cfg = DiscriminatorConfig::full_128(5);
  Discriminator d(cfg);
  EXPECT_EQ(parameter_count(*d), expected_patch_discriminator_params(cfg));
  d->eval();
  auto out = discriminate(d, torch::zeros({1, 3, 128, 128}));
  EXPECT_EQ(out.realness.sizes(), (std::vector<std::int64_t>{1, 1, 2, 2}));
  EXPECT_EQ(out.class_logits.sizes(), (std::vector<std::int64_t>{1, 5}));
}

TEST(Discriminator, ResidualScalarHeads) {
  auto cfg = DiscriminatorConfig::full_48_resnet(7);
  cfg.base_width = 8;
  Discriminator d(cfg);
  auto out = discriminate(d, torch::zeros({3, 1, 48, 48}));
  EXPECT_EQ(out.realness.sizes(), (std::vector<std::int64_t>{3, 1}));
  EXPECT_EQ(out.class_logits.sizes(), (std::vector<std::int64_t>{3, 7}));
}

TEST(Discriminator, ClassifierOnly) {
  auto cfg = DiscriminatorConfig::desk(3);
  cfg.with_realness = false;
  Discriminator d(cfg);
  auto out = discriminate(d, torch::zeros({2, 3, 32, 32}));
  EXPECT_FALSE(out.realness.defined());
  EXPECT_EQ(out.class_logits.size(1), 3);
  cfg.with_classifier = false;
  EXPECT_THROW(cfg.validate(), InvalidSpec);
}

TEST(Discriminator, DropoutSchedule) {
  auto cfg = DiscriminatorConfig::desk(3);
  EXPECT_EQ(cfg.dropout_at(0), 0.0);
  EXPECT_EQ(cfg.dropout_at(1), 0.2);
  EXPECT_EQ(cfg.dropout_at(4), 0.5);
  cfg.dropout = false;
  EXPECT_EQ(cfg.dropout_at(3), 0.0);
  cfg.image_size = 40;
  EXPECT_THROW(cfg.validate(), InvalidSpec);
}

TEST(EvalClassifier, EmbeddingAndLogits) {
  EvalClassifier e(EvalClassifierConfig{});
  auto x = torch::zeros({6, 3, 32, 32});
  EXPECT_EQ(e->embed(x).sizes(), (std::vector<std::int64_t>{6, 64}));
  EXPECT_EQ(e->forward(x).sizes(), (std::vector<std::int64_t>{6, 3}));
  EXPECT_FALSE(e->trained());
}

TEST(Architecture, TablesHaveInputAndOutputRows) {
  const auto g = architecture_rows(GeneratorConfig::full_128(5));
  ASSERT_FALSE(g.empty());
  EXPECT_NE(g.front().find("Input"), std::string::npos);
  EXPECT_NE(g.back().find("128 x 128 x 3"), std::string::npos);
  const auto d = architecture_rows(DiscriminatorConfig::full_128(5));
  ASSERT_FALSE(d.empty());
  EXPECT_FALSE(architecture_summary(DiscriminatorConfig::desk(3)).empty());
}
