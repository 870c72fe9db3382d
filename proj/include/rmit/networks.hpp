#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace rmit {

/// Residual encoder-decoder translator. The 128px configuration reproduces
/// the StarGAN generator; desk scale keeps the stride/block pattern.
struct GeneratorConfig {
  std::int64_t image_size = 32;
  std::int64_t image_channels = 3;
  std::int64_t num_domains = 3;
  std::int64_t base_width = 16;
  std::int64_t num_res_blocks = 2;
  bool attention_variant = false;
  std::int64_t stem_kernel = 7;  // first and last convolution
  std::int64_t head_kernel = 7;

  void validate() const;

  static GeneratorConfig desk(std::int64_t num_domains = 3);
  // 128x128 RGB, 64 base channels, six residual blocks, 7x7 stem and head.
  static GeneratorConfig full_128(std::int64_t num_domains);
  // 48x48 grayscale with 3x3 stem/head and the attention-mask head.
  static GeneratorConfig full_48_attention(std::int64_t num_domains);
};

enum class DiscriminatorKind { patch, resnet };

struct DiscriminatorConfig {
  DiscriminatorKind kind = DiscriminatorKind::patch;
  std::int64_t image_size = 32;
  std::int64_t image_channels = 3;
  std::int64_t num_domains = 3;
  std::int64_t base_width = 16;
  std::int64_t num_down = 4;  // stride-2 stages; final map is image_size / 2^num_down
  bool with_realness = true;
  bool with_classifier = true;
  bool dropout = true;

  void validate() const;
  std::int64_t final_map_size() const { return image_size >> num_down; }
  // Dropout rate applied after down-sampling stage `depth` (0-based).
  double dropout_at(std::int64_t depth) const;

  static DiscriminatorConfig desk(std::int64_t num_domains = 3);
  static DiscriminatorConfig full_128(std::int64_t num_domains);
  static DiscriminatorConfig full_48_resnet(std::int64_t num_domains);
};

/// Broadcasts y onto x's channel axis as constant planes. y is either an
/// int64 [B] domain index (one-hot planes) or a floating [B, c] attribute
/// vector (copied as-is).
torch::Tensor condition_concat(const torch::Tensor& x, const torch::Tensor& y, std::int64_t num_domains);

struct AttentionOutput {
  torch::Tensor color_mask;      // tanh, [-1, 1]
  torch::Tensor attention_mask;  // sigmoid, [0, 1]
  torch::Tensor output;          // mask * color + (1 - mask) * input
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorConfig config);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& y);
  // Only valid for attention_variant; exposes both masks.
  AttentionOutput forward_attention(const torch::Tensor& x, const torch::Tensor& y);

  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Conv2d mask_head_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
  torch::Tensor realness;      // [B, 1, h, w] patch map or [B, 1] scalar; undefined without a D head
  torch::Tensor class_logits;  // [B, c]; undefined without a C head
};

class ResidualDownBlockImpl : public torch::nn::Module {
 public:
  ResidualDownBlockImpl(std::int64_t in_channels, std::int64_t out_channels, bool preactivate);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool preactivate_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
};
TORCH_MODULE(ResidualDownBlock);

/// Shared trunk with a realness head (D) and a domain classifier head (C).
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(DiscriminatorConfig config);

  DiscriminatorOutput forward(const torch::Tensor& x);
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d realness_head_{nullptr};
  torch::nn::Conv2d class_head_{nullptr};
};
TORCH_MODULE(Discriminator);

struct EvalClassifierConfig {
  std::int64_t image_size = 32;
  std::int64_t image_channels = 3;
  std::int64_t num_domains = 3;
  std::int64_t width = 16;
  std::int64_t embedding_dim = 64;
  void validate() const;
};

/// Two conv blocks and a linear head. The penultimate activations are the
/// embedding space for FID/KID; the softmax feeds the inception score.
class EvalClassifierImpl : public torch::nn::Module {
 public:
  explicit EvalClassifierImpl(EvalClassifierConfig config);

  torch::Tensor embed(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);  // logits
  const EvalClassifierConfig& config() const { return config_; }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  EvalClassifierConfig config_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
  bool trained_ = false;
};
TORCH_MODULE(EvalClassifier);

// Checked entry points. Throw LifecycleError on an empty module holder and
// InvalidInput on shape mismatch.
torch::Tensor generate(Generator& generator, const torch::Tensor& x, const torch::Tensor& y);
AttentionOutput generate_attention(Generator& generator, const torch::Tensor& x, const torch::Tensor& y);
DiscriminatorOutput discriminate(Discriminator& discriminator, const torch::Tensor& x);

std::int64_t parameter_count(const torch::nn::Module& module);

// Layer-by-layer text table in the "layer | output shape" layout, derived
// from the configuration alone.
std::vector<std::string> architecture_rows(const GeneratorConfig& config);
std::vector<std::string> architecture_rows(const DiscriminatorConfig& config);
std::string architecture_summary(const GeneratorConfig& config);
std::string architecture_summary(const DiscriminatorConfig& config);

}  // namespace rmit
