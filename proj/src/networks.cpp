#include "rmit/networks.hpp"

#include <sstream>

#include "rmit/error.hpp"

namespace rmit {
namespace nn = torch::nn;

namespace {

constexpr double kLeakySlope = 0.01;

bool is_power_of_two_multiple(std::int64_t size, std::int64_t stages) {
  return stages >= 0 && size > 0 && (size % (std::int64_t{1} << stages)) == 0;
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad,
                bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

nn::InstanceNorm2d instance_norm(std::int64_t channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).track_running_stats(false));
}

std::string dims(std::int64_t h, std::int64_t w, std::int64_t c) {
  std::ostringstream os;
  os << h << " x " << w << " x " << c;
  return os.str();
}

}  // namespace

void GeneratorConfig::validate() const {
  if (image_size <= 0 || image_size % 4 != 0) {
    throw InvalidSpec("generator image_size must be a positive multiple of 4");
  }
  if (image_channels < 1 || num_domains < 2 || base_width < 1 || num_res_blocks < 0) {
    throw InvalidSpec("generator needs channels >= 1, domains >= 2, base_width >= 1, res blocks >= 0");
  }
  if (stem_kernel < 1 || stem_kernel % 2 == 0 || head_kernel < 1 || head_kernel % 2 == 0) {
    throw InvalidSpec("generator stem/head kernels must be odd");
  }
}

GeneratorConfig GeneratorConfig::desk(std::int64_t num_domains) {
  GeneratorConfig c;
  c.num_domains = num_domains;
  return c;
}

GeneratorConfig GeneratorConfig::full_128(std::int64_t num_domains) {
  return {.image_size = 128,
          .image_channels = 3,
          .num_domains = num_domains,
          .base_width = 64,
          .num_res_blocks = 6,
          .attention_variant = false,
          .stem_kernel = 7,
          .head_kernel = 7};
}

GeneratorConfig GeneratorConfig::full_48_attention(std::int64_t num_domains) {
  return {.image_size = 48,
          .image_channels = 1,
          .num_domains = num_domains,
          .base_width = 64,
          .num_res_blocks = 6,
          .attention_variant = true,
          .stem_kernel = 3,
          .head_kernel = 3};
}

void DiscriminatorConfig::validate() const {
  if (image_channels < 1 || num_domains < 2 || base_width < 1 || num_down < 1) {
    throw InvalidSpec("discriminator needs channels >= 1, domains >= 2, base_width >= 1, num_down >= 1");
  }
  if (!is_power_of_two_multiple(image_size, num_down)) {
    throw InvalidSpec("discriminator image_size must be divisible by 2^num_down");
  }
  if (!with_realness && !with_classifier) {
    throw InvalidSpec("discriminator needs at least one head");
  }
}

double DiscriminatorConfig::dropout_at(std::int64_t depth) const {
  if (!dropout) return 0.0;
  // Rates by depth: patch stack 0/0.2/0.2/0.2/0.5/0.5, residual stack 0/0.2/0.5/0.5.
  static constexpr double patch[] = {0.0, 0.2, 0.2, 0.2, 0.5, 0.5};
  static constexpr double resnet[] = {0.0, 0.2, 0.5, 0.5};
  if (kind == DiscriminatorKind::patch) return patch[std::min<std::int64_t>(depth, 5)];
  return resnet[std::min<std::int64_t>(depth, 3)];
}

DiscriminatorConfig DiscriminatorConfig::desk(std::int64_t num_domains) {
  DiscriminatorConfig c;
  c.num_domains = num_domains;
  return c;
}

DiscriminatorConfig DiscriminatorConfig::full_128(std::int64_t num_domains) {
  DiscriminatorConfig c;
  c.image_size = 128;
  c.num_domains = num_domains;
  c.base_width = 64;
  c.num_down = 6;
  return c;
}

DiscriminatorConfig DiscriminatorConfig::full_48_resnet(std::int64_t num_domains) {
  DiscriminatorConfig c;
  c.kind = DiscriminatorKind::resnet;
  c.image_size = 48;
  c.image_channels = 1;
  c.num_domains = num_domains;
  c.base_width = 64;
  c.num_down = 4;
  return c;
}

torch::Tensor condition_concat(const torch::Tensor& x, const torch::Tensor& y, std::int64_t num_domains) {
  if (x.dim() != 4) throw InvalidInput("condition_concat expects x as [B, C, H, W]");
  const auto batch = x.size(0);
  torch::Tensor planes;
  if (y.scalar_type() == torch::kLong) {
    if (y.dim() != 1 || y.size(0) != batch) throw InvalidInput("domain labels must be [B]");
    if (batch > 0 && (y.min().item<std::int64_t>() < 0 || y.max().item<std::int64_t>() >= num_domains)) {
      throw InvalidInput("domain label outside [0, c)");
    }
    planes = torch::one_hot(y, num_domains).to(x.dtype());
  } else {
    if (y.dim() != 2 || y.size(0) != batch || y.size(1) != num_domains) {
      throw InvalidInput("attribute labels must be [B, c]");
    }
    planes = y.to(x.dtype());
  }
  planes = planes.view({batch, num_domains, 1, 1}).expand({batch, num_domains, x.size(2), x.size(3)});
  return torch::cat({x, planes}, 1);
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels) {
  body_ = register_module("body", nn::Sequential(conv(channels, channels, 3, 1, 1, false), instance_norm(channels),
                                                 nn::ReLU(), conv(channels, channels, 3, 1, 1, false),
                                                 instance_norm(channels)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(config) {
  config_.validate();
  const auto w = config_.base_width;
  const auto in = config_.image_channels + config_.num_domains;
  const auto k = config_.stem_kernel;
  nn::Sequential trunk(conv(in, w, k, 1, k / 2, false), instance_norm(w), nn::ReLU());
  trunk->push_back(conv(w, 2 * w, 4, 2, 1, false));
  trunk->push_back(instance_norm(2 * w));
  trunk->push_back(nn::ReLU());
  trunk->push_back(conv(2 * w, 4 * w, 4, 2, 1, false));
  trunk->push_back(instance_norm(4 * w));
  trunk->push_back(nn::ReLU());
  for (std::int64_t i = 0; i < config_.num_res_blocks; ++i) trunk->push_back(ResidualBlock(4 * w));
  trunk->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(4 * w, 2 * w, 4).stride(2).padding(1).bias(false)));
  trunk->push_back(instance_norm(2 * w));
  trunk->push_back(nn::ReLU());
  trunk->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * w, w, 4).stride(2).padding(1).bias(false)));
  trunk->push_back(instance_norm(w));
  trunk->push_back(nn::ReLU());
  trunk_ = register_module("trunk", trunk);

  const auto hk = config_.head_kernel;
  head_ = register_module("head", conv(w, config_.image_channels, hk, 1, hk / 2, false));
  if (config_.attention_variant) {
    mask_head_ = register_module("mask_head", conv(w, 1, hk, 1, hk / 2, false));
  }
}

AttentionOutput GeneratorImpl::forward_attention(const torch::Tensor& x, const torch::Tensor& y) {
  if (!config_.attention_variant) throw LifecycleError("generator was not built with the attention head");
  auto h = trunk_->forward(condition_concat(x, y, config_.num_domains));
  AttentionOutput out;
  out.color_mask = torch::tanh(head_->forward(h));
  out.attention_mask = torch::sigmoid(mask_head_->forward(h));
  out.output = out.attention_mask * out.color_mask + (1 - out.attention_mask) * x;
  return out;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& y) {
  if (config_.attention_variant) return forward_attention(x, y).output;
  auto h = trunk_->forward(condition_concat(x, y, config_.num_domains));
  return torch::tanh(head_->forward(h));
}

ResidualDownBlockImpl::ResidualDownBlockImpl(std::int64_t in_channels, std::int64_t out_channels, bool preactivate)
    : preactivate_(preactivate) {
  conv1_ = register_module("conv1", conv(in_channels, out_channels, 3, 1, 1, true));
  conv2_ = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1, true));
  shortcut_ = register_module("shortcut", conv(in_channels, out_channels, 1, 1, 0, true));
}

torch::Tensor ResidualDownBlockImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  const auto lrelu = F::LeakyReLUFuncOptions().negative_slope(kLeakySlope);
  auto h = preactivate_ ? F::leaky_relu(x, lrelu) : x;
  h = conv2_->forward(F::leaky_relu(conv1_->forward(h), lrelu));
  h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
  auto skip = preactivate_ ? F::avg_pool2d(shortcut_->forward(x), F::AvgPool2dFuncOptions(2))
                           : shortcut_->forward(F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)));
  return h + skip;
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  nn::Sequential trunk;
  std::int64_t channels = config_.image_channels;
  for (std::int64_t i = 0; i < config_.num_down; ++i) {
    const std::int64_t out = config_.base_width << i;
    if (config_.kind == DiscriminatorKind::patch) {
      trunk->push_back(conv(channels, out, 4, 2, 1, true));
      trunk->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
    } else {
      trunk->push_back(ResidualDownBlock(channels, out, i > 0));
    }
    if (const double p = config_.dropout_at(i); p > 0.0) trunk->push_back(nn::Dropout(p));
    channels = out;
  }
  if (config_.kind == DiscriminatorKind::resnet) {
    trunk->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
    trunk->push_back(nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
  }
  trunk_ = register_module("trunk", trunk);

  const bool patch = config_.kind == DiscriminatorKind::patch;
  if (config_.with_realness) {
    realness_head_ = register_module("realness", patch ? conv(channels, 1, 3, 1, 1, false)
                                                       : conv(channels, 1, 1, 1, 0, true));
  }
  if (config_.with_classifier) {
    const auto k = patch ? config_.final_map_size() : 1;
    class_head_ = register_module("classifier", conv(channels, config_.num_domains, k, 1, 0, !patch));
  }
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
  auto h = trunk_->forward(x);
  DiscriminatorOutput out;
  if (realness_head_) {
    out.realness = realness_head_->forward(h);
    if (config_.kind == DiscriminatorKind::resnet) out.realness = out.realness.flatten(1);
  }
  if (class_head_) out.class_logits = class_head_->forward(h).flatten(1);
  return out;
}

void EvalClassifierConfig::validate() const {
  if (image_size <= 0 || image_size % 4 != 0 || image_channels < 1 || num_domains < 2 || width < 1 ||
      embedding_dim < 1) {
    throw InvalidSpec("invalid evaluation classifier configuration");
  }
}

EvalClassifierImpl::EvalClassifierImpl(EvalClassifierConfig config) : config_(config) {
  config_.validate();
  const auto w = config_.width;
  const auto spatial = config_.image_size / 4;
  features_ = register_module(
      "features",
      nn::Sequential(conv(config_.image_channels, w, 3, 1, 1, true), nn::ReLU(),
                     nn::MaxPool2d(nn::MaxPool2dOptions(2)), conv(w, 2 * w, 3, 1, 1, true), nn::ReLU(),
                     nn::MaxPool2d(nn::MaxPool2dOptions(2)), nn::Flatten(),
                     nn::Linear(2 * w * spatial * spatial, config_.embedding_dim), nn::ReLU()));
  head_ = register_module("head", nn::Linear(config_.embedding_dim, config_.num_domains));
}

torch::Tensor EvalClassifierImpl::embed(const torch::Tensor& x) { return features_->forward(x); }

torch::Tensor EvalClassifierImpl::forward(const torch::Tensor& x) { return head_->forward(embed(x)); }

namespace {

void check_image(const torch::Tensor& x, std::int64_t channels, std::int64_t size) {
  if (x.dim() != 4 || x.size(1) != channels || x.size(2) != size || x.size(3) != size) {
    std::ostringstream os;
    os << "expected images [B, " << channels << ", " << size << ", " << size << "], got " << x.sizes();
    throw InvalidInput(os.str());
  }
}

}  // namespace

torch::Tensor generate(Generator& generator, const torch::Tensor& x, const torch::Tensor& y) {
  if (generator.is_empty()) throw LifecycleError("generator has not been built");
  const auto& cfg = generator->config();
  check_image(x, cfg.image_channels, cfg.image_size);
  return generator->forward(x, y);
}

AttentionOutput generate_attention(Generator& generator, const torch::Tensor& x, const torch::Tensor& y) {
  if (generator.is_empty()) throw LifecycleError("generator has not been built");
  const auto& cfg = generator->config();
  check_image(x, cfg.image_channels, cfg.image_size);
  return generator->forward_attention(x, y);
}

DiscriminatorOutput discriminate(Discriminator& discriminator, const torch::Tensor& x) {
  if (discriminator.is_empty()) throw LifecycleError("discriminator has not been built");
  const auto& cfg = discriminator->config();
  check_image(x, cfg.image_channels, cfg.image_size);
  return discriminator->forward(x);
}

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::vector<std::string> architecture_rows(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto s = cfg.image_size;
  const auto ch = cfg.image_channels;
  const auto w = cfg.base_width;
  const auto k = cfg.stem_kernel;
  const auto hk = cfg.head_kernel;
  std::vector<std::string> rows;
  auto add = [&rows](const std::string& layer, const std::string& shape) { rows.push_back(layer + " | " + shape); };
  {
    std::ostringstream in;
    in << "Input: x in R^{" << dims(s, s, ch) << "} and y in {1, ..., c}";
    std::ostringstream shape;
    shape << s << " x " << s << " x (" << ch << " + c)";
    add(in.str(), shape.str());
  }
  auto conv_row = [](std::int64_t kk, std::int64_t stride, const char* op, std::int64_t out, const char* tail) {
    std::ostringstream os;
    os << kk << " x " << kk << ", stride=" << stride << ' ' << op << ' ' << out << tail;
    return os.str();
  };
  add(conv_row(k, 1, "Conv", w, ", IN, ReLU"), dims(s, s, w));
  add(conv_row(4, 2, "Conv", 2 * w, ", IN, ReLU"), dims(s / 2, s / 2, 2 * w));
  add(conv_row(4, 2, "Conv", 4 * w, ", IN, ReLU"), dims(s / 4, s / 4, 4 * w));
  for (std::int64_t i = 0; i < cfg.num_res_blocks; ++i) add("[3 x 3] x 2 ResBlock", dims(s / 4, s / 4, 4 * w));
  add(conv_row(4, 2, "Deconv", 2 * w, ", IN, ReLU"), dims(s / 2, s / 2, 2 * w));
  add(conv_row(4, 2, "Deconv", w, ", IN, ReLU"), dims(s, s, w));
  if (cfg.attention_variant) {
    add(conv_row(hk, 1, "Conv", ch, ", Tanh -> x_color"), dims(s, s, ch));
    add(conv_row(hk, 1, "Conv", 1, ", Sigmoid -> m"), dims(s, s, 1));
    add("m * x_color + (1 - m) * x", dims(s, s, ch));
  } else {
    add(conv_row(hk, 1, "Conv", ch, ", Tanh -> x'"), dims(s, s, ch));
  }
  return rows;
}

std::vector<std::string> architecture_rows(const DiscriminatorConfig& cfg) {
  cfg.validate();
  std::vector<std::string> rows;
  auto add = [&rows](const std::string& layer, const std::string& shape) { rows.push_back(layer + " | " + shape); };
  const auto s = cfg.image_size;
  {
    std::ostringstream in;
    in << "Input: x in R^{" << dims(s, s, cfg.image_channels) << "}";
    add(in.str(), dims(s, s, cfg.image_channels));
  }
  std::int64_t size = s;
  std::int64_t channels = cfg.image_channels;
  for (std::int64_t i = 0; i < cfg.num_down; ++i) {
    size /= 2;
    channels = cfg.base_width << i;
    std::ostringstream os;
    if (cfg.kind == DiscriminatorKind::patch) {
      os << "4 x 4, stride=2 Conv " << channels << ", LReLU";
    } else {
      os << "[3 x 3] x 2 ResBlock down";
    }
    if (const double p = cfg.dropout_at(i); p > 0.0) os << ", " << p << " Dropout";
    add(os.str(), dims(size, size, channels));
  }
  if (cfg.kind == DiscriminatorKind::patch) {
    if (cfg.with_realness) add("3 x 3, stride=1 Conv 1 for D", dims(size, size, 1));
    if (cfg.with_classifier) {
      std::ostringstream os;
      os << size << " x " << size << ", stride=1 Conv c for C";
      add(os.str(), "1 x 1 x c");
    }
  } else {
    add("Global mean pooling", dims(1, 1, channels));
    if (cfg.with_realness) add("1 x 1, stride=1 Conv 1 for D", dims(1, 1, 1));
    if (cfg.with_classifier) add("1 x 1, stride=1 Conv c for C", "1 x 1 x c");
  }
  return rows;
}

namespace {
std::string join_rows(const std::vector<std::string>& rows) {
  std::string out = "Layer | Output shape\n";
  for (const auto& r : rows) out += r + '\n';
  return out;
}
}  // namespace

std::string architecture_summary(const GeneratorConfig& config) { return join_rows(architecture_rows(config)); }
std::string architecture_summary(const DiscriminatorConfig& config) { return join_rows(architecture_rows(config)); }

}  // namespace rmit
