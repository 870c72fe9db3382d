#include "rmit/losses.hpp"

#include <cmath>
#include <sstream>

#include "rmit/error.hpp"

namespace rmit {
namespace F = torch::nn::functional;

std::string_view to_string(GanObjective objective) {
  return objective == GanObjective::vanilla ? "vanilla" : "wgan_gp";
}

GanObjective parse_gan_objective(std::string_view name) {
  if (name == "vanilla") return GanObjective::vanilla;
  if (name == "wgan_gp" || name == "wgan-gp") return GanObjective::wgan_gp;
  throw InvalidSpec("unknown GAN objective '" + std::string(name) + "'");
}

std::string_view to_string(RelabelMode mode) { return mode == RelabelMode::sample ? "sample" : "argmax"; }

RelabelMode parse_relabel_mode(std::string_view name) {
  if (name == "sample") return RelabelMode::sample;
  if (name == "argmax") return RelabelMode::argmax;
  throw InvalidSpec("unknown relabel mode '" + std::string(name) + "'");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidSpec("mixture rate alpha must lie in [0, 1]");
  if (!(lambda_cls >= 0.0) || !(lambda_cyc >= 0.0) || !(lambda_id >= 0.0) || !(gp_weight >= 0.0)) {
    throw InvalidSpec("loss weights must be nonnegative");
  }
}

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::stargan:
      return "StarGAN";
    case Variant::stargan_recyc:
      return "StarGAN_recyc";
    case Variant::rmit:
      return "RMIT";
    case Variant::rmit_cyc_vcyc:
      return "RMIT_cyc-vcyc";
    case Variant::rmit_recyc_vcyc:
      return "RMIT_recyc-vcyc";
    case Variant::rmit_adv2:
      return "RMIT_adv2";
  }
  return "StarGAN";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (name == to_string(v)) return v;
  }
  throw InvalidSpec("unknown model variant '" + std::string(name) + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants = {Variant::stargan,       Variant::stargan_recyc,
                                                Variant::rmit,          Variant::rmit_cyc_vcyc,
                                                Variant::rmit_recyc_vcyc, Variant::rmit_adv2};
  return variants;
}

namespace {

void require_batch(const torch::Tensor& x) {
  if (!x.defined() || x.dim() == 0 || x.size(0) == 0) throw InvalidInput("empty batch");
}

void require_labels(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
  if (!y.defined() || y.dim() < 1 || y.size(0) != x.size(0)) {
    throw InvalidInput(std::string(what) + " must provide one label per image");
  }
}

torch::Tensor vanilla_log_d(const torch::Tensor& scores) { return -F::softplus(-scores).mean(); }
torch::Tensor vanilla_log_one_minus_d(const torch::Tensor& scores) { return -F::softplus(scores).mean(); }

torch::Tensor d_term_from_scores(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                                 GanObjective objective) {
  if (objective == GanObjective::vanilla) return vanilla_log_d(real_scores) + vanilla_log_one_minus_d(fake_scores);
  return real_scores.mean() - fake_scores.mean();
}

torch::Tensor g_term_from_scores(const torch::Tensor& fake_scores, GanObjective objective) {
  if (objective == GanObjective::vanilla) return vanilla_log_one_minus_d(fake_scores);
  return -fake_scores.mean();
}

}  // namespace

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& interpolation) {
  require_batch(real);
  if (real.sizes() != fake.sizes()) throw InvalidInput("gradient penalty needs matching real/fake shapes");
  const auto batch = real.size(0);
  auto e = interpolation.defined() ? interpolation.to(real.dtype()) : torch::rand({batch}, real.options());
  if (e.numel() != batch) throw InvalidInput("one interpolation weight per sample expected");
  std::vector<std::int64_t> shape(static_cast<std::size_t>(real.dim()), 1);
  shape[0] = batch;
  e = e.view(shape);
  auto xhat = (e * real.detach() + (1 - e) * fake.detach()).requires_grad_(true);
  auto scores = critic(xhat);
  auto grad = torch::autograd::grad({scores.sum()}, {xhat}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
  auto norms = grad.flatten(1).norm(2, 1);
  return (norms - 1).pow(2).mean();
}

torch::Tensor adv_d_term(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                         GanObjective objective, double gp_weight, torch::Tensor* penalty,
                         const torch::Tensor& interpolation) {
  require_batch(real);
  require_batch(fake);
  auto term = d_term_from_scores(critic(real), critic(fake), objective);
  if (objective == GanObjective::wgan_gp) {
    auto gp = gradient_penalty(critic, real, fake, interpolation);
    if (penalty) *penalty = gp;
    term = term - gp_weight * gp;
  }
  return term;
}

torch::Tensor adv_g_term(const Critic& critic, const torch::Tensor& fake, GanObjective objective) {
  require_batch(fake);
  return g_term_from_scores(critic(fake), objective);
}

AdversarialTerms adv_loss(const Critic& critic, const Translator& generator, const torch::Tensor& x,
                          const torch::Tensor& y_prime, GanObjective objective, double gp_weight,
                          const torch::Tensor& interpolation) {
  require_batch(x);
  require_labels(x, y_prime, "y'");
  auto fake = generator(x, y_prime);
  auto fake_scores = critic(fake);
  AdversarialTerms out;
  out.d_term = d_term_from_scores(critic(x), fake_scores, objective);
  out.g_term = g_term_from_scores(fake_scores, objective);
  if (objective == GanObjective::wgan_gp) {
    out.penalty = gradient_penalty(critic, x, fake, interpolation);
    out.d_term = out.d_term - gp_weight * out.penalty;
  }
  return out;
}

torch::Tensor cross_entropy_checked(const torch::Tensor& logits, const torch::Tensor& labels) {
  require_batch(logits);
  require_labels(logits, labels, "classification");
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericalError("non-finite classifier logits");
  return F::cross_entropy(logits, labels);
}

torch::Tensor cls_real_loss(const Classifier& classifier, const torch::Tensor& x, const torch::Tensor& y_noisy) {
  require_batch(x);
  return cross_entropy_checked(classifier(x), y_noisy);
}

torch::Tensor cls_fake_loss(const Classifier& classifier, const Translator& generator, const torch::Tensor& x,
                            const torch::Tensor& y_prime) {
  require_batch(x);
  return cross_entropy_checked(classifier(generator(x, y_prime)), y_prime);
}

torch::Tensor reconstruction_l1(const Translator& generator, const torch::Tensor& target,
                                const torch::Tensor& translated, const torch::Tensor& y_back) {
  require_batch(target);
  require_labels(target, y_back, "reconstruction");
  auto reconstructed = generator(translated, y_back);
  if (reconstructed.sizes() != target.sizes()) throw InvalidInput("reconstruction shape differs from its target");
  return (target - reconstructed).abs().mean();
}

torch::Tensor cycle_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_noisy,
                         const torch::Tensor& y_prime) {
  require_batch(x);
  require_labels(x, y_prime, "y'");
  return reconstruction_l1(generator, x, generator(x, y_prime), y_noisy);
}

torch::Tensor virtual_cycle_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_prime,
                                 const torch::Tensor& y_dprime) {
  require_batch(x);
  require_labels(x, y_prime, "y'");
  require_labels(x, y_dprime, "y''");
  auto first = generator(x, y_prime);
  return reconstruction_l1(generator, first, generator(first, y_dprime), y_prime);
}

torch::Tensor relabel(const Classifier& classifier, const torch::Tensor& x, RelabelMode mode,
                      std::optional<torch::Generator> generator) {
  torch::NoGradGuard no_grad;
  auto logits = classifier(x);
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericalError("non-finite classifier logits");
  if (mode == RelabelMode::argmax) return logits.argmax(1);
  auto probs = torch::softmax(logits.to(torch::kDouble), 1);
  return torch::multinomial(probs, 1, false, generator).squeeze(1);
}

torch::Tensor relabeled_cycle_loss(const Translator& generator, const Classifier& classifier, const torch::Tensor& x,
                                   const torch::Tensor& y_prime, RelabelMode mode,
                                   std::optional<torch::Generator> rng) {
  require_batch(x);
  require_labels(x, y_prime, "y'");
  auto y = relabel(classifier, x, mode, std::move(rng));
  return reconstruction_l1(generator, x, generator(x, y_prime), y);
}

torch::Tensor mixed_cycle_loss(CycleBase base, double alpha, const Translator& generator,
                               const Classifier& classifier, const CycleInputs& in, RelabelMode mode,
                               std::optional<torch::Generator> rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidSpec("mixture rate alpha must lie in [0, 1]");
  torch::Tensor base_term, vcyc_term;
  if (alpha > 0.0) {
    base_term = base == CycleBase::cyc ? cycle_loss(generator, in.x, in.y_noisy, in.y_prime)
                                       : relabeled_cycle_loss(generator, classifier, in.x, in.y_prime, mode,
                                                              std::move(rng));
  }
  if (alpha < 1.0) vcyc_term = virtual_cycle_loss(generator, in.x, in.y_prime, in.y_dprime);
  return mix(alpha, base_term, vcyc_term);
}

AdversarialTerms second_adv_loss(const Critic& critic, const Translator& generator, const torch::Tensor& x,
                                 const torch::Tensor& y_prime, const torch::Tensor& y_dprime,
                                 GanObjective objective, double gp_weight, const torch::Tensor& interpolation) {
  require_batch(x);
  require_labels(x, y_prime, "y'");
  require_labels(x, y_dprime, "y''");
  auto twice = generator(generator(x, y_prime), y_dprime);
  auto fake_scores = critic(twice);
  AdversarialTerms out;
  out.d_term = d_term_from_scores(critic(x), fake_scores, objective);
  out.g_term = g_term_from_scores(fake_scores, objective);
  if (objective == GanObjective::wgan_gp) {
    out.penalty = gradient_penalty(critic, x, twice, interpolation);
    out.d_term = out.d_term - gp_weight * out.penalty;
  }
  return out;
}

torch::Tensor identity_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_self) {
  require_batch(x);
  require_labels(x, y_self, "identity");
  auto out = generator(x, y_self);
  if (out.sizes() != x.sizes()) throw InvalidInput("identity mapping changed the image shape");
  return (out - x).abs().mean();
}

bool uses_second_discriminator(const LossWeights& weights, Variant variant) {
  return variant == Variant::rmit_adv2 || weights.use_adv2;
}

TermUsage required_terms(const LossWeights& weights, Variant variant) {
  TermUsage u;
  if (weights.lambda_cyc != 0.0) {
    switch (variant) {
      case Variant::stargan:
        u.cyc = true;
        break;
      case Variant::stargan_recyc:
        u.recyc = true;
        break;
      case Variant::rmit:
      case Variant::rmit_adv2:
        u.vcyc = true;
        break;
      case Variant::rmit_cyc_vcyc:
        u.cyc = weights.alpha > 0.0;
        u.vcyc = weights.alpha < 1.0;
        break;
      case Variant::rmit_recyc_vcyc:
        u.recyc = weights.alpha > 0.0;
        u.vcyc = weights.alpha < 1.0;
        break;
    }
  }
  u.adv2 = uses_second_discriminator(weights, variant);
  u.id = weights.lambda_id != 0.0;
  return u;
}

void LossBundle::set(std::string name, double value) {
  for (auto& [n, v] : entries_) {
    if (n == name) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(std::move(name), value);
}

void LossBundle::set(std::string name, const torch::Tensor& value) {
  set(std::move(name), value.detach().to(torch::kDouble).item<double>());
}

std::optional<double> LossBundle::get(std::string_view name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  return std::nullopt;
}

bool LossBundle::all_finite() const {
  for (const auto& [n, v] : entries_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

nlohmann::json LossBundle::to_json(std::int64_t step) const {
  nlohmann::json row;
  row["step"] = step;
  for (const auto& [n, v] : entries_) row[n] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v));
  return row;
}

std::string LossBundle::describe() const {
  std::ostringstream os;
  for (const auto& [n, v] : entries_) os << n << '=' << v << ' ';
  return os.str();
}

}  // namespace rmit
