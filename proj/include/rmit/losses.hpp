#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace rmit {

// Objectives are written against callables so that trained networks, frozen
// snapshots and analytic stubs plug in the same way.
using Translator = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& y)>;
using Critic = std::function<torch::Tensor(const torch::Tensor& x)>;      // raw realness scores
using Classifier = std::function<torch::Tensor(const torch::Tensor& x)>;  // class logits

enum class GanObjective { vanilla, wgan_gp };
enum class RelabelMode { sample, argmax };
enum class CycleBase { cyc, recyc };

std::string_view to_string(GanObjective objective);
GanObjective parse_gan_objective(std::string_view name);
std::string_view to_string(RelabelMode mode);
RelabelMode parse_relabel_mode(std::string_view name);

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_cyc = 10.0;
  double alpha = 0.5;
  double lambda_id = 0.0;
  GanObjective gan_objective = GanObjective::wgan_gp;
  double gp_weight = 10.0;
  bool use_adv2 = false;

  void validate() const;  // InvalidSpec
};

/// The six compared models; they differ in the generator's cycle term and,
/// for rmit_adv2, the extra discriminator on twice-converted images.
enum class Variant { stargan, stargan_recyc, rmit, rmit_cyc_vcyc, rmit_recyc_vcyc, rmit_adv2 };

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);  // InvalidSpec on unknown names
const std::vector<Variant>& all_variants();

struct AdversarialTerms {
  torch::Tensor d_term;   // value the discriminator maximizes
  torch::Tensor g_term;   // value the generator minimizes
  torch::Tensor penalty;  // gradient penalty (wgan_gp only), already inside d_term
};

// Mean realness over batch and any patch grid. For vanilla the scores are
// logits and D(x) = sigmoid(score).
torch::Tensor adv_d_term(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                         GanObjective objective, double gp_weight, torch::Tensor* penalty = nullptr,
                         const torch::Tensor& interpolation = {});
torch::Tensor adv_g_term(const Critic& critic, const torch::Tensor& fake, GanObjective objective);

// mean((||grad_xhat critic(xhat)||_2 - 1)^2) on xhat = e*real + (1-e)*fake.
// `interpolation` is e per sample ([B]); drawn uniformly when undefined.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& interpolation = {});

AdversarialTerms adv_loss(const Critic& critic, const Translator& generator, const torch::Tensor& x,
                          const torch::Tensor& y_prime, GanObjective objective, double gp_weight = 10.0,
                          const torch::Tensor& interpolation = {});

// Mean -log C(y|x). Throws NumericalError on non-finite logits.
torch::Tensor cross_entropy_checked(const torch::Tensor& logits, const torch::Tensor& labels);
torch::Tensor cls_real_loss(const Classifier& classifier, const torch::Tensor& x, const torch::Tensor& y_noisy);
torch::Tensor cls_fake_loss(const Classifier& classifier, const Translator& generator, const torch::Tensor& x,
                            const torch::Tensor& y_prime);

// Mean |target - G(translated, y_back)| over batch, channels and pixels.
torch::Tensor reconstruction_l1(const Translator& generator, const torch::Tensor& target,
                                const torch::Tensor& translated, const torch::Tensor& y_back);

torch::Tensor cycle_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_noisy,
                         const torch::Tensor& y_prime);
torch::Tensor virtual_cycle_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_prime,
                                 const torch::Tensor& y_dprime);

// Reconstruction labels from the classifier: one draw per image from
// softmax(logits) in sample mode, the argmax otherwise. No gradient.
torch::Tensor relabel(const Classifier& classifier, const torch::Tensor& x, RelabelMode mode,
                      std::optional<torch::Generator> generator = std::nullopt);
torch::Tensor relabeled_cycle_loss(const Translator& generator, const Classifier& classifier, const torch::Tensor& x,
                                   const torch::Tensor& y_prime, RelabelMode mode,
                                   std::optional<torch::Generator> rng = std::nullopt);

// alpha * base + (1 - alpha) * vcyc; endpoints return the pure term.
template <class Scalar>
Scalar mix(double alpha, const Scalar& base, const Scalar& vcyc);

struct CycleInputs {
  torch::Tensor x;
  torch::Tensor y_noisy;  // needed for base=cyc
  torch::Tensor y_prime;
  torch::Tensor y_dprime;
};
torch::Tensor mixed_cycle_loss(CycleBase base, double alpha, const Translator& generator,
                               const Classifier& classifier, const CycleInputs& in,
                               RelabelMode mode = RelabelMode::sample,
                               std::optional<torch::Generator> rng = std::nullopt);

// Adversarial loss on the twice-converted image G(G(x, y'), y'').
AdversarialTerms second_adv_loss(const Critic& critic, const Translator& generator, const torch::Tensor& x,
                                 const torch::Tensor& y_prime, const torch::Tensor& y_dprime,
                                 GanObjective objective, double gp_weight = 10.0,
                                 const torch::Tensor& interpolation = {});

// Mean |G(x, y_self) - x|.
torch::Tensor identity_loss(const Translator& generator, const torch::Tensor& x, const torch::Tensor& y_self);

/// Individual terms of one training step. Scalar is torch::Tensor in
/// training and any type with + and double* in structural tests.
template <class Scalar>
struct ObjectiveTerms {
  Scalar adv_d{}, adv_g{};
  Scalar cls_r{}, cls_f{};
  Scalar cyc{}, vcyc{}, recyc{};
  Scalar adv2_d{}, adv2_g{};
  Scalar id{};
};

template <class Scalar>
struct Objectives {
  Scalar total_d{};
  Scalar total_g{};
  std::optional<Scalar> total_d2;  // second discriminator, when active
};

struct TermUsage {
  bool cyc = false, vcyc = false, recyc = false, adv2 = false, id = false;
};

bool uses_second_discriminator(const LossWeights& weights, Variant variant);
// Which generator-side terms the composition for this variant reads.
TermUsage required_terms(const LossWeights& weights, Variant variant);

/// D/C minimizes -L_adv + lambda_cls L^r; G minimizes the variant's row of
/// the model/objective matrix; D' minimizes -L_adv2. Terms with zero weight
/// are omitted rather than multiplied by zero.
template <class Scalar>
Objectives<Scalar> full_objectives(const LossWeights& weights, const ObjectiveTerms<Scalar>& terms,
                                   Variant variant);

/// Diagnostic record of one step's terms, every one finite.
class LossBundle {
 public:
  void set(std::string name, double value);
  void set(std::string name, const torch::Tensor& value);
  std::optional<double> get(std::string_view name) const;
  bool all_finite() const;
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  nlohmann::json to_json(std::int64_t step) const;
  std::string describe() const;

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

// ---------------------------------------------------------------------------

template <class Scalar>
Scalar mix(double alpha, const Scalar& base, const Scalar& vcyc) {
  if (alpha == 1.0) return base;
  if (alpha == 0.0) return vcyc;
  return alpha * base + (1.0 - alpha) * vcyc;
}

template <class Scalar>
Objectives<Scalar> full_objectives(const LossWeights& weights, const ObjectiveTerms<Scalar>& t, Variant variant) {
  weights.validate();
  Objectives<Scalar> out;

  out.total_d = -1.0 * t.adv_d;
  if (weights.lambda_cls != 0.0) out.total_d = out.total_d + weights.lambda_cls * t.cls_r;

  Scalar g = t.adv_g;
  if (weights.lambda_cls != 0.0) g = g + weights.lambda_cls * t.cls_f;
  if (weights.lambda_cyc != 0.0) {
    switch (variant) {
      case Variant::stargan:
        g = g + weights.lambda_cyc * t.cyc;
        break;
      case Variant::stargan_recyc:
        g = g + weights.lambda_cyc * t.recyc;
        break;
      case Variant::rmit:
      case Variant::rmit_adv2:
        g = g + weights.lambda_cyc * t.vcyc;
        break;
      case Variant::rmit_cyc_vcyc:
        g = g + weights.lambda_cyc * mix(weights.alpha, t.cyc, t.vcyc);
        break;
      case Variant::rmit_recyc_vcyc:
        g = g + weights.lambda_cyc * mix(weights.alpha, t.recyc, t.vcyc);
        break;
    }
  }
  if (uses_second_discriminator(weights, variant)) {
    g = g + t.adv2_g;
    out.total_d2 = -1.0 * t.adv2_d;
  }
  if (weights.lambda_id != 0.0) g = g + weights.lambda_id * t.id;
  out.total_g = g;
  return out;
}

}  // namespace rmit
