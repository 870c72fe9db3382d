#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "rmit/networks.hpp"
#include "rmit/noise.hpp"

namespace rmit {

enum class RobustMethod { naive, forward, coteaching };

std::string_view to_string(RobustMethod method);
RobustMethod parse_robust_method(std::string_view name);

struct RobustClsConfig {
  RobustMethod method = RobustMethod::naive;
  std::optional<TransitionMatrix> transition;  // forward correction
  double drop_rate = 0.0;                      // co-teaching tau

  void validate(std::int64_t num_domains) const;  // InvalidSpec
};

struct ForwardLossResult {
  torch::Tensor loss;
  bool floored = false;  // some corrected probability hit the 1e-12 floor
};

/// Mean over the batch of -log((T^T softmax(logits))[y_noisy]). The mixing is
/// done in log space, so T = I reproduces cross-entropy exactly.
ForwardLossResult forward_corrected_loss_checked(const torch::Tensor& logits, const torch::Tensor& y_noisy,
                                                 const TransitionMatrix& transition);
torch::Tensor forward_corrected_loss(const torch::Tensor& logits, const torch::Tensor& y_noisy,
                                     const TransitionMatrix& transition);

struct CoteachSelection {
  std::vector<std::int64_t> for_a;  // small-loss samples under peer B, used to train A
  std::vector<std::int64_t> for_b;
};

// Number of samples each peer keeps: ceil((1 - tau) * batch).
std::int64_t coteach_keep_count(std::int64_t batch, double tau);

/// Cross selection: A trains on the ceil((1-tau)B) smallest entries of
/// losses_b and B on those of losses_a. Ties go to the lower index.
CoteachSelection coteach_select(std::span<const double> losses_a, std::span<const double> losses_b, double tau);

struct CoteachLosses {
  torch::Tensor loss_a;  // mean CE of peer A over its selected subset
  torch::Tensor loss_b;
  CoteachSelection selection;
  double selected_fraction = 1.0;
};

// Per-sample cross-entropy for both peers, cross selection, subset means.
CoteachLosses coteach_losses(const torch::Tensor& logits_a, const torch::Tensor& logits_b,
                             const torch::Tensor& y_noisy, double tau);

/// Two independently initialised peer classifiers with their optimizers.
/// Peer A is the one exposed to the generator's objectives.
struct CoteachingState {
  Discriminator peer_a{nullptr};
  Discriminator peer_b{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_a;
  std::unique_ptr<torch::optim::Adam> optimizer_b;

  static CoteachingState create(const DiscriminatorConfig& classifier_config, double lr, double beta1,
                                double beta2);
  bool initialized() const { return !peer_a.is_empty() && !peer_b.is_empty() && optimizer_a && optimizer_b; }
};

struct CoteachStepResult {
  double loss_a = 0.0;
  double loss_b = 0.0;
  double selected_fraction = 1.0;
  CoteachSelection selection;
};

/// One cross-update: each peer takes an optimizer step on the subset its
/// partner selected.
CoteachStepResult coteach_step(CoteachingState& state, const torch::Tensor& x, const torch::Tensor& y_noisy,
                               double tau);

}  // namespace rmit
