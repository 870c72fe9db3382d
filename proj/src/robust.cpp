#include "rmit/robust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rmit/error.hpp"

namespace rmit {

std::string_view to_string(RobustMethod method) {
  switch (method) {
    case RobustMethod::naive:
      return "naive";
    case RobustMethod::forward:
      return "forward";
    case RobustMethod::coteaching:
      return "coteaching";
  }
  return "naive";
}

RobustMethod parse_robust_method(std::string_view name) {
  if (name == "naive") return RobustMethod::naive;
  if (name == "forward" || name == "forward_correction") return RobustMethod::forward;
  if (name == "coteaching" || name == "co-teaching") return RobustMethod::coteaching;
  throw InvalidSpec("unknown classifier method '" + std::string(name) + "'");
}

void RobustClsConfig::validate(std::int64_t num_domains) const {
  if (method == RobustMethod::forward) {
    if (!transition) throw InvalidSpec("forward correction requires a transition matrix");
    if (transition->num_classes() != num_domains) throw InvalidSpec("transition matrix size differs from c");
  }
  if (method == RobustMethod::coteaching && !(drop_rate >= 0.0 && drop_rate < 1.0)) {
    throw InvalidSpec("co-teaching drop rate must lie in [0, 1)");
  }
}

ForwardLossResult forward_corrected_loss_checked(const torch::Tensor& logits, const torch::Tensor& y_noisy,
                                                 const TransitionMatrix& transition) {
  const auto c = transition.num_classes();
  if (logits.dim() != 2 || logits.size(1) != c) throw InvalidInput("logits must be [B, c] with c matching T");
  if (logits.size(0) == 0) throw InvalidInput("empty batch");
  if (y_noisy.dim() != 1 || y_noisy.size(0) != logits.size(0)) throw InvalidInput("one label per row expected");
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericalError("non-finite classifier logits");

  std::vector<double> log_t(static_cast<std::size_t>(c * c));
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      // A large finite stand-in for log 0 keeps gradients defined when a
      // whole column of T is zero; exp() of it underflows to exactly 0.
      const double t = transition.at(i, j);
      log_t[static_cast<std::size_t>(i * c + j)] = t > 0.0 ? std::log(t) : -1e30;
    }
  }
  auto log_transition = torch::tensor(log_t, torch::TensorOptions().dtype(torch::kDouble)).view({c, c});
  log_transition = log_transition.to(logits.dtype());

  auto log_clean = torch::log_softmax(logits, 1);                        // [B, c] over clean label i
  auto columns = log_transition.index_select(1, y_noisy).t();            // [B, c]: log T[i, y_b]
  auto log_noisy = torch::logsumexp(log_clean + columns, 1);             // log p(noisy = y_b | x_b)
  const double floor = std::log(1e-12);
  ForwardLossResult out;
  out.floored = (log_noisy < floor).any().item<bool>();
  if (out.floored) log_noisy = torch::clamp_min(log_noisy, floor);
  // nll_loss shares cross_entropy's reduction, so T = I reproduces it exactly.
  out.loss = torch::nll_loss(log_noisy.unsqueeze(1), torch::zeros_like(y_noisy));
  return out;
}

torch::Tensor forward_corrected_loss(const torch::Tensor& logits, const torch::Tensor& y_noisy,
                                     const TransitionMatrix& transition) {
  return forward_corrected_loss_checked(logits, y_noisy, transition).loss;
}

std::int64_t coteach_keep_count(std::int64_t batch, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidSpec("co-teaching drop rate must lie in [0, 1)");
  // The epsilon keeps products such as (1 - 0.3) * 10 from rounding up.
  const auto keep = static_cast<std::int64_t>(std::ceil((1.0 - tau) * static_cast<double>(batch) - 1e-9));
  return std::clamp<std::int64_t>(keep, batch > 0 ? 1 : 0, batch);
}

namespace {

std::vector<std::int64_t> smallest(std::span<const double> losses, std::int64_t keep) {
  std::vector<std::int64_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return losses[static_cast<std::size_t>(a)] < losses[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(keep));
  return order;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kDouble).contiguous();
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

}  // namespace

CoteachSelection coteach_select(std::span<const double> losses_a, std::span<const double> losses_b, double tau) {
  if (losses_a.empty()) throw InvalidInput("empty batch");
  if (losses_a.size() != losses_b.size()) throw InvalidInput("peer loss vectors differ in length");
  const auto keep = coteach_keep_count(static_cast<std::int64_t>(losses_a.size()), tau);
  return {smallest(losses_b, keep), smallest(losses_a, keep)};
}

CoteachLosses coteach_losses(const torch::Tensor& logits_a, const torch::Tensor& logits_b,
                             const torch::Tensor& y_noisy, double tau) {
  namespace F = torch::nn::functional;
  const auto opts = F::CrossEntropyFuncOptions().reduction(torch::kNone);
  auto per_a = F::cross_entropy(logits_a, y_noisy, opts);
  auto per_b = F::cross_entropy(logits_b, y_noisy, opts);
  auto la = to_vector(per_a);
  auto lb = to_vector(per_b);
  CoteachLosses out;
  out.selection = coteach_select(la, lb, tau);
  auto idx_a = torch::tensor(out.selection.for_a, torch::kLong);
  auto idx_b = torch::tensor(out.selection.for_b, torch::kLong);
  out.loss_a = per_a.index_select(0, idx_a).mean();
  out.loss_b = per_b.index_select(0, idx_b).mean();
  out.selected_fraction = static_cast<double>(out.selection.for_a.size()) / static_cast<double>(la.size());
  return out;
}

CoteachingState CoteachingState::create(const DiscriminatorConfig& classifier_config, double lr, double beta1,
                                        double beta2) {
  auto cfg = classifier_config;
  cfg.with_classifier = true;
  CoteachingState s;
  s.peer_a = Discriminator(cfg);
  s.peer_b = Discriminator(cfg);
  const auto opts = torch::optim::AdamOptions(lr).betas({beta1, beta2});
  s.optimizer_a = std::make_unique<torch::optim::Adam>(s.peer_a->parameters(), opts);
  s.optimizer_b = std::make_unique<torch::optim::Adam>(s.peer_b->parameters(), opts);
  return s;
}

CoteachStepResult coteach_step(CoteachingState& state, const torch::Tensor& x, const torch::Tensor& y_noisy,
                               double tau) {
  if (!state.initialized()) throw LifecycleError("co-teaching state has not been initialised");
  if (x.dim() == 0 || x.size(0) == 0) throw InvalidInput("empty batch");
  auto logits_a = discriminate(state.peer_a, x).class_logits;
  auto logits_b = discriminate(state.peer_b, x).class_logits;
  auto losses = coteach_losses(logits_a, logits_b, y_noisy, tau);

  state.optimizer_a->zero_grad();
  state.optimizer_b->zero_grad();
  (losses.loss_a + losses.loss_b).backward();  // peers share no parameters
  state.optimizer_a->step();
  state.optimizer_b->step();

  CoteachStepResult out;
  out.loss_a = losses.loss_a.item<double>();
  out.loss_b = losses.loss_b.item<double>();
  out.selected_fraction = losses.selected_fraction;
  out.selection = std::move(losses.selection);
  return out;
}

}  // namespace rmit
