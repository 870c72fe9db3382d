#pragma once

// Tiny double-precision networks and one finite-difference case per loss
// term. Shared by the unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "oracles.hpp"
#include "rmit/losses.hpp"
#include "rmit/networks.hpp"
#include "rmit/noise.hpp"
#include "rmit/robust.hpp"

namespace oracle {

struct TinySetup {
  rmit::Generator g{nullptr};
  rmit::Discriminator d{nullptr};
  rmit::Discriminator d2{nullptr};
  torch::Tensor x, y, y_prime, y_dprime, e, fake;

  rmit::Translator translator() {
    return [this](const torch::Tensor& a, const torch::Tensor& b) { return rmit::generate(g, a, b); };
  }
  rmit::Critic critic() {
    return [this](const torch::Tensor& a) { return rmit::discriminate(d, a).realness; };
  }
  rmit::Critic critic2() {
    return [this](const torch::Tensor& a) { return rmit::discriminate(d2, a).realness; };
  }
  rmit::Classifier classifier() {
    return [this](const torch::Tensor& a) { return rmit::discriminate(d, a).class_logits; };
  }
};

inline TinySetup make_tiny_setup(std::uint64_t seed = 3) {
  torch::manual_seed(seed);
  TinySetup s;
  rmit::GeneratorConfig gc;
  gc.image_size = 8;
  gc.base_width = 4;
  gc.num_res_blocks = 1;
  gc.stem_kernel = 3;
  gc.head_kernel = 3;
  rmit::DiscriminatorConfig dc;
  dc.image_size = 8;
  dc.base_width = 4;
  dc.num_down = 2;
  dc.dropout = false;
  s.g = rmit::Generator(gc);
  s.d = rmit::Discriminator(dc);
  s.d2 = rmit::Discriminator(dc);
  s.g->to(torch::kDouble);
  s.d->to(torch::kDouble);
  s.d2->to(torch::kDouble);
  const auto opts = torch::TensorOptions().dtype(torch::kDouble);
  s.x = torch::rand({4, 3, 8, 8}, opts) * 2 - 1;
  s.y = torch::tensor({0, 1, 2, 0}, torch::kLong);
  s.y_prime = torch::tensor({1, 2, 0, 2}, torch::kLong);
  s.y_dprime = torch::tensor({2, 0, 1, 1}, torch::kLong);
  s.e = torch::tensor({0.2, 0.5, 0.7, 0.9}, opts);
  s.fake = (torch::rand({4, 3, 8, 8}, opts) * 2 - 1);
  return s;
}

inline std::vector<torch::Tensor> params_of(torch::nn::Module& m) { return m.parameters(); }

struct GradientCase {
  std::string name;
  std::function<torch::Tensor()> loss;
  std::vector<torch::Tensor> params;
};

/// Every loss term, differentiated with respect to the parameters it trains.
inline std::vector<GradientCase> gradient_cases(TinySetup& s) {
  using rmit::GanObjective;
  auto G = s.translator();
  auto D = s.critic();
  auto D2 = s.critic2();
  auto C = s.classifier();
  auto gp = params_of(*s.g);
  auto dp = params_of(*s.d);
  auto d2p = params_of(*s.d2);
  const auto transition = rmit::build_symmetric(3, 0.4);
  auto relabel_rng = [] { return at::detail::createCPUGenerator(1234); };
  std::vector<GradientCase> cases;

  cases.push_back({"adversarial D (vanilla)",
                   [=, &s] { return rmit::adv_d_term(D, s.x, s.fake, GanObjective::vanilla, 0.0); }, dp});
  cases.push_back({"adversarial G (vanilla)",
                   [=, &s] { return rmit::adv_g_term(D, G(s.x, s.y_prime), GanObjective::vanilla); }, gp});
  cases.push_back({"adversarial D (wgan-gp)",
                   [=, &s] {
                     return rmit::adv_d_term(D, s.x, s.fake, GanObjective::wgan_gp, 10.0, nullptr, s.e);
                   },
                   dp});
  cases.push_back({"adversarial G (wgan-gp)",
                   [=, &s] { return rmit::adv_g_term(D, G(s.x, s.y_prime), GanObjective::wgan_gp); }, gp});
  cases.push_back({"gradient penalty", [=, &s] { return rmit::gradient_penalty(D, s.x, s.fake, s.e); }, dp});
  cases.push_back({"real classification", [=, &s] { return rmit::cls_real_loss(C, s.x, s.y); }, dp});
  cases.push_back({"fake classification", [=, &s] { return rmit::cls_fake_loss(C, G, s.x, s.y_prime); }, gp});
  cases.push_back({"cycle", [=, &s] { return rmit::cycle_loss(G, s.x, s.y, s.y_prime); }, gp});
  cases.push_back({"virtual cycle", [=, &s] { return rmit::virtual_cycle_loss(G, s.x, s.y_prime, s.y_dprime); }, gp});
  cases.push_back({"relabeled cycle",
                   [=, &s] {
                     return rmit::relabeled_cycle_loss(G, C, s.x, s.y_prime, rmit::RelabelMode::sample, relabel_rng());
                   },
                   gp});
  cases.push_back({"mixed cyc/vcyc",
                   [=, &s] {
                     return rmit::mixed_cycle_loss(rmit::CycleBase::cyc, 0.3, G, C,
                                                   {s.x, s.y, s.y_prime, s.y_dprime});
                   },
                   gp});
  cases.push_back({"mixed recyc/vcyc",
                   [=, &s] {
                     return rmit::mixed_cycle_loss(rmit::CycleBase::recyc, 0.6, G, C,
                                                   {s.x, s.y, s.y_prime, s.y_dprime}, rmit::RelabelMode::sample,
                                                   relabel_rng());
                   },
                   gp});
  cases.push_back({"second adversarial D'",
                   [=, &s] {
                     return rmit::second_adv_loss(D2, G, s.x, s.y_prime, s.y_dprime, GanObjective::wgan_gp, 10.0, s.e)
                         .d_term;
                   },
                   d2p});
  cases.push_back({"second adversarial G",
                   [=, &s] {
                     return rmit::second_adv_loss(D2, G, s.x, s.y_prime, s.y_dprime, GanObjective::wgan_gp, 10.0, s.e)
                         .g_term;
                   },
                   gp});
  cases.push_back({"identity mapping", [=, &s] { return rmit::identity_loss(G, s.x, s.y); }, gp});
  cases.push_back({"forward-corrected classification",
                   [=, &s] { return rmit::forward_corrected_loss(C(s.x), s.y, transition); }, dp});
  return cases;
}

}  // namespace oracle
