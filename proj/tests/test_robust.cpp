#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "rmit/error.hpp"
#include "rmit/robust.hpp"
#include "support/oracles.hpp"

using namespace rmit;

TEST(ForwardCorrection, IdentityTransitionIsCrossEntropyBitForBit) {
  torch::manual_seed(2);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto dtype : {torch::kFloat, torch::kDouble}) {
      auto logits = torch::randn({16, 5}, dtype) * 3;
      auto y = torch::randint(0, 5, {16}, torch::kLong);
      auto corrected = forward_corrected_loss(logits, y, TransitionMatrix::identity(5));
      auto ce = torch::nn::functional::cross_entropy(logits, y);
      EXPECT_TRUE(torch::equal(corrected, ce)) << corrected.item<double>() << " vs " << ce.item<double>();
    }
  }
}

TEST(ForwardCorrection, MatchesExplicitMixture) {
  torch::manual_seed(3);
  const auto t = build_asymmetric(4, 0.3);
  auto logits = torch::randn({8, 4}, torch::kDouble);
  auto y = torch::randint(0, 4, {8}, torch::kLong);
  double expected = 0;
  for (int b = 0; b < 8; ++b) {
    double z = 0;
    for (int i = 0; i < 4; ++i) z += std::exp(logits[b][i].item<double>());
    double p = 0;
    for (int i = 0; i < 4; ++i) p += std::exp(logits[b][i].item<double>()) / z * t.at(i, y[b].item<int>());
    expected -= std::log(p) / 8;
  }
  EXPECT_NEAR(forward_corrected_loss(logits, y, t).item<double>(), expected, 1e-12);
}

TEST(ForwardCorrection, FloorFlagged) {
  auto logits = torch::tensor({{60.0, -60.0}}, torch::kDouble);
  auto r = forward_corrected_loss_checked(logits, torch::tensor({1}, torch::kLong), TransitionMatrix::identity(2));
  EXPECT_TRUE(r.floored);
  EXPECT_NEAR(r.loss.item<double>(), -std::log(1e-12), 1e-9);
  EXPECT_THROW(forward_corrected_loss(torch::zeros({2, 3}), torch::zeros({2}, torch::kLong),
                                      TransitionMatrix::identity(2)),
               InvalidInput);
}

TEST(Coteaching, KeepCount) {
  EXPECT_EQ(coteach_keep_count(16, 0.5), 8);
  EXPECT_EQ(coteach_keep_count(10, 0.3), 7);
  EXPECT_EQ(coteach_keep_count(16, 0.2), 13);
  EXPECT_EQ(coteach_keep_count(16, 0.0), 16);
  EXPECT_EQ(coteach_keep_count(3, 0.9), 1);
  EXPECT_THROW(coteach_keep_count(8, 1.0), InvalidSpec);
}

TEST(Coteaching, SelectionMatchesFullSortOracle) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> batch_dist(1, 64);
  std::uniform_real_distribution<double> tau_dist(0.0, 0.95);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int b = batch_dist(rng);
    const double tau = tau_dist(rng);
    std::vector<double> la(b), lb(b);
    for (int i = 0; i < b; ++i) {
      // Coarse values create ties on purpose.
      la[i] = trial % 2 ? coarse(rng) : tau_dist(rng);
      lb[i] = trial % 2 ? coarse(rng) : tau_dist(rng);
    }
    const auto keep = static_cast<std::size_t>(std::ceil((1 - tau) * b - 1e-9));
    const auto sel = coteach_select(la, lb, tau);
    auto a_sorted = sel.for_a, b_sorted = sel.for_b;
    std::sort(a_sorted.begin(), a_sorted.end());
    std::sort(b_sorted.begin(), b_sorted.end());
    auto oracle_a = oracle::smallest_by_sort(lb, keep);
    auto oracle_b = oracle::smallest_by_sort(la, keep);
    std::sort(oracle_a.begin(), oracle_a.end());
    std::sort(oracle_b.begin(), oracle_b.end());
    ASSERT_EQ(a_sorted, oracle_a) << "trial " << trial;
    ASSERT_EQ(b_sorted, oracle_b) << "trial " << trial;
  }
}

TEST(Coteaching, LossesAverageSelectedSubset) {
  auto logits_a = torch::tensor({{2.0, 0.0}, {0.0, 2.0}, {1.0, 1.0}, {3.0, 0.0}}, torch::kDouble);
  auto logits_b = torch::tensor({{0.0, 2.0}, {0.0, 2.0}, {2.0, 0.0}, {1.0, 0.0}}, torch::kDouble);
  auto y = torch::tensor({0, 1, 0, 0}, torch::kLong);
  auto r = coteach_losses(logits_a, logits_b, y, 0.5);
  ASSERT_EQ(r.selection.for_a.size(), 2u);
  EXPECT_DOUBLE_EQ(r.selected_fraction, 0.5);
  auto ce_a = torch::nn::functional::cross_entropy(logits_a, y,
                                                   torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
  double expected = 0;
  for (auto i : r.selection.for_a) expected += ce_a[i].item<double>() / 2;
  EXPECT_NEAR(r.loss_a.item<double>(), expected, 1e-12);
  // Peer B is most confident on samples 1 and 2, so those train A.
  std::set<std::int64_t> chosen(r.selection.for_a.begin(), r.selection.for_a.end());
  EXPECT_EQ(chosen, (std::set<std::int64_t>{1, 2}));
}

TEST(Coteaching, StepUpdatesBothPeers) {
  torch::manual_seed(4);
  auto cfg = DiscriminatorConfig::desk(3);
  cfg.with_realness = false;
  cfg.image_size = 16;
  cfg.num_down = 2;
  auto state = CoteachingState::create(cfg, 1e-3, 0.5, 0.999);
  ASSERT_TRUE(state.initialized());
  auto before_a = state.peer_a->parameters()[0].clone();
  auto before_b = state.peer_b->parameters()[0].clone();
  EXPECT_FALSE(torch::equal(before_a, before_b));
  auto r = coteach_step(state, torch::rand({8, 3, 16, 16}), torch::randint(0, 3, {8}, torch::kLong), 0.25);
  EXPECT_EQ(r.selection.for_a.size(), 6u);
  EXPECT_FALSE(torch::equal(before_a, state.peer_a->parameters()[0]));
  EXPECT_FALSE(torch::equal(before_b, state.peer_b->parameters()[0]));
}

TEST(RobustConfig, Validation) {
  RobustClsConfig c;
  c.method = RobustMethod::coteaching;
  c.drop_rate = 1.0;
  EXPECT_THROW(c.validate(3), InvalidSpec);
  c.method = RobustMethod::forward;
  c.drop_rate = 0.0;
  c.transition = build_symmetric(4, 0.2);
  EXPECT_THROW(c.validate(3), InvalidSpec);
  EXPECT_EQ(parse_robust_method("coteaching"), RobustMethod::coteaching);
}
