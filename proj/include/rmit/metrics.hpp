#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#include <torch/torch.h>

#include "rmit/common.hpp"
#include "rmit/losses.hpp"
#include "rmit/networks.hpp"

namespace rmit {

enum class EmbeddingSource { real_train, generated };

struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // n x d, one embedding per row
  EmbeddingSource source = EmbeddingSource::real_train;
};

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased (n - 1)
};

GaussianFit fit_gaussian(const EmbeddingSet& set);  // InvalidInput when n < 2

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the root is
/// taken from the symmetric form S1^{1/2} S2 S1^{1/2}, with negative
/// eigenvalues clamped at 0.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2);

double fid(const EmbeddingSet& real, const EmbeddingSet& generated);

/// exp(mean_i KL(p(y|x_i) || p(y))) with p(y) the row mean.
double inception_score(const Eigen::MatrixXd& class_probs);

// (u.v / d + 1)^3
double polynomial_kernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Unbiased MMD^2 between two equally sized samples under the cubic
/// polynomial kernel.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct KidResult {
  double mean = 0.0;
  std::vector<double> per_split;
  // Row indices drawn for each split, kept so oracles can replay them.
  std::vector<std::vector<std::int64_t>> real_rows, generated_rows;
};

KidResult kid(const EmbeddingSet& real, const EmbeddingSet& generated, int num_splits, int split_size, Rng& rng);

// Average ranks, ties share the mean of their positions (1-based).
std::vector<double> average_ranks(std::span<const double> values);

/// |Spearman rho|. Throws InvalidInput when lengths differ, n < 2, or either
/// series is constant (the correlation is undefined there).
double spearman_abs(std::span<const double> a, std::span<const double> b);

struct MetricsReport {
  int epoch = 0;
  double ca = 0.0;  // percent
  double fid = 0.0;
  double is_score = 1.0;
  double kid = 0.0;
  std::vector<double> kid_splits;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  void validate(std::int64_t num_domains) const;  // InvalidInput
};

// Torch-side helpers ----------------------------------------------------------

Eigen::MatrixXd to_eigen(const torch::Tensor& matrix);

/// Embeddings from the evaluation classifier, in eval mode, in chunks.
EmbeddingSet embed_images(EvalClassifier& classifier, const torch::Tensor& images, EmbeddingSource source,
                          std::int64_t chunk = 256);
Eigen::MatrixXd class_probabilities(EvalClassifier& classifier, const torch::Tensor& images,
                                    std::int64_t chunk = 256);

/// Each test image goes to a domain drawn uniformly from the c - 1 others;
/// returns the percentage the evaluation classifier assigns to that target.
double classification_accuracy(EvalClassifier& eval_classifier, const Translator& translator,
                               const torch::Tensor& test_images, std::span<const std::int64_t> test_labels,
                               std::int64_t num_domains, Rng& rng);

// Targets used by classification_accuracy, exposed for oracles.
std::vector<std::int64_t> draw_other_domains(std::span<const std::int64_t> labels, std::int64_t num_domains,
                                             Rng& rng);

struct GeneratorEvaluation {
  MetricsReport report;
  EmbeddingSet generated;
};

struct EvaluationSettings {
  int kid_splits = 10;
  int kid_split_size = 50;
};

/// CA, then FID/IS/KID on test images translated with the labels of a
/// randomly permuted partner image, against all real training embeddings.
GeneratorEvaluation evaluate_generator(EvalClassifier& eval_classifier, const Translator& translator,
                                       const torch::Tensor& test_images, std::span<const std::int64_t> test_labels,
                                       const EmbeddingSet& real_train, std::int64_t num_domains, Rng& rng,
                                       const EvaluationSettings& settings = {});

}  // namespace rmit
