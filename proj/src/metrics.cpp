#include "rmit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rmit/error.hpp"

namespace rmit {

GaussianFit fit_gaussian(const EmbeddingSet& set) {
  const auto n = set.vectors.rows();
  if (n < 2) throw InvalidInput("need at least two embeddings to fit a Gaussian");
  GaussianFit g;
  g.mean = set.vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = set.vectors.rowwise() - g.mean.transpose();
  g.covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return g;
}

namespace {

void require_symmetric(const Eigen::MatrixXd& m, const char* name) {
  if (m.rows() != m.cols()) throw InvalidInput(std::string(name) + " must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw InvalidInput(std::string(name) + " must be symmetric");
  }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2) {
  require_symmetric(sigma1, "sigma1");
  require_symmetric(sigma2, "sigma2");
  const auto d = mu1.size();
  if (mu2.size() != d || sigma1.rows() != d || sigma2.rows() != d) {
    throw InvalidInput("Gaussian dimensions disagree");
  }
  const Eigen::MatrixXd root1 = psd_sqrt(sigma1);
  Eigen::MatrixXd inner = root1 * sigma2 * root1;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double trace_root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu1 - mu2).squaredNorm() + sigma1.trace() + sigma2.trace() - 2.0 * trace_root;
  return std::max(0.0, value);
}

double fid(const EmbeddingSet& real, const EmbeddingSet& generated) {
  if (real.vectors.cols() != generated.vectors.cols()) throw InvalidInput("embedding widths disagree");
  const auto a = fit_gaussian(real);
  const auto b = fit_gaussian(generated);
  return frechet_distance(a.mean, a.covariance, b.mean, b.covariance);
}

double inception_score(const Eigen::MatrixXd& class_probs) {
  const auto n = class_probs.rows();
  if (n == 0) throw InvalidInput("inception score needs at least one row");
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((class_probs.row(i).array() < 0.0).any() || std::abs(class_probs.row(i).sum() - 1.0) > 1e-6) {
      throw InvalidInput("inception score rows must be probability distributions");
    }
  }
  // Extended precision keeps the uniform and one-hot cases exact.
  const auto c = class_probs.cols();
  std::vector<long double> marginal(static_cast<std::size_t>(c), 0.0L);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) marginal[static_cast<std::size_t>(k)] += class_probs(i, k);
  }
  for (auto& m : marginal) m /= static_cast<long double>(n);
  long double total_kl = 0.0L;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) {
      const long double p = class_probs(i, k);
      if (p > 0.0L) total_kl += p * (std::log(p) - std::log(marginal[static_cast<std::size_t>(k)]));
    }
  }
  return static_cast<double>(std::exp(total_kl / static_cast<long double>(n)));
}

double polynomial_kernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double base = u.dot(v) / static_cast<double>(u.size()) + 1.0;
  return base * base * base;
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const auto m = x.rows();
  if (m < 2 || y.rows() != m) throw InvalidInput("unbiased MMD needs two samples of equal size >= 2");
  if (x.cols() != y.cols()) throw InvalidInput("embedding widths disagree");
  const double d = static_cast<double>(x.cols());
  auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::ArrayXXd k = (a * b.transpose()).array() / d + 1.0;
    return Eigen::ArrayXXd(k * k * k);
  };
  const Eigen::ArrayXXd kxx = kernel(x, x);
  const Eigen::ArrayXXd kyy = kernel(y, y);
  const Eigen::ArrayXXd kxy = kernel(x, y);
  const double md = static_cast<double>(m);
  const double within = (kxx.sum() - kxx.matrix().trace() + kyy.sum() - kyy.matrix().trace()) / (md * (md - 1.0));
  return within - 2.0 * kxy.sum() / (md * md);
}

namespace {

std::vector<std::int64_t> sample_rows(std::int64_t n, std::int64_t k, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::int64_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

KidResult kid(const EmbeddingSet& real, const EmbeddingSet& generated, int num_splits, int split_size, Rng& rng) {
  if (num_splits < 1 || split_size < 2) throw InvalidInput("KID needs at least one split of size >= 2");
  if (real.vectors.rows() < split_size || generated.vectors.rows() < split_size) {
    throw InvalidInput("KID split size exceeds the number of available embeddings");
  }
  KidResult out;
  for (int s = 0; s < num_splits; ++s) {
    auto r = sample_rows(real.vectors.rows(), split_size, rng);
    auto g = sample_rows(generated.vectors.rows(), split_size, rng);
    out.per_split.push_back(mmd2_unbiased(gather(real.vectors, r), gather(generated.vectors, g)));
    out.real_rows.push_back(std::move(r));
    out.generated_rows.push_back(std::move(g));
  }
  out.mean = std::accumulate(out.per_split.begin(), out.per_split.end(), 0.0) / num_splits;
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const auto n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_abs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("Spearman series differ in length");
  if (a.size() < 2) throw InvalidInput("Spearman correlation needs at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) throw InvalidInput("Spearman correlation is undefined for a constant series");
  return std::min(1.0, std::abs(cov / std::sqrt(va * vb)));
}

nlohmann::json MetricsReport::to_json() const {
  return {{"epoch", epoch}, {"ca", ca}, {"fid", fid}, {"is", is_score}, {"kid", kid}, {"kid_splits", kid_splits}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.epoch = j.at("epoch").get<int>();
  r.ca = j.at("ca").get<double>();
  r.fid = j.at("fid").get<double>();
  r.is_score = j.at("is").get<double>();
  r.kid = j.at("kid").get<double>();
  r.kid_splits = j.value("kid_splits", std::vector<double>{});
  return r;
}

void MetricsReport::validate(std::int64_t num_domains) const {
  if (!(ca >= 0.0 && ca <= 100.0)) throw InvalidInput("CA outside [0, 100]");
  if (!(fid >= 0.0)) throw InvalidInput("FID must be nonnegative");
  if (!(is_score >= 1.0 - 1e-9 && is_score <= static_cast<double>(num_domains) + 1e-9)) {
    throw InvalidInput("IS outside [1, c]");
  }
  if (!std::isfinite(kid)) throw InvalidInput("KID must be finite");
}

Eigen::MatrixXd to_eigen(const torch::Tensor& matrix) {
  auto m = matrix.detach().to(torch::kDouble).contiguous();
  if (m.dim() != 2) throw InvalidInput("expected a 2-D tensor");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(m.data_ptr<double>(), m.size(0), m.size(1));
}

namespace {

template <class Fn>
torch::Tensor chunked(const torch::Tensor& images, std::int64_t chunk, Fn&& fn) {
  std::vector<torch::Tensor> parts;
  for (std::int64_t start = 0; start < images.size(0); start += chunk) {
    const auto len = std::min(chunk, images.size(0) - start);
    parts.push_back(fn(images.narrow(0, start, len)));
  }
  return torch::cat(parts, 0);
}

struct EvalModeGuard {
  explicit EvalModeGuard(torch::nn::Module& m) : module(m), was_training(m.is_training()) { module.eval(); }
  ~EvalModeGuard() { module.train(was_training); }
  torch::nn::Module& module;
  bool was_training;
};

void require_trained(EvalClassifier& classifier) {
  if (classifier.is_empty() || !classifier->trained()) {
    throw LifecycleError("evaluation classifier has not been trained");
  }
}

}  // namespace

EmbeddingSet embed_images(EvalClassifier& classifier, const torch::Tensor& images, EmbeddingSource source,
                          std::int64_t chunk) {
  require_trained(classifier);
  torch::NoGradGuard no_grad;
  EvalModeGuard guard(*classifier);
  auto features = chunked(images, chunk, [&](const torch::Tensor& x) { return classifier->embed(x); });
  return {to_eigen(features), source};
}

Eigen::MatrixXd class_probabilities(EvalClassifier& classifier, const torch::Tensor& images, std::int64_t chunk) {
  require_trained(classifier);
  torch::NoGradGuard no_grad;
  EvalModeGuard guard(*classifier);
  auto probs = chunked(images, chunk, [&](const torch::Tensor& x) {
    return torch::softmax(classifier->forward(x).to(torch::kDouble), 1);
  });
  return to_eigen(probs);
}

std::vector<std::int64_t> draw_other_domains(std::span<const std::int64_t> labels, std::int64_t num_domains,
                                             Rng& rng) {
  if (num_domains < 2) throw InvalidInput("need at least two domains");
  std::vector<std::int64_t> targets;
  targets.reserve(labels.size());
  for (auto y : labels) {
    if (y < 0 || y >= num_domains) throw InvalidInput("label outside [0, c)");
    const auto shift = 1 + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(num_domains - 1)));
    targets.push_back((y + shift) % num_domains);
  }
  return targets;
}

namespace {

torch::Tensor translate_all(const Translator& translator, const torch::Tensor& images,
                            const std::vector<std::int64_t>& targets) {
  torch::NoGradGuard no_grad;
  auto y = torch::tensor(targets, torch::kLong);
  std::vector<torch::Tensor> parts;
  constexpr std::int64_t chunk = 64;
  for (std::int64_t start = 0; start < images.size(0); start += chunk) {
    const auto len = std::min(chunk, images.size(0) - start);
    parts.push_back(translator(images.narrow(0, start, len), y.narrow(0, start, len)));
  }
  return torch::cat(parts, 0);
}

}  // namespace

double classification_accuracy(EvalClassifier& eval_classifier, const Translator& translator,
                               const torch::Tensor& test_images, std::span<const std::int64_t> test_labels,
                               std::int64_t num_domains, Rng& rng) {
  require_trained(eval_classifier);
  if (test_images.size(0) != static_cast<std::int64_t>(test_labels.size()) || test_labels.empty()) {
    throw InvalidInput("CA needs one label per test image");
  }
  const auto targets = draw_other_domains(test_labels, num_domains, rng);
  auto translated = translate_all(translator, test_images, targets);
  torch::NoGradGuard no_grad;
  EvalModeGuard guard(*eval_classifier);
  auto predicted = eval_classifier->forward(translated).argmax(1);
  auto hits = predicted.eq(torch::tensor(targets, torch::kLong)).sum().item<std::int64_t>();
  return 100.0 * static_cast<double>(hits) / static_cast<double>(targets.size());
}

GeneratorEvaluation evaluate_generator(EvalClassifier& eval_classifier, const Translator& translator,
                                       const torch::Tensor& test_images, std::span<const std::int64_t> test_labels,
                                       const EmbeddingSet& real_train, std::int64_t num_domains, Rng& rng,
                                       const EvaluationSettings& settings) {
  GeneratorEvaluation out;
  out.report.ca = classification_accuracy(eval_classifier, translator, test_images, test_labels, num_domains, rng);

  const auto n = static_cast<std::int64_t>(test_labels.size());
  std::vector<std::int64_t> partner(static_cast<std::size_t>(n));
  std::iota(partner.begin(), partner.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(partner[static_cast<std::size_t>(i)], partner[static_cast<std::size_t>(j)]);
  }
  std::vector<std::int64_t> partner_labels;
  for (auto p : partner) partner_labels.push_back(test_labels[static_cast<std::size_t>(p)]);
  auto translated = translate_all(translator, test_images, partner_labels);

  out.generated = embed_images(eval_classifier, translated, EmbeddingSource::generated);
  out.report.fid = fid(real_train, out.generated);
  out.report.is_score = inception_score(class_probabilities(eval_classifier, translated));
  const int split = std::min<int>(settings.kid_split_size, static_cast<int>(std::min<Eigen::Index>(
                                                               real_train.vectors.rows(), out.generated.vectors.rows())));
  auto k = kid(real_train, out.generated, settings.kid_splits, split, rng);
  out.report.kid = k.mean;
  out.report.kid_splits = std::move(k.per_split);
  return out;
}

}  // namespace rmit
