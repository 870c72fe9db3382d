#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rmit/common.hpp"

namespace rmit {

enum class NoiseKind { none, symmetric, asymmetric, per_attribute_flip };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double rate = 0.0;
  int num_domains = 2;

  // Throws InvalidSpec. kind=none with a nonzero rate is rejected rather
  // than silently zeroed.
  void validate() const;
};

/// Row-stochastic label corruption model: at(i, j) = p(noisy = j | clean = i).
class TransitionMatrix {
 public:
  /// Validates shape, range and row sums (1e-9). Throws InvalidSpec.
  explicit TransitionMatrix(std::vector<std::vector<double>> rows);

  static TransitionMatrix identity(int num_classes);

  int num_classes() const { return c_; }
  double at(int clean, int noisy) const { return entries_[static_cast<std::size_t>(clean * c_ + noisy)]; }
  std::span<const double> row(int clean) const {
    return {entries_.data() + static_cast<std::ptrdiff_t>(clean) * c_, static_cast<std::size_t>(c_)};
  }
  bool is_identity() const;

  std::vector<std::vector<double>> rows() const;
  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  int c_ = 0;
  std::vector<double> entries_;
};

// Uniform flips to the other c-1 classes.
TransitionMatrix build_symmetric(int num_classes, double rate);
// Flips to the circularly next class, (i + 1) mod c.
TransitionMatrix build_asymmetric(int num_classes, double rate);
// none -> identity; per_attribute_flip has no matrix and throws InvalidSpec.
TransitionMatrix build_transition(const NoiseSpec& spec);

/// Draws each output label independently from row T[label].
std::vector<std::int64_t> corrupt(std::span<const std::int64_t> labels, const TransitionMatrix& transition,
                                  Rng& rng);

using AttributeVector = std::vector<std::uint8_t>;

/// Independent Bernoulli(rate) flip of every attribute bit.
std::vector<AttributeVector> corrupt_multilabel(std::span<const AttributeVector> labels, double rate, Rng& rng);

struct LabelAssignment {
  std::string sample_id;
  std::int64_t clean = 0;
  std::int64_t noisy = 0;
  friend bool operator==(const LabelAssignment&, const LabelAssignment&) = default;
};

// Sidecar layout: {"format": "rmit-label-noise", "version": 1,
//   "noise": {...}, "assignments": {"<sample_id>": {"clean": i, "noisy": j}}}
nlohmann::json corruption_to_json(const NoiseSpec& spec, std::span<const LabelAssignment> assignments);
std::vector<LabelAssignment> corruption_from_json(const nlohmann::json& doc);
void write_corruption_sidecar(const std::filesystem::path& path, const NoiseSpec& spec,
                              std::span<const LabelAssignment> assignments);
std::vector<LabelAssignment> read_corruption_sidecar(const std::filesystem::path& path);

}  // namespace rmit
