#include "rmit/noise.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "rmit/error.hpp"

namespace rmit {
namespace {

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw InvalidSpec("noise rate must lie in [0, 1], got " + std::to_string(rate));
  }
}

void check_classes(int num_classes) {
  if (num_classes < 2) {
    throw InvalidSpec("need at least 2 domains, got " + std::to_string(num_classes));
  }
}

}  // namespace

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none:
      return "none";
    case NoiseKind::symmetric:
      return "symmetric";
    case NoiseKind::asymmetric:
      return "asymmetric";
    case NoiseKind::per_attribute_flip:
      return "per_attribute_flip";
  }
  return "none";
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "none" || name == "clean") return NoiseKind::none;
  if (name == "symmetric") return NoiseKind::symmetric;
  if (name == "asymmetric") return NoiseKind::asymmetric;
  if (name == "per_attribute_flip") return NoiseKind::per_attribute_flip;
  throw InvalidSpec("unknown noise kind '" + std::string(name) + "'");
}

void NoiseSpec::validate() const {
  check_rate(rate);
  check_classes(num_domains);
  if (kind == NoiseKind::none && rate != 0.0) {
    throw InvalidSpec("noise kind 'none' requires rate 0");
  }
}

TransitionMatrix::TransitionMatrix(std::vector<std::vector<double>> rows) {
  c_ = static_cast<int>(rows.size());
  check_classes(c_);
  entries_.reserve(static_cast<std::size_t>(c_) * c_);
  for (int i = 0; i < c_; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<int>(r.size()) != c_) {
      throw InvalidSpec("transition matrix must be square");
    }
    double sum = 0.0;
    for (double v : r) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidSpec("transition matrix entries must lie in [0, 1]");
      }
      sum += v;
      entries_.push_back(v);
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvalidSpec("transition matrix row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

TransitionMatrix TransitionMatrix::identity(int num_classes) {
  check_classes(num_classes);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(num_classes),
                                        std::vector<double>(static_cast<std::size_t>(num_classes), 0.0));
  for (int i = 0; i < num_classes; ++i) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
  return TransitionMatrix(std::move(rows));
}

bool TransitionMatrix::is_identity() const {
  for (int i = 0; i < c_; ++i) {
    for (int j = 0; j < c_; ++j) {
      if (at(i, j) != (i == j ? 1.0 : 0.0)) return false;
    }
  }
  return true;
}

std::vector<std::vector<double>> TransitionMatrix::rows() const {
  std::vector<std::vector<double>> out;
  for (int i = 0; i < c_; ++i) {
    auto r = row(i);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

TransitionMatrix build_symmetric(int num_classes, double rate) {
  check_classes(num_classes);
  check_rate(rate);
  const auto c = static_cast<std::size_t>(num_classes);
  const double off = rate / static_cast<double>(num_classes - 1);
  std::vector<std::vector<double>> rows(c, std::vector<double>(c, off));
  for (std::size_t i = 0; i < c; ++i) rows[i][i] = 1.0 - rate;
  return TransitionMatrix(std::move(rows));
}

TransitionMatrix build_asymmetric(int num_classes, double rate) {
  check_classes(num_classes);
  check_rate(rate);
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<double>> rows(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    rows[i][i] = 1.0 - rate;
    rows[i][(i + 1) % c] += rate;
  }
  return TransitionMatrix(std::move(rows));
}

TransitionMatrix build_transition(const NoiseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case NoiseKind::none:
      return TransitionMatrix::identity(spec.num_domains);
    case NoiseKind::symmetric:
      return build_symmetric(spec.num_domains, spec.rate);
    case NoiseKind::asymmetric:
      return build_asymmetric(spec.num_domains, spec.rate);
    case NoiseKind::per_attribute_flip:
      break;
  }
  throw InvalidSpec("per-attribute flip noise has no transition matrix");
}

std::vector<std::int64_t> corrupt(std::span<const std::int64_t> labels, const TransitionMatrix& transition,
                                  Rng& rng) {
  const int c = transition.num_classes();
  std::vector<std::int64_t> out;
  out.reserve(labels.size());
  for (std::int64_t y : labels) {
    if (y < 0 || y >= c) {
      throw InvalidInput("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const double u = uniform01(rng);
    auto r = transition.row(static_cast<int>(y));
    double cumulative = 0.0;
    std::int64_t drawn = -1;
    for (int j = 0; j < c; ++j) {
      cumulative += r[static_cast<std::size_t>(j)];
      if (u < cumulative) {
        drawn = j;
        break;
      }
    }
    if (drawn < 0) {
      // Row sums can round just below u; take the last class with mass.
      drawn = c - 1;
      while (drawn > 0 && r[static_cast<std::size_t>(drawn)] == 0.0) --drawn;
    }
    out.push_back(drawn);
  }
  return out;
}

std::vector<AttributeVector> corrupt_multilabel(std::span<const AttributeVector> labels, double rate, Rng& rng) {
  check_rate(rate);
  std::vector<AttributeVector> out;
  if (labels.empty()) return out;
  const std::size_t width = labels.front().size();
  out.reserve(labels.size());
  for (const auto& v : labels) {
    if (v.size() != width) throw InvalidInput("attribute vectors must share one length");
    AttributeVector flipped(v);
    for (auto& bit : flipped) {
      if (bit > 1) throw InvalidInput("attribute vectors must be binary");
      if (uniform01(rng) < rate) bit ^= 1U;
    }
    out.push_back(std::move(flipped));
  }
  return out;
}

nlohmann::json corruption_to_json(const NoiseSpec& spec, std::span<const LabelAssignment> assignments) {
  nlohmann::json doc;
  doc["format"] = "rmit-label-noise";
  doc["version"] = 1;
  doc["noise"] = {{"kind", to_string(spec.kind)}, {"rate", spec.rate}, {"num_domains", spec.num_domains}};
  auto& table = doc["assignments"] = nlohmann::json::object();
  for (const auto& a : assignments) {
    if (table.contains(a.sample_id)) throw InvalidInput("duplicate sample id '" + a.sample_id + "'");
    table[a.sample_id] = {{"clean", a.clean}, {"noisy", a.noisy}};
  }
  return doc;
}

std::vector<LabelAssignment> corruption_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "rmit-label-noise") throw InvalidInput("not a label-noise sidecar");
  std::vector<LabelAssignment> out;
  for (const auto& [id, entry] : doc.at("assignments").items()) {
    out.push_back({id, entry.at("clean").get<std::int64_t>(), entry.at("noisy").get<std::int64_t>()});
  }
  return out;
}

void write_corruption_sidecar(const std::filesystem::path& path, const NoiseSpec& spec,
                              std::span<const LabelAssignment> assignments) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot write " + path.string());
  os << corruption_to_json(spec, assignments).dump(1) << '\n';
}

std::vector<LabelAssignment> read_corruption_sidecar(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path.string());
  return corruption_from_json(nlohmann::json::parse(is));
}

}  // namespace rmit
