#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace rmit {

/// Single-file archive: "RMITCKPT", u32 format version, a JSON manifest and
/// a list of named tensors stored as dtype, shape and raw little-endian
/// bytes. Entries keep insertion order so equal contents serialize to equal
/// bytes.
class CheckpointArchive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json& manifest() { return manifest_; }
  const nlohmann::json& manifest() const { return manifest_; }

  void add(std::string name, const torch::Tensor& value);  // InvalidInput on duplicates
  bool contains(std::string_view name) const;
  const torch::Tensor& get(std::string_view name) const;  // InvalidInput when absent
  const std::vector<std::pair<std::string, torch::Tensor>>& entries() const { return entries_; }

  std::string serialize() const;
  static CheckpointArchive deserialize(std::string_view bytes);  // InvalidInput on malformed data

  // Writes to a sibling temporary file and renames it into place.
  void save(const std::filesystem::path& path) const;
  static CheckpointArchive load(const std::filesystem::path& path);

 private:
  nlohmann::json manifest_ = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> entries_;
};

// Parameters and buffers as "<prefix>/<name>" entries, and the reverse.
void add_module(CheckpointArchive& archive, const std::string& prefix, const torch::nn::Module& module);
void load_module(const CheckpointArchive& archive, const std::string& prefix, torch::nn::Module& module);

// Adam moments and step counts keyed by parameter position.
void add_adam(CheckpointArchive& archive, const std::string& prefix, torch::optim::Adam& optimizer);
void load_adam(const CheckpointArchive& archive, const std::string& prefix, torch::optim::Adam& optimizer);

}  // namespace rmit
