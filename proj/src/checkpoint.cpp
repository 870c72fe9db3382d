#include "rmit/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rmit/error.hpp"

namespace rmit {
namespace {

constexpr char kMagic[8] = {'R', 'M', 'I', 'T', 'C', 'K', 'P', 'T'};

struct DtypeCode {
  torch::ScalarType type;
  std::uint8_t code;
};
constexpr DtypeCode kDtypes[] = {
    {torch::kFloat, 1}, {torch::kDouble, 2}, {torch::kLong, 3}, {torch::kInt, 4}, {torch::kByte, 5}, {torch::kBool, 6},
};

std::uint8_t dtype_code(torch::ScalarType t) {
  for (const auto& d : kDtypes) {
    if (d.type == t) return d.code;
  }
  throw InvalidInput(std::string("unsupported checkpoint dtype ") + c10::toString(t));
}

torch::ScalarType dtype_from_code(std::uint8_t code) {
  for (const auto& d : kDtypes) {
    if (d.code == code) return d.type;
  }
  throw InvalidInput("unknown dtype code in checkpoint");
}

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_bytes(std::string& out, std::string_view bytes) {
  put<std::uint64_t>(out, bytes.size());
  out.append(bytes);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string_view raw(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw InvalidInput("truncated checkpoint");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void CheckpointArchive::add(std::string name, const torch::Tensor& value) {
  if (contains(name)) throw InvalidInput("duplicate checkpoint entry '" + name + "'");
  if (!value.defined()) throw InvalidInput("undefined tensor for checkpoint entry '" + name + "'");
  entries_.emplace_back(std::move(name), value.detach().cpu().contiguous().clone());
}

bool CheckpointArchive::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const torch::Tensor& CheckpointArchive::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw InvalidInput("checkpoint has no entry '" + std::string(name) + "'");
}

std::string CheckpointArchive::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put_bytes(out, manifest_.dump());
  put<std::uint64_t>(out, entries_.size());
  for (const auto& [name, t] : entries_) {
    put_bytes(out, name);
    put<std::uint8_t>(out, dtype_code(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) put<std::int64_t>(out, s);
    put_bytes(out, std::string_view(static_cast<const char*>(t.data_ptr()), t.nbytes()));
  }
  return out;
}

CheckpointArchive CheckpointArchive::deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw InvalidInput("not a checkpoint file");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
  CheckpointArchive archive;
  try {
    archive.manifest_ = nlohmann::json::parse(in.bytes());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(in.bytes());
    const auto dtype = dtype_from_code(in.get<std::uint8_t>());
    const auto dims = in.get<std::uint32_t>();
    std::vector<std::int64_t> shape(dims);
    for (auto& s : shape) s = in.get<std::int64_t>();
    auto data = in.bytes();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (data.size() != t.nbytes()) throw InvalidInput("size mismatch for checkpoint entry '" + name + "'");
    std::memcpy(t.data_ptr(), data.data(), data.size());
    archive.entries_.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw InvalidInput("trailing bytes after checkpoint entries");
  return archive;
}

void CheckpointArchive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidInput("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointArchive CheckpointArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void add_module(CheckpointArchive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) archive.add(prefix + "/" + p.key(), p.value());
  for (const auto& b : module.named_buffers()) archive.add(prefix + "/" + b.key(), b.value());
}

void load_module(const CheckpointArchive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& key, torch::Tensor& target) {
    const auto& source = archive.get(prefix + "/" + key);
    if (source.sizes() != target.sizes()) throw InvalidInput("shape mismatch for '" + prefix + "/" + key + "'");
    target.copy_(source);
  };
  for (auto& p : module.named_parameters()) copy(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy(b.key(), b.value());
}

void add_adam(CheckpointArchive& archive, const std::string& prefix, torch::optim::Adam& optimizer) {
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = prefix + "/" + std::to_string(index++);
      auto it = optimizer.state().find(p.unsafeGetTensorImpl());
      if (it == optimizer.state().end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      archive.add(key + "/step", torch::tensor(s.step(), torch::kLong));
      archive.add(key + "/exp_avg", s.exp_avg());
      archive.add(key + "/exp_avg_sq", s.exp_avg_sq());
      if (s.max_exp_avg_sq().defined()) archive.add(key + "/max_exp_avg_sq", s.max_exp_avg_sq());
    }
  }
}

void load_adam(const CheckpointArchive& archive, const std::string& prefix, torch::optim::Adam& optimizer) {
  optimizer.state().clear();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = prefix + "/" + std::to_string(index++);
      if (!archive.contains(key + "/step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(archive.get(key + "/step").item<std::int64_t>());
      s->exp_avg(archive.get(key + "/exp_avg").clone());
      s->exp_avg_sq(archive.get(key + "/exp_avg_sq").clone());
      if (archive.contains(key + "/max_exp_avg_sq")) s->max_exp_avg_sq(archive.get(key + "/max_exp_avg_sq").clone());
      optimizer.state()[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

}  // namespace rmit
