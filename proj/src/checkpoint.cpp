#include "instructir/checkpoint.hpp"

#include <cstring>

#include "instructir/common.hpp"
#include "instructir/image_io.hpp"

namespace instructir {

namespace {

constexpr char kMagic[8] = {'I', 'R', 'C', 'K', 'P', 'T', '\0', '\1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    default: throw UnsupportedError(std::string("unsupported checkpoint dtype ") + c10::toString(t));
  }
}

torch::ScalarType parse_dtype(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "int32") return torch::kInt32;
  if (name == "uint8") return torch::kUInt8;
  throw ParseError("unknown tensor dtype '" + name + "'");
}

}  // namespace

void Checkpoint::add(std::string name, const torch::Tensor& tensor) {
  if (has(name)) throw ConfigError("duplicate checkpoint tensor '" + name + "'");
  tensors.emplace_back(std::move(name), tensor.detach().cpu().contiguous().clone());
}

bool Checkpoint::has(std::string_view name) const {
  for (const auto& [n, _] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::at(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ParseError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> Checkpoint::with_prefix(std::string_view prefix) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [n, t] : tensors) {
    if (n.starts_with(prefix)) out.emplace_back(n.substr(prefix.size()), t);
  }
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "instructir-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["meta"] = checkpoint.meta;
  auto entries = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : checkpoint.tensors) {
    const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    entries.push_back({{"name", name},
                       {"dtype", dtype_name(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = entries;
  const auto text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.reserve(sizeof kMagic + 8 + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + sizeof kMagic);
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : checkpoint.tensors) {
    auto c = t.contiguous();
    const auto* p = static_cast<const std::uint8_t*>(c.data_ptr());
    out.insert(out.end(), p, p + c.numel() * c.element_size());
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
    throw ParseError("not an instructir checkpoint");
  }
  if (bytes[7] != static_cast<std::uint8_t>(kCheckpointVersion)) {
    throw UnsupportedError("checkpoint container version " + std::to_string(bytes[7]) + " is not supported");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[sizeof kMagic + i]) << (8 * i);
  const std::size_t header = sizeof kMagic + 8;
  if (len > bytes.size() - header) throw ParseError("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + header, bytes.begin() + header + len);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != kCheckpointVersion) throw UnsupportedError("checkpoint manifest version mismatch");

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  const auto payload = bytes.subspan(header + len);
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = parse_dtype(entry.at("dtype").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (offset + nbytes > payload.size()) throw ParseError("tensor '" + name + "' exceeds checkpoint payload");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel()) * t.element_size() != nbytes) {
      throw ParseError("tensor '" + name + "' size does not match its shape");
    }
    std::memcpy(t.data_ptr(), payload.data() + offset, nbytes);
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint: " + path.string());
  return parse_checkpoint(read_file(path));
}

void store_module(Checkpoint& checkpoint, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) checkpoint.add(prefix + item.key(), item.value());
  for (const auto& item : module.named_buffers()) checkpoint.add(prefix + item.key(), item.value());
}

void load_module(const Checkpoint& checkpoint, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    const auto& src = checkpoint.at(prefix + key);
    if (src.sizes() != target.sizes()) {
      throw ShapeError("checkpoint tensor '" + prefix + key + "' has shape " + c10::str(src.sizes()) +
                       ", model expects " + c10::str(target.sizes()));
    }
    target.copy_(src);
  };
  for (auto& item : module.named_parameters()) assign(item.key(), item.value());
  for (auto& item : module.named_buffers()) assign(item.key(), item.value());
}

std::uint64_t tensor_checksum(const torch::Tensor& tensor, std::uint64_t seed) {
  auto c = tensor.detach().cpu().contiguous();
  return fnv1a64(std::string_view(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size()), seed);
}

std::uint64_t parameters_checksum(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors) h = tensor_checksum(t, h);
  return h;
}

}  // namespace instructir
