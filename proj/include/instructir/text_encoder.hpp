#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include <json.hpp>
#include <torch/torch.h>

namespace instructir {

// Frozen sentence encoder E: text -> R^{d_t}. Implementations hold no
// trainable state; encode() never records autograd history.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;

  virtual torch::Tensor encode(std::string_view text) const = 0;  // float32 [d_t]
  virtual std::int64_t dim() const = 0;
  virtual std::string name() const = 0;
  // Digest of every value the encoder depends on.
  virtual std::uint64_t checksum() const = 0;

  torch::Tensor encode_batch(std::span<const std::string> texts) const;  // [B, d_t]
};

// Deterministic bag-of-n-grams encoder: lower-cased alphanumeric tokens and
// adjacent bigrams are hashed into a fixed Gaussian feature table and averaged.
// Needs no download, so tests and CI use it.
class HashingEncoder final : public SentenceEncoder {
 public:
  HashingEncoder(std::int64_t dim = 384, std::int64_t buckets = 4096, std::uint64_t seed = 0x1b5eed);

  torch::Tensor encode(std::string_view text) const override;
  std::int64_t dim() const override { return dim_; }
  std::string name() const override { return "hashing"; }
  std::uint64_t checksum() const override;

  const torch::Tensor& table() const { return table_; }

 private:
  std::int64_t dim_;
  std::int64_t buckets_;
  std::uint64_t seed_;
  torch::Tensor table_;  // [buckets, dim], requires_grad = false
};

// Adapter for an external pretrained sentence encoder: embeddings are computed
// offline (see tools/encode_prompts.py) and stored as JSON lines
// {"text": ..., "embedding": [...]}; lookups use normalized text.
class PrecomputedEncoder final : public SentenceEncoder {
 public:
  explicit PrecomputedEncoder(const std::filesystem::path& cache_path);

  torch::Tensor encode(std::string_view text) const override;
  std::int64_t dim() const override { return dim_; }
  std::string name() const override { return "precomputed:" + model_name_; }
  std::uint64_t checksum() const override { return checksum_; }

 private:
  std::unordered_map<std::string, torch::Tensor> table_;
  std::int64_t dim_ = 0;
  std::string model_name_;
  std::uint64_t checksum_ = 0;
};

struct EncoderSpec {
  std::string kind = "hashing";  // "hashing" | "precomputed"
  std::int64_t dim = 384;
  std::int64_t buckets = 4096;
  std::uint64_t seed = 0x1b5eed;
  std::string path;  // embedding cache for "precomputed"

  nlohmann::json to_json() const;
  static EncoderSpec from_json(const nlohmann::json& j);
};

std::shared_ptr<const SentenceEncoder> make_encoder(const EncoderSpec& spec);

}  // namespace instructir
