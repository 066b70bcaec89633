#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace instructir {

struct ModelConfig {
  std::int64_t width = 32;  // c0; level l has width c0 * 2^l
  std::vector<std::int64_t> encoder_depths{2, 2, 4, 8};
  std::vector<std::int64_t> decoder_depths{2, 2, 2, 2};
  std::int64_t middle_blocks = 4;
  std::int64_t embed_dim = 256;  // d_v
  // Zero the output convolution so an untrained model returns its input.
  bool identity_init = true;

  std::int64_t levels() const { return static_cast<std::int64_t>(encoder_depths.size()); }
  // Spatial size multiple required by the down-sampling path.
  std::int64_t size_multiple() const { return std::int64_t{1} << levels(); }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Channel layer norm: normalizes across channels at each pixel, then applies
// a per-channel affine transform.
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(std::int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  double eps_;
};
TORCH_MODULE(LayerNorm2d);

// NAF block: two residual sub-units with learnable per-channel scales.
//   spatial: norm -> 1x1 (c->2c) -> 3x3 depthwise -> gate -> channel attention -> 1x1 (c->c)
//   channel: norm -> 1x1 (c->2c) -> gate -> 1x1 (c->c)
// where gate splits channels in half and multiplies the halves.
class NAFBlockImpl : public torch::nn::Module {
 public:
  explicit NAFBlockImpl(std::int64_t channels);

  // x + residual(x)
  torch::Tensor forward(const torch::Tensor& x);
  // The residual branch alone; exactly zero when both scales are zero.
  torch::Tensor residual(const torch::Tensor& x);

  std::int64_t channels() const { return channels_; }

  LayerNorm2d norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d expand1{nullptr}, depthwise{nullptr}, attention{nullptr}, project1{nullptr};
  torch::nn::Conv2d expand2{nullptr}, project2{nullptr};
  torch::Tensor beta, gamma;  // residual scales, [1, c, 1, 1], zero-initialized

 private:
  torch::Tensor spatial(const torch::Tensor& x);
  torch::Tensor channel(const torch::Tensor& x);

  std::int64_t channels_;
};
TORCH_MODULE(NAFBlock);

torch::Tensor simple_gate(const torch::Tensor& x);

// Instruction condition block: F' = F + Block_residual(F * m), m = sigmoid(W_c e).
// The routing projection W_c is bias-free, so W_c = 0 gives m = 0.5.
class InstructionConditionBlockImpl : public torch::nn::Module {
 public:
  InstructionConditionBlockImpl(std::int64_t channels, std::int64_t embed_dim);

  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& embedding);
  torch::Tensor mask(const torch::Tensor& embedding);  // [B, c], entries in (0, 1)

  torch::nn::Linear routing{nullptr};
  NAFBlock block{nullptr};
};
TORCH_MODULE(InstructionConditionBlock);

// Four-level encoder/decoder of NAF blocks with one instruction condition block
// after each encoder and decoder level, additive skips and a global residual.
class RestorationNetImpl : public torch::nn::Module {
 public:
  explicit RestorationNetImpl(ModelConfig config);

  // image: [B, 3, H, W]; embedding: [B, d_v]. Arbitrary H, W: the input is
  // reflect-padded to the size multiple and the output cropped back.
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& embedding);

  // Routing masks of every condition block: encoder levels, then decoder
  // levels, each finest first.
  std::vector<torch::Tensor> routing_masks(const torch::Tensor& embedding);

  const ModelConfig& config() const { return config_; }

  torch::nn::Conv2d intro{nullptr}, ending{nullptr};
  std::vector<torch::nn::Sequential> encoders, decoders;
  std::vector<InstructionConditionBlock> encoder_conditions, decoder_conditions;
  std::vector<torch::nn::Conv2d> downs;
  std::vector<torch::nn::Sequential> ups;
  torch::nn::Sequential middle{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(RestorationNet);

std::int64_t count_module_parameters(torch::nn::Module& module);

}  // namespace instructir
