#pragma once

#include <cstdint>
#include <optional>

#include <json.hpp>
#include <torch/torch.h>

#include "instructir/common.hpp"

namespace instructir {

// clip(clean + n, 0, 1), n ~ N(0, (sigma/255)^2) i.i.d. per pixel and channel,
// drawn from `rng` in (c, y, x) order. sigma is on the 8-bit scale; values
// outside {15, 25, 50} are accepted with a warning.
torch::Tensor add_gaussian_noise(const torch::Tensor& clean, double sigma, Rng& rng);

// Cubic convolution kernel, a = -0.5.
double cubic_kernel(double x);

// Separable bicubic resampling with edge replication. When shrinking, the
// kernel is stretched by the scale factor (anti-aliased, as MATLAB imresize).
// Works on (C, H, W) tensors, computes in double, returns float32. Not clipped.
torch::Tensor bicubic_resize(const torch::Tensor& image, std::int64_t out_height, std::int64_t out_width);

// Down-sample by `scale` then up-sample back to the original size; clipped to [0, 1].
torch::Tensor bicubic_degrade(const torch::Tensor& clean, std::int64_t scale);

struct DegradationSpec {
  enum class Kind { Noise, Bicubic };
  Kind kind = Kind::Noise;
  double sigma = 25.0;     // Noise
  std::int64_t scale = 2;  // Bicubic

  static DegradationSpec noise(double sigma) { return {Kind::Noise, sigma, 2}; }
  static DegradationSpec bicubic(std::int64_t scale) { return {Kind::Bicubic, 0.0, scale}; }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static DegradationSpec from_json(const nlohmann::json& j);
  bool operator==(const DegradationSpec&) const = default;
};

torch::Tensor apply_degradation(const torch::Tensor& clean, const DegradationSpec& spec, Rng& rng);

}  // namespace instructir
