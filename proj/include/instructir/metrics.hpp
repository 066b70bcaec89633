#pragma once

#include <torch/torch.h>

namespace instructir {

// All metrics take (3, H, W) RGB tensors in [0, 1] and compute in double.

// 10 log10(1 / MSE), MSE over all channels and pixels. +inf when identical.
double psnr(const torch::Tensor& restored, const torch::Tensor& reference);

// SSIM on luma Y = 0.299 R + 0.587 G + 0.114 B, 11x11 Gaussian window with
// sigma 1.5, valid windows only, C1 = 0.01^2, C2 = 0.03^2. ShapeError when
// either side is below 11 pixels.
double ssim(const torch::Tensor& restored, const torch::Tensor& reference);

// Mean CIE76 colour difference: sRGB (D65) -> CIELAB, Euclidean distance per
// pixel. Inputs outside [0, 1] are clipped with a warning.
double delta_e(const torch::Tensor& restored, const torch::Tensor& reference);

// (3, H, W) sRGB in [0, 1] -> (3, H, W) L*, a*, b* in double.
torch::Tensor srgb_to_lab(const torch::Tensor& rgb);

}  // namespace instructir
