#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace instructir {

// Images are float32 tensors of shape (3, H, W), RGB, values in [0, 1].
//
// Decoding accepts 8/16-bit PNG and 8-bit JPEG; grayscale is replicated to
// three channels and alpha is dropped. 16-bit samples are scaled by 1/65535.
torch::Tensor decode_image(std::span<const std::uint8_t> bytes);
torch::Tensor load_image(const std::filesystem::path& path);

// 8-bit RGB PNG. Values are clamped to [0,1] and rounded to nearest.
std::vector<std::uint8_t> encode_png(const torch::Tensor& image);
// The values decode_image(encode_png(image)) returns, without the codec.
torch::Tensor quantize_8bit(const torch::Tensor& image);
// 16-bit RGB PNG, mainly for lossless fixtures.
std::vector<std::uint8_t> encode_png16(const torch::Tensor& image);
void save_png(const std::filesystem::path& path, const torch::Tensor& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Throws ShapeError unless `image` is a finite (3,H,W) tensor.
void check_image(const torch::Tensor& image, std::string_view what);

}  // namespace instructir
