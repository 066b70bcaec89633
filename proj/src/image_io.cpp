#include "instructir/image_io.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "instructir/common.hpp"

namespace instructir {

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& mat) {
  double scale = 0.0;
  switch (mat.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw DecodeError("unsupported sample depth " + std::to_string(mat.depth()));
  }
  cv::Mat rgb;
  switch (mat.channels()) {
    case 1: cv::merge(std::vector<cv::Mat>{mat, mat, mat}, rgb); break;
    case 3: {
      std::vector<cv::Mat> ch;
      cv::split(mat, ch);
      cv::merge(std::vector<cv::Mat>{ch[2], ch[1], ch[0]}, rgb);
      break;
    }
    case 4: {
      std::vector<cv::Mat> ch;
      cv::split(mat, ch);
      cv::merge(std::vector<cv::Mat>{ch[2], ch[1], ch[0]}, rgb);
      break;
    }
    default: throw DecodeError("unsupported channel count " + std::to_string(mat.channels()));
  }
  cv::Mat as_float;
  rgb.convertTo(as_float, CV_32FC3, scale);
  auto hwc = torch::from_blob(as_float.data, {as_float.rows, as_float.cols, 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

template <typename T>
cv::Mat tensor_to_mat(const torch::Tensor& image, double max_value, int cv_type) {
  check_image(image, "image");
  auto hwc = image.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(max_value).round()
                 .permute({1, 2, 0}).contiguous();
  const auto h = static_cast<int>(hwc.size(0));
  const auto w = static_cast<int>(hwc.size(1));
  cv::Mat bgr(h, w, cv_type);
  auto acc = hwc.accessor<double, 3>();
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<T>(y);
    for (int x = 0; x < w; ++x) {
      row[3 * x + 0] = static_cast<T>(acc[y][x][2]);
      row[3 * x + 1] = static_cast<T>(acc[y][x][1]);
      row[3 * x + 2] = static_cast<T>(acc[y][x][0]);
    }
  }
  return bgr;
}

std::vector<std::uint8_t> encode_mat(const cv::Mat& mat) {
  std::vector<std::uint8_t> out;
  const std::vector<int> params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imencode(".png", mat, out, params)) throw IoError("PNG encoding failed");
  return out;
}

}  // namespace

void check_image(const torch::Tensor& image, std::string_view what) {
  if (!image.defined() || image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError(std::string(what) + ": expected a (3,H,W) tensor");
  }
  if (!torch::isfinite(image).all().item<bool>()) {
    throw NumericError(std::string(what) + ": non-finite values");
  }
}

torch::Tensor decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image buffer");
  cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw DecodeError("could not decode image data");
  return mat_to_tensor(mat);
}

torch::Tensor quantize_8bit(const torch::Tensor& image) {
  return mat_to_tensor(tensor_to_mat<std::uint8_t>(image, 255.0, CV_8UC3));
}

torch::Tensor load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file: " + path.string());
  auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const torch::Tensor& image) {
  return encode_mat(tensor_to_mat<std::uint8_t>(image, 255.0, CV_8UC3));
}

std::vector<std::uint8_t> encode_png16(const torch::Tensor& image) {
  return encode_mat(tensor_to_mat<std::uint16_t>(image, 65535.0, CV_16UC3));
}

void save_png(const std::filesystem::path& path, const torch::Tensor& image) {
  write_file_atomic(path, encode_png(image));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  // Accepts an optional data-URL prefix ("data:image/png;base64,...").
  if (auto comma = text.find(','); text.starts_with("data:") && comma != std::string_view::npos) {
    text.remove_prefix(comma + 1);
  }
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    int v;
    if (c >= 'A' && c <= 'Z') v = c - 'A';
    else if (c >= 'a' && c <= 'z') v = c - 'a' + 26;
    else if (c >= '0' && c <= '9') v = c - '0' + 52;
    else if (c == '+' || c == '-') v = 62;
    else if (c == '/' || c == '_') v = 63;
    else if (c == '=' || c == '\n' || c == '\r' || c == ' ') continue;
    else throw DecodeError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace instructir
