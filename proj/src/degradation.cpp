#include "instructir/degradation.hpp"

#include <cmath>

#include "instructir/image_io.hpp"

namespace instructir {

namespace {

struct Taps {
  std::vector<std::int64_t> index;  // clamped source indices
  std::vector<double> weight;       // normalized to sum 1
  std::int64_t ref = 0;             // nearest source sample
};

std::vector<Taps> resample_taps(std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double stretch = scale < 1.0 ? scale : 1.0;
  const double support = 2.0 / stretch;
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / scale - 0.5;
    auto& t = taps[static_cast<std::size_t>(i)];
    const auto first = static_cast<std::int64_t>(std::floor(x - support));
    const auto last = static_cast<std::int64_t>(std::ceil(x + support));
    double sum = 0.0;
    for (std::int64_t j = first; j <= last; ++j) {
      const double w = stretch * cubic_kernel(stretch * (x - static_cast<double>(j)));
      if (w == 0.0) continue;
      t.index.push_back(std::clamp<std::int64_t>(j, 0, in - 1));
      t.weight.push_back(w);
      sum += w;
    }
    for (auto& w : t.weight) w /= sum;
    t.ref = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(x)), 0, in - 1);
  }
  return taps;
}

// out = src[ref] + sum_j w_j (src[j] - src[ref]); identical to sum_j w_j src[j]
// for normalized weights, but reproduces constant signals bit-exactly.
template <typename Get>
double apply_taps(const Taps& t, Get&& get) {
  const double ref = get(t.ref);
  double acc = 0.0;
  for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * (get(t.index[k]) - ref);
  return ref + acc;
}

}  // namespace

torch::Tensor add_gaussian_noise(const torch::Tensor& clean, double sigma, Rng& rng) {
  check_image(clean, "clean image");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be finite and non-negative");
  if (sigma != 0.0 && sigma != 15.0 && sigma != 25.0 && sigma != 50.0) {
    warn("noise sigma " + std::to_string(sigma) + " is outside the standard levels {15, 25, 50}");
  }
  auto out = clean.to(torch::kFloat32).contiguous().clone();
  if (sigma == 0.0) return out;
  const double std_dev = sigma / 255.0;
  auto* p = out.data_ptr<float>();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double v = static_cast<double>(p[i]) + std_dev * rng.normal();
    p[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

torch::Tensor bicubic_resize(const torch::Tensor& image, std::int64_t out_height, std::int64_t out_width) {
  if (image.dim() != 3) throw ShapeError("bicubic_resize expects a (C, H, W) tensor");
  if (out_height < 1 || out_width < 1) throw ShapeError("bicubic_resize target must be at least 1x1");
  const auto c = image.size(0);
  const auto h = image.size(1);
  const auto w = image.size(2);
  auto src = image.to(torch::kFloat64).contiguous();
  const auto col_taps = resample_taps(w, out_width);
  const auto row_taps = resample_taps(h, out_height);

  auto mid = torch::empty({c, h, out_width}, torch::kFloat64);
  auto s = src.accessor<double, 3>();
  auto m = mid.accessor<double, 3>();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < out_width; ++x) {
        m[ch][y][x] = apply_taps(col_taps[static_cast<std::size_t>(x)], [&](std::int64_t j) { return s[ch][y][j]; });
      }
    }
  }
  auto out = torch::empty({c, out_height, out_width}, torch::kFloat64);
  auto o = out.accessor<double, 3>();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < out_height; ++y) {
      const auto& t = row_taps[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < out_width; ++x) {
        o[ch][y][x] = apply_taps(t, [&](std::int64_t j) { return m[ch][j][x]; });
      }
    }
  }
  return out.to(torch::kFloat32);
}

torch::Tensor bicubic_degrade(const torch::Tensor& clean, std::int64_t scale) {
  check_image(clean, "clean image");
  if (scale < 2) throw ConfigError("bicubic scale must be an integer >= 2");
  const auto h = clean.size(1);
  const auto w = clean.size(2);
  if (h < scale || w < scale) {
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than scale " +
                     std::to_string(scale));
  }
  auto low = bicubic_resize(clean, h / scale, w / scale);
  return bicubic_resize(low, h, w).clamp(0.0, 1.0);
}

void DegradationSpec::validate() const {
  if (kind == Kind::Noise && !(sigma >= 0.0 && std::isfinite(sigma))) {
    throw ConfigError("noise sigma must be finite and non-negative");
  }
  if (kind == Kind::Bicubic && scale < 2) throw ConfigError("bicubic scale must be an integer >= 2");
}

nlohmann::ordered_json DegradationSpec::to_json() const {
  nlohmann::ordered_json j;
  if (kind == Kind::Noise) {
    j["type"] = "gaussian_noise";
    j["sigma"] = sigma;
  } else {
    j["type"] = "bicubic";
    j["scale"] = scale;
  }
  return j;
}

DegradationSpec DegradationSpec::from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  DegradationSpec s;
  if (type == "gaussian_noise" || type == "noise") {
    s = noise(j.at("sigma").get<double>());
  } else if (type == "bicubic") {
    s = bicubic(j.at("scale").get<std::int64_t>());
  } else {
    throw ParseError("unknown degradation type '" + type + "'");
  }
  s.validate();
  return s;
}

torch::Tensor apply_degradation(const torch::Tensor& clean, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  return spec.kind == DegradationSpec::Kind::Noise ? add_gaussian_noise(clean, spec.sigma, rng)
                                                   : bicubic_degrade(clean, spec.scale);
}

}  // namespace instructir
