#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <torch/torch.h>

#include "instructir/common.hpp"
#include "instructir/dataset.hpp"
#include "instructir/image_io.hpp"
#include "instructir/model.hpp"
#include "instructir/prompt_bank.hpp"

namespace testing {

using namespace instructir;

inline InstructIRConfig toy_config(std::int64_t width, std::vector<std::int64_t> enc, std::vector<std::int64_t> dec,
                                   std::int64_t middle, std::int64_t text_dim, std::int64_t embed_dim,
                                   std::string task_set = "5D") {
  InstructIRConfig c;
  c.model.width = width;
  c.model.encoder_depths = std::move(enc);
  c.model.decoder_depths = std::move(dec);
  c.model.middle_blocks = middle;
  c.model.embed_dim = embed_dim;
  c.encoder.dim = text_dim;
  c.encoder.buckets = 512;
  c.task_set = std::move(task_set);
  return c;
}

// Small model used across unit tests: c0 = 4, one block per level.
inline InstructIRConfig tiny_config(std::string task_set = "5D") {
  return toy_config(4, {1, 1, 1, 1}, {1, 1, 1, 1}, 1, 16, 8, std::move(task_set));
}

// Gives every zero-initialized scale a random value so all parameters carry gradient.
inline void randomize_scales(InstructIRModel& model, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& item : model.net()->named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name.find("beta") != std::string::npos || name.find("gamma") != std::string::npos ||
        name.find("ending") != std::string::npos) {
      p.copy_(torch::randn(p.sizes(), gen, p.options()) * 0.5);
    }
  }
}

// Smooth procedural RGB image in [0, 1]: a few random sinusoids and blobs.
inline torch::Tensor synthetic_image(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  Rng rng(seed);
  auto y = torch::arange(h, torch::kFloat64).view({h, 1}).expand({h, w}) / static_cast<double>(h);
  auto x = torch::arange(w, torch::kFloat64).view({1, w}).expand({h, w}) / static_cast<double>(w);
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < 3; ++c) {
    auto v = torch::full({h, w}, 0.3 + 0.4 * rng.uniform(), torch::kFloat64);
    for (int k = 0; k < 3; ++k) {
      const double fx = 1 + 5 * rng.uniform(), fy = 1 + 5 * rng.uniform(), ph = 6.283 * rng.uniform();
      v = v + 0.12 * torch::sin(6.283 * (fx * x + fy * y) + ph);
    }
    const double cx = rng.uniform(), cy = rng.uniform();
    v = v + 0.2 * torch::exp(-((x - cx).pow(2) + (y - cy).pow(2)) / 0.02);
    channels.push_back(v);
  }
  return torch::stack(channels).clamp(0.0, 1.0).to(torch::kFloat32);
}

inline torch::Tensor random_image(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand({3, h, w}, gen, torch::kFloat32);
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("instructir_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ---- brute-force metric oracles (scalar loops, double precision) ----

inline double at3(const torch::Tensor& t, int c, int y, int x) {
  return t.accessor<float, 3>()[c][y][x];
}

inline double psnr_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < a.size(0); ++c)
    for (int y = 0; y < a.size(1); ++y)
      for (int x = 0; x < a.size(2); ++x) {
        const double d = at3(a, c, y, x) - at3(b, c, y, x);
        sum += d * d;
        ++n;
      }
  return 10.0 * std::log10(1.0 / (sum / n));
}

inline double ssim_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  const int h = static_cast<int>(a.size(1)), w = static_cast<int>(a.size(2));
  auto luma = [](const torch::Tensor& t, int y, int x) {
    return 0.299 * at3(t, 0, y, x) + 0.587 * at3(t, 1, y, x) + 0.114 * at3(t, 2, y, x);
  };
  double g[11][11];
  double gsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      gsum += g[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int windows = 0;
  for (int y0 = 0; y0 + 11 <= h; ++y0)
    for (int x0 = 0; x0 + 11 <= w; ++x0) {
      double ma = 0, mb = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          ma += g[i][j] / gsum * luma(a, y0 + i, x0 + j);
          mb += g[i][j] / gsum * luma(b, y0 + i, x0 + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double da = luma(a, y0 + i, x0 + j) - ma, db = luma(b, y0 + i, x0 + j) - mb;
          va += g[i][j] / gsum * da * da;
          vb += g[i][j] / gsum * db * db;
          cov += g[i][j] / gsum * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  return total / windows;
}

inline void lab_oracle(double r, double g, double b, double out[3]) {
  auto lin = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
  r = lin(r);
  g = lin(g);
  b = lin(b);
  const double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  auto f = [](double t) {
    const double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(X / 0.95047), fy = f(Y), fz = f(Z / 1.08883);
  out[0] = 116 * fy - 16;
  out[1] = 500 * (fx - fy);
  out[2] = 200 * (fy - fz);
}

inline double delta_e_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y < a.size(1); ++y)
    for (int x = 0; x < a.size(2); ++x) {
      double la[3], lb[3];
      lab_oracle(at3(a, 0, y, x), at3(a, 1, y, x), at3(a, 2, y, x), la);
      lab_oracle(at3(b, 0, y, x), at3(b, 1, y, x), at3(b, 2, y, x), lb);
      sum += std::sqrt((la[0] - lb[0]) * (la[0] - lb[0]) + (la[1] - lb[1]) * (la[1] - lb[1]) +
                       (la[2] - lb[2]) * (la[2] - lb[2]));
      ++n;
    }
  return sum / n;
}

// ---- overfit fixtures: four fixed (image, degradation, prompt) tuples ----

struct Tuple {
  Task task;
  std::string prompt;
  std::string clean;
  std::string degraded;
};

inline torch::Tensor rain_streaks(const torch::Tensor& clean, std::uint64_t seed) {
  Rng rng(seed);
  auto out = clean.clone();
  auto a = out.accessor<float, 3>();
  const int h = static_cast<int>(clean.size(1)), w = static_cast<int>(clean.size(2));
  for (int s = 0; s < h * w / 40; ++s) {
    int x = static_cast<int>(rng.uniform_index(w)), y = static_cast<int>(rng.uniform_index(h));
    const int len = 3 + static_cast<int>(rng.uniform_index(5));
    for (int k = 0; k < len && y + k < h && x + k / 3 < w; ++k)
      for (int c = 0; c < 3; ++c) a[c][y + k][x + k / 3] = std::min(1.0f, a[c][y + k][x + k / 3] * 0.4f + 0.6f);
  }
  return out;
}

inline std::vector<Tuple> write_overfit_fixtures(const std::filesystem::path& dir, std::int64_t size) {
  std::vector<Tuple> tuples{
      {Task::Denoising, "Remove the noise from my picture", "c0.png", "d0.png"},
      {Task::Deraining, "Clear the rain from my picture", "c1.png", "d1.png"},
      {Task::Dehazing, "Remove the haze from this photo", "c2.png", "d2.png"},
      {Task::LowLight, "Make this dark photo brighter", "c3.png", "d3.png"},
  };
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    auto clean = synthetic_image(100 + i, size, size);
    torch::Tensor degraded;
    Rng rng(200 + i);
    switch (tuples[i].task) {
      case Task::Denoising: {
        auto noise = torch::empty_like(clean);
        auto n = noise.accessor<float, 3>();
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) n[c][y][x] = static_cast<float>(rng.normal() * 25.0 / 255.0);
        degraded = (clean + noise).clamp(0.0, 1.0);
        break;
      }
      case Task::Deraining:
        degraded = rain_streaks(clean, 300 + i);
        break;
      case Task::Dehazing:
        degraded = clean * 0.55 + 0.4;
        break;
      default:
        degraded = clean.pow(1.6) * 0.35;
        break;
    }
    save_png(dir / tuples[i].clean, clean);
    save_png(dir / tuples[i].degraded, degraded);
  }
  return tuples;
}

inline DatasetManifest tuples_manifest(const std::filesystem::path& dir, const std::vector<Tuple>& tuples) {
  DatasetManifest m;
  m.root = dir;
  for (const auto& t : tuples) m.records.push_back({t.clean, t.task, t.degraded, std::nullopt});
  return m;
}

inline PromptBank tuples_bank(const std::vector<Tuple>& tuples) {
  std::vector<PromptRecord> records;
  for (const auto& t : tuples) records.push_back({t.prompt, t.task, LanguageLevel::BasicPrecise, Split::Train});
  return PromptBank(std::move(records));
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace testing

namespace testing {

// Collects warnings for the lifetime of the object, then silences them again.
class WarningCapture {
 public:
  WarningCapture() {
    instructir::set_warning_handler([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() {
    instructir::set_warning_handler([](std::string_view) {});
  }
  bool contains(std::string_view needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
  std::vector<std::string> messages;
};

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr
};

inline CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace testing
