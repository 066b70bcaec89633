#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "instructir/dataset.hpp"
#include "instructir/model.hpp"
#include "instructir/prompt_bank.hpp"

namespace instructir {

struct EvalProtocol {
  std::int64_t repetitions = 10;
  std::optional<LanguageLevel> level = LanguageLevel::BasicPrecise;  // nullopt: any level
  Split split = Split::Test;
  std::uint64_t seed = 0;
  std::optional<std::string> fixed_prompt;  // same instruction for every image
  bool delta_e = false;
};

// Values for one task, indexed [repetition][image]. Infinite PSNR values are
// kept in `psnr` but excluded from the means and counted in `infinite_psnr`.
struct TaskMetrics {
  Task task = Task::Denoising;
  std::vector<std::string> images;  // clean paths, manifest order
  std::vector<std::vector<double>> psnr;
  std::vector<std::vector<double>> ssim;
  std::vector<std::vector<double>> delta_e;
  std::vector<std::vector<std::string>> prompts;
  std::int64_t infinite_psnr = 0;

  std::int64_t n_images() const { return static_cast<std::int64_t>(images.size()); }
  std::int64_t n_repetitions() const { return static_cast<std::int64_t>(psnr.size()); }
};

struct Summary {
  double psnr_mean = 0.0;
  double psnr_std = 0.0;  // spread of the per-repetition means
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
  std::optional<double> delta_e_mean;
  std::int64_t n_values = 0;
  std::int64_t infinite_psnr = 0;
};

Summary summarize(const TaskMetrics& metrics);
// Mean of the i-th repetition's finite values.
Summary summarize_repetition(const TaskMetrics& metrics, std::size_t repetition);

struct MetricReport {
  std::string checkpoint;  // weights checksum
  std::string task_set;
  EvalProtocol protocol;
  std::vector<TaskMetrics> tasks;  // nesting order

  Summary overall() const;  // pooled over every stored value
};

// Repeated-prompt protocol: every repetition draws a fresh prompt per image from the
// requested level and split. Synthetic degradations are fixed per image
// across repetitions. Randomness is keyed on (seed, record identity,
// repetition), so the result does not depend on manifest order.
MetricReport evaluate(const InstructIRModel& model, const DatasetManifest& manifest, const PromptBank& bank,
                      const EvalProtocol& protocol);

// Human-readable report with one block per task.
std::string format_report(const MetricReport& report);
// One JSON object per (task, repetition), then per task, then "overall".
std::string format_report_jsonl(const MetricReport& report);

// Sequential application: output i is the input of step i + 1. Errors are
// rethrown with the same kind and the failing step index in the message.
std::vector<RestoreResult> chain_restore(const InstructIRModel& model, const torch::Tensor& image,
                                         const std::vector<std::string>& prompts);

}  // namespace instructir
