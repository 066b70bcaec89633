#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "instructir/checkpoint.hpp"
#include "instructir/dataset.hpp"
#include "instructir/model.hpp"
#include "instructir/optim.hpp"
#include "instructir/prompt_bank.hpp"

namespace instructir {

struct TrainConfig {
  InstructIRConfig system;
  std::int64_t batch_size = 32;
  double lr = 5e-4;
  double min_lr = 0.0;
  std::int64_t epochs = 500;
  std::int64_t max_steps = 0;  // > 0 replaces epochs * steps_per_epoch
  AdamWOptions optimizer;
  std::uint64_t seed = 0;
  std::int64_t crop_size = 256;
  bool augment = true;
  std::optional<double> grad_clip;
  std::int64_t checkpoint_every = 0;  // steps; 0 = only the final checkpoint
  std::int64_t val_per_task = 16;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  std::string hash() const;
};

struct LossTerms {
  torch::Tensor total;
  torch::Tensor l1;
  torch::Tensor lce;
};

// l1 = mean |restored - clean| over batch, channels and pixels; lce = mean
// cross-entropy of the intent logits; total = l1 + lce.
LossTerms compute_loss(const torch::Tensor& restored, const torch::Tensor& clean, const torch::Tensor& logits,
                       const torch::Tensor& targets);

struct StepStats {
  std::int64_t step = 0;  // 1-based index of the completed step
  double lr = 0.0;
  double l1 = 0.0;
  double lce = 0.0;
  double total = 0.0;
};

struct Batch {
  torch::Tensor degraded;  // [B, 3, H, W]
  torch::Tensor clean;
  torch::Tensor targets;  // [B] class ids
  std::vector<std::string> prompts;
};

Batch collate(const std::vector<TrainSample>& samples, const TaskSet& tasks);

// Single-writer optimization state: model, AdamW moments and the step counter.
class Trainer {
 public:
  Trainer(TrainConfig config, std::int64_t total_steps, std::shared_ptr<const SentenceEncoder> encoder = nullptr);
  // Warm start from existing weights (fine-tuning).
  Trainer(TrainConfig config, InstructIRModel initial, std::int64_t total_steps);

  static Trainer from_checkpoint(const Checkpoint& checkpoint, std::shared_ptr<const SentenceEncoder> encoder = nullptr);

  StepStats train_step(const Batch& batch);
  LossTerms evaluate(const Batch& batch) const;

  Checkpoint to_checkpoint() const;
  void save(const std::filesystem::path& path) const;

  InstructIRModel& model() { return model_; }
  const InstructIRModel& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t step() const { return optimizer_.step_count(); }
  std::int64_t total_steps() const { return total_steps_; }
  double current_lr() const;

 private:
  TrainConfig config_;
  InstructIRModel model_;
  AdamW optimizer_;
  std::int64_t total_steps_;
};

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<DatasetManifest> validation;
  std::optional<std::filesystem::path> resume_from;
  std::optional<InstructIRModel> initial_model;  // warm start
  std::optional<std::int64_t> stop_after;        // pause after this global step (schedule unchanged)
  std::function<void(const StepStats&)> on_step;
};

struct FitResult {
  std::optional<InstructIRModel> model;  // state after the last completed step
  std::filesystem::path checkpoint;      // empty without an output directory
  std::vector<StepStats> history;
  std::vector<std::pair<std::int64_t, double>> validation_psnr;  // (step, dB)
};

std::int64_t steps_per_epoch(const TrainConfig& config, std::size_t records);

// Epoch loop over `manifest` with seeded shuffling; writes
//   <out_dir>/train_log.jsonl  {step, lr, l1, lce, total[, val_psnr]}
//   <out_dir>/step_<N>.ckpt    every checkpoint_every steps
//   <out_dir>/last.ckpt        on pause or completion
//   <out_dir>/final.ckpt       on completion
FitResult fit(const TrainConfig& config, const DatasetManifest& manifest, const PromptBank& bank,
              const FitOptions& options);

// 5D -> 6D / 7D: the classifier is widened to the new task set; every other
// parameter is copied.
InstructIRModel finetune_variant(const InstructIRModel& base, const TaskSet& tasks, std::uint64_t seed = 0);

}  // namespace instructir
