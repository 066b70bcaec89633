#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "instructir/backbone.hpp"
#include "instructir/checkpoint.hpp"
#include "instructir/common.hpp"
#include "instructir/guidance_head.hpp"
#include "instructir/text_encoder.hpp"

namespace instructir {

struct InstructIRConfig {
  ModelConfig model;
  EncoderSpec encoder;
  std::string task_set = "5D";
  std::int64_t classifier_hidden = 0;  // 0: automatic width

  TaskSet tasks() const { return TaskSet::from_name(task_set); }
  HeadConfig head_config() const;
  void validate() const;
  nlohmann::json to_json() const;
  static InstructIRConfig from_json(const nlohmann::json& j);
  // Stable digest of the canonical JSON form.
  std::string hash() const;
};

struct ParameterCount {
  std::int64_t image = 0;  // restoration network, including routing projections
  std::int64_t head = 0;   // text projection and intent classifier
};

struct RestoreResult {
  torch::Tensor image;  // (3, H, W), clamped to [0, 1]
  Task task = Task::Denoising;
  double confidence = 0.0;
};

// The restoration network, the guidance head and the frozen encoder they read
// from. Copies share module storage.
class InstructIRModel {
 public:
  // Parameters are initialized from torch's generator seeded with `seed`.
  explicit InstructIRModel(InstructIRConfig config, std::uint64_t seed = 0,
                           std::shared_ptr<const SentenceEncoder> encoder = nullptr);

  static InstructIRModel from_checkpoint(const Checkpoint& checkpoint,
                                         std::shared_ptr<const SentenceEncoder> encoder = nullptr);
  static InstructIRModel load(const std::filesystem::path& path,
                              std::shared_ptr<const SentenceEncoder> encoder = nullptr);

  // Weights and metadata; trainers append optimizer state to the result.
  Checkpoint to_checkpoint(std::int64_t step = 0) const;
  void save(const std::filesystem::path& path, std::int64_t step = 0) const;

  // Text side for a batch of instructions; records autograd history.
  GuidanceOutput guide(std::span<const std::string> instructions) const;
  // images: [B, 3, H, W]; one instruction per image. Not clamped.
  GuidanceOutput forward(const torch::Tensor& images, std::span<const std::string> instructions,
                         torch::Tensor& restored) const;

  // Inference on a single (3, H, W) image; output clamped to [0, 1].
  RestoreResult restore(const torch::Tensor& image, std::string_view instruction) const;

  ParameterCount count_parameters() const;
  std::vector<torch::Tensor> trainable_parameters() const;
  std::uint64_t weights_checksum() const;

  void to(torch::ScalarType dtype);
  torch::ScalarType dtype() const;

  const InstructIRConfig& config() const { return config_; }
  TaskSet tasks() const { return config_.tasks(); }
  RestorationNet& net() const { return net_; }
  GuidanceHead& head() const { return head_; }
  const SentenceEncoder& encoder() const { return *encoder_; }
  std::shared_ptr<const SentenceEncoder> encoder_ptr() const { return encoder_; }

  // Returns a model for a larger task set: classifier rows of retained
  // classes copied, new rows freshly initialized, everything else shared
  // by value. Throws UnsupportedError when `tasks` is not a superset.
  InstructIRModel with_task_set(const TaskSet& tasks, std::uint64_t seed) const;

 private:
  InstructIRConfig config_;
  std::shared_ptr<const SentenceEncoder> encoder_;
  mutable RestorationNet net_{nullptr};
  mutable GuidanceHead head_{nullptr};
};

}  // namespace instructir
