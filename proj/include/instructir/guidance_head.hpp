#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>

#include <json.hpp>
#include <torch/torch.h>

#include "instructir/common.hpp"
#include "instructir/prompt_bank.hpp"
#include "instructir/text_encoder.hpp"

namespace instructir {

struct HeadConfig {
  std::int64_t text_dim = 384;   // d_t
  std::int64_t embed_dim = 256;  // d_v
  std::int64_t num_tasks = 7;    // D
  std::int64_t hidden = 0;       // classifier hidden width; 0 selects max(d_v/4, 2D)

  std::int64_t hidden_width() const;
  void validate() const;
  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

struct GuidanceOutput {
  torch::Tensor embedding;  // e, [B, d_v], unit L2 norm per row
  torch::Tensor logits;     // c, [B, D]
};

// Trainable text-side parameters: the projection W (d_t -> d_v) followed by
// L2 normalization, and the two-layer intent classifier on top of e.
class GuidanceHeadImpl : public torch::nn::Module {
 public:
  explicit GuidanceHeadImpl(HeadConfig config);

  // raw: encoder output [B, d_t]. Throws NumericError if any projected row has
  // norm below 1e-12.
  GuidanceOutput forward(const torch::Tensor& raw);
  torch::Tensor embed(const torch::Tensor& raw);

  const HeadConfig& config() const { return config_; }

  // Rebuilds the classifier output layer for `num_tasks` classes, copying the
  // rows of every retained class. Shrinking is unsupported.
  void resize_classes(std::int64_t num_tasks);

  torch::nn::Linear projection{nullptr};
  torch::nn::Linear hidden{nullptr};
  torch::nn::Linear output{nullptr};

 private:
  HeadConfig config_;
};
TORCH_MODULE(GuidanceHead);

struct GuidanceEmbedding {
  torch::Tensor embedding;  // [d_v]
  torch::Tensor logits;     // [D]
  std::int64_t predicted_task = 0;
};

GuidanceEmbedding embed_instruction(GuidanceHead& head, const SentenceEncoder& encoder, std::string_view text);

// Mean cross-entropy of softmax(logits) against integer targets.
torch::Tensor intent_loss(const torch::Tensor& logits, const torch::Tensor& targets);
double intent_loss(const torch::Tensor& logits, Task target);

std::pair<Task, double> classify_intent(GuidanceHead& head, const SentenceEncoder& encoder, std::string_view text);

// One row per prompt: "task_id v1 ... v_dv".
void export_embeddings(GuidanceHead& head, const SentenceEncoder& encoder, const PromptBank& bank,
                       const std::filesystem::path& path);

struct HeadTrainOptions {
  std::int64_t epochs = 20;
  std::int64_t batch_size = 64;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  // Held-out prompts scored after each epoch. General prompts such as
  // "improve this image" carry every task label, so they are skipped by default.
  std::optional<LanguageLevel> test_level = LanguageLevel::BasicPrecise;
};

struct HeadTrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_test_accuracy;
};

// Trains only the guidance head on the bank's train split with the intent
// loss; accuracy is measured on the test split after every epoch.
HeadTrainReport train_guidance_head(GuidanceHead& head, const SentenceEncoder& encoder, const PromptBank& bank,
                                    const TaskSet& tasks, const HeadTrainOptions& options);

double intent_accuracy(GuidanceHead& head, const torch::Tensor& raw, const torch::Tensor& targets);

}  // namespace instructir
