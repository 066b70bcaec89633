#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace instructir {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay:
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamW {
 public:
  AdamW(std::vector<torch::Tensor> params, AdamWOptions options);

  void zero_grad();
  void step(double lr);

  std::int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  const std::vector<torch::Tensor>& params() const { return params_; }

  // Moment buffers, aligned with params().
  std::vector<torch::Tensor>& first_moments() { return m_; }
  std::vector<torch::Tensor>& second_moments() { return v_; }
  void set_step_count(std::int64_t step) { step_ = step; }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> m_;
  std::vector<torch::Tensor> v_;
  AdamWOptions options_;
  std::int64_t step_ = 0;
};

// Cosine annealing from base_lr at step 0 to min_lr at step total_steps - 1.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr = 0.0);

// Global L2 norm clipping; returns the pre-clip norm.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

}  // namespace instructir
