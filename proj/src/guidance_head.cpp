#include "instructir/guidance_head.hpp"

#include <cstdio>
#include <fstream>

#include "instructir/optim.hpp"

namespace instructir {

namespace {
constexpr double kMinProjectionNorm = 1e-12;
}

std::int64_t HeadConfig::hidden_width() const {
  return hidden > 0 ? hidden : std::max<std::int64_t>(embed_dim / 4, 2 * num_tasks);
}

void HeadConfig::validate() const {
  if (text_dim <= 0 || embed_dim <= 0) throw ConfigError("text_dim and embed_dim must be positive");
  if (num_tasks < 1 || num_tasks > kMaxTasks) throw ConfigError("num_tasks must lie in [1, 7]");
  if (hidden < 0) throw ConfigError("classifier hidden width must be non-negative");
}

nlohmann::json HeadConfig::to_json() const {
  return {{"text_dim", text_dim}, {"embed_dim", embed_dim}, {"num_tasks", num_tasks}, {"hidden", hidden}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.text_dim = j.value("text_dim", c.text_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_tasks = j.value("num_tasks", c.num_tasks);
  c.hidden = j.value("hidden", c.hidden);
  return c;
}

GuidanceHeadImpl::GuidanceHeadImpl(HeadConfig config) : config_(config) {
  config_.validate();
  projection = register_module(
      "projection", torch::nn::Linear(torch::nn::LinearOptions(config_.text_dim, config_.embed_dim).bias(false)));
  hidden = register_module("hidden", torch::nn::Linear(config_.embed_dim, config_.hidden_width()));
  output = register_module("output", torch::nn::Linear(config_.hidden_width(), config_.num_tasks));
}

torch::Tensor GuidanceHeadImpl::embed(const torch::Tensor& raw) {
  if (raw.dim() != 2 || raw.size(1) != config_.text_dim) {
    throw ShapeError("guidance head expects [B, " + std::to_string(config_.text_dim) + "] text embeddings");
  }
  auto projected = projection(raw.to(projection->weight.scalar_type()));
  auto norms = projected.norm(2, {1}, /*keepdim=*/true);
  if (norms.numel() > 0 && norms.min().item<double>() < kMinProjectionNorm) {
    throw NumericError("projected instruction embedding has near-zero norm");
  }
  return projected / norms;
}

GuidanceOutput GuidanceHeadImpl::forward(const torch::Tensor& raw) {
  auto e = embed(raw);
  auto logits = output(torch::gelu(hidden(e)));
  return {e, logits};
}

void GuidanceHeadImpl::resize_classes(std::int64_t num_tasks) {
  if (num_tasks < config_.num_tasks) {
    throw UnsupportedError("cannot shrink the task set from " + std::to_string(config_.num_tasks) + " to " +
                           std::to_string(num_tasks) + " classes");
  }
  if (num_tasks == config_.num_tasks) return;
  auto fresh = torch::nn::Linear(config_.hidden_width(), num_tasks);
  fresh->to(output->weight.scalar_type());
  {
    torch::NoGradGuard no_grad;
    fresh->weight.narrow(0, 0, config_.num_tasks).copy_(output->weight);
    fresh->bias.narrow(0, 0, config_.num_tasks).copy_(output->bias);
  }
  // The hidden width must not change with D, so pin the resolved width.
  config_.hidden = config_.hidden_width();
  config_.num_tasks = num_tasks;
  output = replace_module("output", fresh);
}

GuidanceEmbedding embed_instruction(GuidanceHead& head, const SentenceEncoder& encoder, std::string_view text) {
  if (normalize_text(text).empty()) throw ConfigError("instruction is empty");
  auto raw = encoder.encode(text).unsqueeze(0);
  auto out = head->forward(raw);
  GuidanceEmbedding g;
  g.embedding = out.embedding.squeeze(0);
  g.logits = out.logits.squeeze(0);
  g.predicted_task = g.logits.argmax().item<std::int64_t>();
  return g;
}

torch::Tensor intent_loss(const torch::Tensor& logits, const torch::Tensor& targets) {
  if (!torch::isfinite(logits).all().item<bool>()) throw NumericError("non-finite intent logits");
  if (targets.numel() > 0 && targets.max().item<std::int64_t>() >= logits.size(-1)) {
    throw ConfigError("intent target outside the classifier's " + std::to_string(logits.size(-1)) + " classes");
  }
  return torch::nn::functional::cross_entropy(logits, targets);
}

double intent_loss(const torch::Tensor& logits, Task target) {
  auto t = torch::full({1}, static_cast<std::int64_t>(task_id(target)), torch::kInt64);
  return intent_loss(logits.reshape({1, -1}), t).item<double>();
}

std::pair<Task, double> classify_intent(GuidanceHead& head, const SentenceEncoder& encoder, std::string_view text) {
  torch::NoGradGuard no_grad;
  auto g = embed_instruction(head, encoder, text);
  auto probs = torch::softmax(g.logits.to(torch::kFloat64), 0);
  return {static_cast<Task>(g.predicted_task), probs[g.predicted_task].item<double>()};
}

void export_embeddings(GuidanceHead& head, const SentenceEncoder& encoder, const PromptBank& bank,
                       const std::filesystem::path& path) {
  if (bank.empty()) throw ConfigError("cannot export embeddings of an empty prompt bank");
  torch::NoGradGuard no_grad;
  std::string out;
  char buf[32];
  for (const auto& r : bank.records()) {
    auto e = embed_instruction(head, encoder, r.text).embedding.to(torch::kFloat64).contiguous();
    out += std::to_string(task_id(r.task));
    const auto* v = e.data_ptr<double>();
    for (std::int64_t i = 0; i < e.numel(); ++i) {
      std::snprintf(buf, sizeof buf, " %.9g", v[i]);
      out += buf;
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << out;
  if (!f) throw IoError("short write to " + path.string());
}

double intent_accuracy(GuidanceHead& head, const torch::Tensor& raw, const torch::Tensor& targets) {
  torch::NoGradGuard no_grad;
  if (raw.size(0) == 0) return 0.0;
  auto pred = head->forward(raw).logits.argmax(1);
  return pred.eq(targets).to(torch::kFloat64).mean().item<double>();
}

HeadTrainReport train_guidance_head(GuidanceHead& head, const SentenceEncoder& encoder, const PromptBank& bank,
                                    const TaskSet& tasks, const HeadTrainOptions& options) {
  if (head->config().num_tasks != tasks.size()) {
    throw ConfigError("head has " + std::to_string(head->config().num_tasks) + " classes but task set " +
                      tasks.name() + " has " + std::to_string(tasks.size()));
  }
  auto collect = [&](Split split, std::optional<LanguageLevel> level) {
    std::vector<std::string> texts;
    std::vector<std::int64_t> labels;
    for (const auto& r : bank.records()) {
      if (r.split == split && tasks.contains(r.task) && (!level || r.level == *level)) {
        texts.push_back(r.text);
        labels.push_back(task_id(r.task));
      }
    }
    auto raw = encoder.encode_batch(texts);
    auto y = torch::tensor(labels, torch::kInt64);
    return std::pair{raw, y};
  };
  auto [train_x, train_y] = collect(Split::Train, std::nullopt);
  auto [test_x, test_y] = collect(Split::Test, options.test_level);
  if (train_x.size(0) == 0) throw EmptyPoolError("prompt bank has no training prompts for " + tasks.name());

  std::vector<torch::Tensor> params;
  for (auto& p : head->parameters()) params.push_back(p);
  AdamW opt(params, {.beta1 = 0.9, .beta2 = 0.9, .eps = 1e-8, .weight_decay = options.weight_decay});

  const auto n = static_cast<std::size_t>(train_x.size(0));
  const auto steps_per_epoch = static_cast<std::int64_t>((n + options.batch_size - 1) / options.batch_size);
  const auto total_steps = steps_per_epoch * options.epochs;
  HeadTrainReport report;
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = Rng::derive(options.seed, {static_cast<std::uint64_t>(epoch)});
    std::vector<std::int64_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::int64_t>(i);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    auto perm = torch::tensor(order, torch::kInt64);

    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const auto start = b * options.batch_size;
      const auto len = std::min<std::int64_t>(options.batch_size, static_cast<std::int64_t>(n) - start);
      auto idx = perm.narrow(0, start, len);
      opt.zero_grad();
      auto loss = intent_loss(head->forward(train_x.index_select(0, idx)).logits, train_y.index_select(0, idx));
      loss.backward();
      opt.step(cosine_lr(step++, total_steps, options.lr));
      loss_sum += loss.item<double>();
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(steps_per_epoch));
    report.epoch_test_accuracy.push_back(intent_accuracy(head, test_x, test_y));
  }
  return report;
}

}  // namespace instructir
