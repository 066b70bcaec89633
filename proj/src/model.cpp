#include "instructir/model.hpp"

namespace instructir {

HeadConfig InstructIRConfig::head_config() const {
  HeadConfig h;
  h.text_dim = encoder.dim;
  h.embed_dim = model.embed_dim;
  h.num_tasks = tasks().size();
  h.hidden = classifier_hidden;
  return h;
}

void InstructIRConfig::validate() const {
  model.validate();
  head_config().validate();
}

nlohmann::json InstructIRConfig::to_json() const {
  return {{"model", model.to_json()},
          {"encoder", encoder.to_json()},
          {"task_set", task_set},
          {"classifier_hidden", classifier_hidden}};
}

InstructIRConfig InstructIRConfig::from_json(const nlohmann::json& j) {
  InstructIRConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
  if (j.contains("encoder")) c.encoder = EncoderSpec::from_json(j["encoder"]);
  c.task_set = j.value("task_set", c.task_set);
  c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
  return c;
}

std::string InstructIRConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

InstructIRModel::InstructIRModel(InstructIRConfig config, std::uint64_t seed,
                                 std::shared_ptr<const SentenceEncoder> encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  if (!encoder_) encoder_ = make_encoder(config_.encoder);
  if (encoder_->dim() != config_.encoder.dim) {
    throw ConfigError("encoder dimension " + std::to_string(encoder_->dim()) + " != configured " +
                      std::to_string(config_.encoder.dim));
  }
  torch::manual_seed(seed);
  net_ = RestorationNet(config_.model);
  head_ = GuidanceHead(config_.head_config());
}

InstructIRModel InstructIRModel::from_checkpoint(const Checkpoint& checkpoint,
                                                 std::shared_ptr<const SentenceEncoder> encoder) {
  if (!checkpoint.meta.contains("config")) throw ParseError("checkpoint has no model configuration");
  auto config = InstructIRConfig::from_json(checkpoint.meta["config"]);
  InstructIRModel model(config, 0, std::move(encoder));
  const auto dtype = checkpoint.at("net.intro.weight").scalar_type();
  model.to(dtype);
  load_module(checkpoint, "net.", *model.net_);
  load_module(checkpoint, "head.", *model.head_);
  if (checkpoint.meta.contains("encoder_checksum")) {
    const auto expected = checkpoint.meta["encoder_checksum"].get<std::string>();
    if (expected != hex64(model.encoder_->checksum())) {
      throw ConfigError("text encoder does not match the one the checkpoint was trained with");
    }
  }
  return model;
}

InstructIRModel InstructIRModel::load(const std::filesystem::path& path,
                                      std::shared_ptr<const SentenceEncoder> encoder) {
  return from_checkpoint(read_checkpoint(path), std::move(encoder));
}

Checkpoint InstructIRModel::to_checkpoint(std::int64_t step) const {
  Checkpoint ck;
  ck.meta["config"] = config_.to_json();
  ck.meta["config_hash"] = config_.hash();
  ck.meta["task_set"] = config_.task_set;
  ck.meta["num_tasks"] = config_.tasks().size();
  ck.meta["embed_dim"] = config_.model.embed_dim;
  ck.meta["step"] = step;
  ck.meta["encoder"] = encoder_->name();
  ck.meta["encoder_checksum"] = hex64(encoder_->checksum());
  store_module(ck, "net.", *net_);
  store_module(ck, "head.", *head_);
  return ck;
}

void InstructIRModel::save(const std::filesystem::path& path, std::int64_t step) const {
  write_checkpoint(path, to_checkpoint(step));
}

GuidanceOutput InstructIRModel::guide(std::span<const std::string> instructions) const {
  for (const auto& s : instructions) {
    if (normalize_text(s).empty()) throw ConfigError("instruction is empty");
  }
  return head_->forward(encoder_->encode_batch(instructions));
}

GuidanceOutput InstructIRModel::forward(const torch::Tensor& images, std::span<const std::string> instructions,
                                        torch::Tensor& restored) const {
  if (images.dim() != 4 || static_cast<std::size_t>(images.size(0)) != instructions.size()) {
    throw ShapeError("need one instruction per image");
  }
  auto g = guide(instructions);
  restored = net_->forward(images.to(dtype()), g.embedding);
  return g;
}

RestoreResult InstructIRModel::restore(const torch::Tensor& image, std::string_view instruction) const {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("restore expects a (3, H, W) image");
  torch::NoGradGuard no_grad;
  const std::string text(instruction);
  torch::Tensor out;
  auto g = forward(image.unsqueeze(0), std::span(&text, 1), out);
  auto probs = torch::softmax(g.logits[0].to(torch::kFloat64), 0);
  const auto k = probs.argmax().item<std::int64_t>();
  RestoreResult r;
  r.image = out[0].clamp(0.0, 1.0).to(torch::kFloat32).contiguous();
  r.task = static_cast<Task>(k);
  r.confidence = probs[k].item<double>();
  return r;
}

ParameterCount InstructIRModel::count_parameters() const {
  return {count_module_parameters(*net_), count_module_parameters(*head_)};
}

std::vector<torch::Tensor> InstructIRModel::trainable_parameters() const {
  std::vector<torch::Tensor> params;
  for (auto& p : net_->parameters()) params.push_back(p);
  for (auto& p : head_->parameters()) params.push_back(p);
  return params;
}

std::uint64_t InstructIRModel::weights_checksum() const { return parameters_checksum(trainable_parameters()); }

void InstructIRModel::to(torch::ScalarType dtype) {
  net_->to(dtype);
  head_->to(dtype);
}

torch::ScalarType InstructIRModel::dtype() const { return net_->intro->weight.scalar_type(); }

InstructIRModel InstructIRModel::with_task_set(const TaskSet& tasks, std::uint64_t seed) const {
  const auto current = config_.tasks();
  if (tasks.size() < current.size()) {
    throw UnsupportedError("cannot shrink task set " + current.name() + " to " + tasks.name());
  }
  auto config = config_;
  config.classifier_hidden = head_->config().hidden_width();
  InstructIRModel out(config, seed, encoder_);
  out.to(dtype());
  const auto ck = to_checkpoint();
  load_module(ck, "net.", *out.net_);
  load_module(ck, "head.", *out.head_);
  torch::manual_seed(seed);
  out.head_->resize_classes(tasks.size());
  out.head_->to(dtype());
  out.config_.task_set = tasks.name();
  return out;
}

}  // namespace instructir
