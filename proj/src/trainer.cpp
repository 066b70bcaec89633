#include "instructir/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "instructir/image_io.hpp"
#include "instructir/metrics.hpp"

namespace instructir {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  system.validate();
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (min_lr < 0.0 || min_lr > lr) throw ConfigError("min_lr must lie in [0, lr]");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (epochs < 0 || max_steps < 0) throw ConfigError("epochs and max_steps must be non-negative");
  if (crop_size < 1) throw ConfigError("crop size must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["system"] = system.to_json();
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["min_lr"] = min_lr;
  j["epochs"] = epochs;
  j["max_steps"] = max_steps;
  j["betas"] = {optimizer.beta1, optimizer.beta2};
  j["eps"] = optimizer.eps;
  j["weight_decay"] = optimizer.weight_decay;
  j["seed"] = seed;
  j["crop_size"] = crop_size;
  j["augment"] = augment;
  j["grad_clip"] = grad_clip ? nlohmann::json(*grad_clip) : nlohmann::json(nullptr);
  j["checkpoint_every"] = checkpoint_every;
  j["val_per_task"] = val_per_task;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("system")) c.system = InstructIRConfig::from_json(j["system"]);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    if (j.contains("betas")) {
      c.optimizer.beta1 = j["betas"].at(0).get<double>();
      c.optimizer.beta2 = j["betas"].at(1).get<double>();
    }
    c.optimizer.eps = j.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.augment = j.value("augment", c.augment);
    if (j.contains("grad_clip") && !j["grad_clip"].is_null()) c.grad_clip = j["grad_clip"].get<double>();
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.val_per_task = j.value("val_per_task", c.val_per_task);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string TrainConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

LossTerms compute_loss(const torch::Tensor& restored, const torch::Tensor& clean, const torch::Tensor& logits,
                       const torch::Tensor& targets) {
  if (restored.sizes() != clean.sizes()) {
    throw ShapeError("restored " + c10::str(restored.sizes()) + " vs clean " + c10::str(clean.sizes()));
  }
  if (logits.dim() != 2 || logits.size(0) != targets.size(0)) throw ShapeError("one intent target per logit row");
  LossTerms t;
  t.l1 = (restored - clean.to(restored.scalar_type())).abs().mean();
  t.lce = intent_loss(logits, targets);
  t.total = t.l1 + t.lce;
  return t;
}

Batch collate(const std::vector<TrainSample>& samples, const TaskSet& tasks) {
  if (samples.empty()) throw ConfigError("empty batch");
  Batch b;
  std::vector<torch::Tensor> degraded, clean;
  std::vector<std::int64_t> targets;
  for (const auto& s : samples) {
    if (!tasks.contains(s.task)) {
      throw ConfigError("sample task " + std::string(task_name(s.task)) + " is not in task set " + tasks.name());
    }
    degraded.push_back(s.degraded);
    clean.push_back(s.clean);
    targets.push_back(task_id(s.task));
    b.prompts.push_back(s.prompt);
  }
  b.degraded = torch::stack(degraded);
  b.clean = torch::stack(clean);
  b.targets = torch::tensor(targets, torch::kInt64);
  return b;
}

Trainer::Trainer(TrainConfig config, std::int64_t total_steps, std::shared_ptr<const SentenceEncoder> encoder)
    : Trainer(config, InstructIRModel(config.system, config.seed, std::move(encoder)), total_steps) {}

Trainer::Trainer(TrainConfig config, InstructIRModel initial, std::int64_t total_steps)
    : config_(std::move(config)),
      model_(std::move(initial)),
      optimizer_(model_.trainable_parameters(), config_.optimizer),
      total_steps_(total_steps) {
  config_.system = model_.config();
  config_.validate();
  if (total_steps_ < 0) throw ConfigError("total steps must be non-negative");
}

double Trainer::current_lr() const { return cosine_lr(step(), total_steps_, config_.lr, config_.min_lr); }

StepStats Trainer::train_step(const Batch& batch) {
  const double lr = current_lr();
  optimizer_.zero_grad();
  torch::Tensor restored;
  auto g = model_.forward(batch.degraded, batch.prompts, restored);
  auto loss = compute_loss(restored, batch.clean, g.logits, batch.targets);
  const double total = loss.total.item<double>();
  if (!std::isfinite(total)) {
    torch::NoGradGuard no_grad;
    auto per_l1 = (restored - batch.clean.to(restored.scalar_type())).abs().flatten(1).mean(1);
    auto per_ce = torch::nn::functional::cross_entropy(
        g.logits, batch.targets, torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
    auto bad = torch::nonzero(~torch::isfinite(per_l1 + per_ce)).flatten();
    std::ostringstream os;
    os << "non-finite loss at step " << step() + 1 << "; offending samples:";
    for (std::int64_t i = 0; i < bad.numel(); ++i) os << ' ' << bad[i].item<std::int64_t>();
    throw NumericError(os.str());
  }
  loss.total.backward();
  if (config_.grad_clip) clip_grad_norm(optimizer_.params(), *config_.grad_clip);
  optimizer_.step(lr);
  return {step(), lr, loss.l1.item<double>(), loss.lce.item<double>(), total};
}

LossTerms Trainer::evaluate(const Batch& batch) const {
  torch::NoGradGuard no_grad;
  torch::Tensor restored;
  auto g = model_.forward(batch.degraded, batch.prompts, restored);
  return compute_loss(restored, batch.clean, g.logits, batch.targets);
}

Checkpoint Trainer::to_checkpoint() const {
  auto ck = model_.to_checkpoint(step());
  ck.meta["train_config"] = config_.to_json();
  ck.meta["train_config_hash"] = config_.hash();
  ck.meta["total_steps"] = total_steps_;
  auto& self = const_cast<AdamW&>(optimizer_);
  for (std::size_t i = 0; i < self.first_moments().size(); ++i) {
    ck.add("optim.m." + std::to_string(i), self.first_moments()[i]);
    ck.add("optim.v." + std::to_string(i), self.second_moments()[i]);
  }
  return ck;
}

void Trainer::save(const fs::path& path) const { write_checkpoint(path, to_checkpoint()); }

Trainer Trainer::from_checkpoint(const Checkpoint& checkpoint, std::shared_ptr<const SentenceEncoder> encoder) {
  if (!checkpoint.meta.contains("train_config")) throw ParseError("checkpoint has no training state");
  auto config = TrainConfig::from_json(checkpoint.meta["train_config"]);
  auto model = InstructIRModel::from_checkpoint(checkpoint, std::move(encoder));
  Trainer t(config, std::move(model), checkpoint.meta.at("total_steps").get<std::int64_t>());
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < t.optimizer_.first_moments().size(); ++i) {
    t.optimizer_.first_moments()[i].copy_(checkpoint.at("optim.m." + std::to_string(i)));
    t.optimizer_.second_moments()[i].copy_(checkpoint.at("optim.v." + std::to_string(i)));
  }
  t.optimizer_.set_step_count(checkpoint.meta.at("step").get<std::int64_t>());
  return t;
}

std::int64_t steps_per_epoch(const TrainConfig& config, std::size_t records) {
  return (static_cast<std::int64_t>(records) + config.batch_size - 1) / config.batch_size;
}

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, {0x5eedULL, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

double validation_psnr(const InstructIRModel& model, const DatasetManifest& manifest, const PromptBank& bank,
                       const TrainConfig& config, ImageCache& cache) {
  std::map<Task, std::int64_t> used;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!model.tasks().contains(r.task) || used[r.task]++ >= config.val_per_task) continue;
    Rng rng = Rng::derive(config.seed, {0x7a1ULL, i});
    auto pair = load_pair(manifest, r, rng, &cache);
    const auto split = bank.count(r.task, Split::Test) > 0 ? Split::Test : Split::Train;
    const auto& prompt = sample_prompt(bank, r.task, split, rng);
    const double p = psnr(model.restore(pair.degraded, prompt.text).image, pair.clean);
    if (std::isfinite(p)) {
      sum += p;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

FitResult fit(const TrainConfig& config, const DatasetManifest& manifest, const PromptBank& bank,
              const FitOptions& options) {
  config.validate();
  if (manifest.records.empty()) throw ConfigError("training manifest is empty");
  const auto tasks = config.system.tasks();
  for (auto t : manifest.tasks()) {
    if (!tasks.contains(t)) {
      throw ConfigError("manifest contains task " + std::string(task_name(t)) + " absent from task set " + tasks.name());
    }
  }
  const auto spe = steps_per_epoch(config, manifest.size());
  const auto total = config.max_steps > 0 ? config.max_steps : config.epochs * spe;

  std::optional<Trainer> trainer;
  if (options.resume_from) {
    trainer.emplace(Trainer::from_checkpoint(read_checkpoint(*options.resume_from)));
    if (trainer->config().hash() != config.hash()) {
      throw ConfigError("resume checkpoint was trained with a different configuration");
    }
  } else if (options.initial_model) {
    trainer.emplace(config, *options.initial_model, total);
  } else {
    trainer.emplace(config, total);
  }

  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  std::ofstream log;
  if (!options.out_dir.empty()) {
    log.open(options.out_dir / "train_log.jsonl", trainer->step() > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write training log in " + options.out_dir.string());
  }

  ImageCache cache;
  const SampleOptions sample_options{config.crop_size, config.augment};
  FitResult result;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  const auto stop = options.stop_after ? std::min(*options.stop_after, total) : total;

  while (trainer->step() < stop) {
    const auto s = trainer->step();
    const auto epoch = s / spe;
    const auto position = s % spe;
    if (epoch != order_epoch) {
      order = epoch_order(config.seed, epoch, manifest.size());
      order_epoch = epoch;
    }
    std::vector<TrainSample> samples;
    const auto begin = static_cast<std::size_t>(position * config.batch_size);
    const auto end = std::min(begin + static_cast<std::size_t>(config.batch_size), order.size());
    for (auto i = begin; i < end; ++i) {
      Rng rng = Rng::derive(config.seed, {static_cast<std::uint64_t>(s), i - begin});
      samples.push_back(make_train_sample(manifest, manifest.records[order[i]], bank, rng, sample_options, &cache));
    }
    auto stats = trainer->train_step(collate(samples, tasks));
    result.history.push_back(stats);
    if (options.on_step) options.on_step(stats);

    nlohmann::ordered_json line;
    line["step"] = stats.step;
    line["lr"] = stats.lr;
    line["l1"] = stats.l1;
    line["lce"] = stats.lce;
    line["total"] = stats.total;
    if (options.validation && (position + 1 == spe)) {
      const double v = validation_psnr(trainer->model(), *options.validation, bank, config, cache);
      result.validation_psnr.emplace_back(stats.step, v);
      if (std::isfinite(v)) line["val_psnr"] = v;
    }
    if (log.is_open()) log << line.dump() << '\n' << std::flush;

    if (!options.out_dir.empty() && config.checkpoint_every > 0 && stats.step % config.checkpoint_every == 0) {
      trainer->save(options.out_dir / ("step_" + std::to_string(stats.step) + ".ckpt"));
    }
  }

  if (!options.out_dir.empty()) {
    trainer->save(options.out_dir / "last.ckpt");
    result.checkpoint = options.out_dir / "last.ckpt";
    if (trainer->step() >= total) {
      trainer->save(options.out_dir / "final.ckpt");
      result.checkpoint = options.out_dir / "final.ckpt";
    }
  }
  result.model = trainer->model();
  return result;
}

InstructIRModel finetune_variant(const InstructIRModel& base, const TaskSet& tasks, std::uint64_t seed) {
  return base.with_task_set(tasks, seed);
}

}  // namespace instructir
