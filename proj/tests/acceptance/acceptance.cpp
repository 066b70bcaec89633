// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "instructir/backbone.hpp"
#include "instructir/degradation.hpp"
#include "instructir/evaluation.hpp"
#include "instructir/metrics.hpp"
#include "instructir/trainer.hpp"
#include "support/support.hpp"

using namespace instructir;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- P1
Outcome gradient_fidelity() {
  auto config = toy_config(4, {1, 1, 1, 1}, {1, 1, 1, 1}, 1, 8, 4, "3D");
  InstructIRModel model(config, 11);
  model.to(torch::kFloat64);
  randomize_scales(model, 12);

  auto images = torch::stack({synthetic_image(1, 16, 16), synthetic_image(2, 16, 16)}).to(torch::kFloat64);
  auto clean = torch::stack({synthetic_image(3, 16, 16), synthetic_image(4, 16, 16)}).to(torch::kFloat64);
  const std::vector<std::string> prompts{"Remove the noise from my picture", "Clear the rain from my picture"};
  auto targets = torch::tensor({0, 2}, torch::kInt64);

  auto loss_value = [&] {
    torch::Tensor restored;
    auto g = model.forward(images, prompts, restored);
    return compute_loss(restored, clean, g.logits, targets).total;
  };
  auto params = model.trainable_parameters();
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  loss_value().backward();

  Rng rng(5);
  int checked = 0, worst_index = -1;
  double worst = 0.0;
  std::size_t attempts = 0;
  while (checked < 24 && attempts++ < 2000) {
    auto& p = params[rng.uniform_index(params.size())];
    if (!p.grad().defined()) continue;
    const auto i = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::size_t>(p.numel())));
    auto flat = p.view({-1});
    const double analytic = p.grad().view({-1})[i].item<double>();
    if (std::abs(analytic) < 1e-7) continue;
    const double h = 1e-6;
    double plus, minus;
    {
      torch::NoGradGuard ng;
      const double orig = flat[i].item<double>();
      flat[i].fill_(orig + h);
      plus = loss_value().item<double>();
      flat[i].fill_(orig - h);
      minus = loss_value().item<double>();
      flat[i].fill_(orig);
    }
    const double numeric = (plus - minus) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    if (rel > worst) {
      worst = rel;
      worst_index = checked;
    }
    ++checked;
  }
  (void)worst_index;
  return {checked >= 20 && worst <= 1e-2,
          std::to_string(checked) + " parameters, max relative error " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- P2
Outcome freeze_contract() {
  TrainConfig config;
  config.system = tiny_config("5D");
  config.batch_size = 2;
  config.lr = 1e-3;
  config.seed = 3;
  Trainer trainer(config, 100);
  auto& model = trainer.model();
  auto checksum_of = [](torch::nn::Module& m, const std::string& prefix) {
    std::vector<torch::Tensor> ts;
    for (auto& item : m.named_parameters()) {
      if (item.key().rfind(prefix, 0) == 0) ts.push_back(item.value());
    }
    return parameters_checksum(ts);
  };
  const auto enc0 = model.encoder().checksum();
  const auto proj0 = checksum_of(*model.head(), "projection");
  const auto cls0 = checksum_of(*model.head(), "hidden") ^ checksum_of(*model.head(), "output");
  const auto net0 = checksum_of(*model.net(), "");

  const std::vector<std::string> prompts{"Remove the noise from my picture", "Clear the rain from my picture"};
  for (int s = 0; s < 100; ++s) {
    Batch b;
    b.degraded = torch::stack({random_image(2 * s, 16, 16), random_image(2 * s + 1, 16, 16)});
    b.clean = torch::stack({synthetic_image(s, 16, 16), synthetic_image(s + 500, 16, 16)});
    b.targets = torch::tensor({0, 2}, torch::kInt64);
    b.prompts = prompts;
    trainer.train_step(b);
  }
  const bool encoder_same = model.encoder().checksum() == enc0;
  const bool proj_changed = checksum_of(*model.head(), "projection") != proj0;
  const bool cls_changed = (checksum_of(*model.head(), "hidden") ^ checksum_of(*model.head(), "output")) != cls0;
  const bool net_changed = checksum_of(*model.net(), "") != net0;
  std::ostringstream os;
  os << "encoder unchanged=" << encoder_same << " projection changed=" << proj_changed
     << " classifier changed=" << cls_changed << " backbone changed=" << net_changed;
  return {encoder_same && proj_changed && cls_changed && net_changed, os.str()};
}

// ---------------------------------------------------------------- P3
Outcome intent_accuracy_check() {
  auto bank = expand_prompts(load_seed_prompts(), 7 * 1700, 21);
  std::size_t min_per_task = bank.size();
  for (auto t : TaskSet(7).tasks()) {
    min_per_task = std::min(min_per_task, bank.count(t, Split::Train) + bank.count(t, Split::Test));
  }
  InstructIRConfig config;
  config.task_set = "7D";
  InstructIRModel model(config, 4);
  HeadTrainOptions options;
  options.seed = 9;
  options.epochs = 20;
  auto report = train_guidance_head(model.head(), model.encoder(), bank, TaskSet(7), options);
  const double acc = report.epoch_test_accuracy.back();
  return {acc >= 0.95 && min_per_task >= 1500,
          std::to_string(min_per_task) + " prompts/task minimum, held-out accuracy after 20 epochs " +
              fmt("%.4f", acc)};
}


// ---------------------------------------------------------------- P6
Outcome metric_oracles() {
  double worst_psnr = 0.0, worst_ssim = 0.0, worst_de = 0.0;
  for (int i = 0; i < 20; ++i) {
    auto a = random_image(1000 + i, 16, 16);
    auto b = (a + 0.2 * (random_image(2000 + i, 16, 16) - 0.5)).clamp(0.0, 1.0);
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - psnr_oracle(a, b)));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - ssim_oracle(a, b)));
    worst_de = std::max(worst_de, std::abs(delta_e(a, b) - delta_e_oracle(a, b)));
  }
  std::ostringstream os;
  os << "max |diff| over 20 pairs: PSNR " << fmt("%.1e", worst_psnr) << " dB, SSIM " << fmt("%.1e", worst_ssim)
     << ", dE " << fmt("%.1e", worst_de);
  return {worst_psnr <= 1e-6 && worst_ssim <= 1e-6 && worst_de <= 1e-6, os.str()};
}

// ---------------------------------------------------------------- P7
Outcome degradation_statistics() {
  auto gray = torch::full({1, 1000, 1000}, 0.5f).expand({3, 1000, 1000}).contiguous();
  gray = gray.narrow(0, 0, 3);
  Rng rng(77);
  auto noisy = add_gaussian_noise(gray, 25.0, rng);
  const double n = static_cast<double>(gray.numel());
  auto diff = (noisy - gray).to(torch::kFloat64);
  const double mean = diff.sum().item<double>() / n;
  const double std = std::sqrt((diff - mean).pow(2).sum().item<double>() / n);
  const double rel = std::abs(std - 25.0 / 255.0) / (25.0 / 255.0);

  double const_err = 0.0;
  for (double v : {0.0, 0.25, 0.5, 1.0}) {
    auto c = torch::full({3, 48, 48}, static_cast<float>(v));
    for (std::int64_t s : {2, 3, 4}) const_err = std::max(const_err, (bicubic_degrade(c, s) - c).abs().max().item<double>());
  }
  auto ramp = (torch::arange(96, torch::kFloat32) / 128.0f + 0.1f).view({1, 1, 96}).expand({3, 96, 96}).contiguous();
  double ramp_err = 0.0;
  for (std::int64_t s : {2, 3, 4}) {
    auto out = bicubic_degrade(ramp, s);
    const std::int64_t m = 4 * s;
    ramp_err = std::max(ramp_err, (out - ramp).narrow(1, m, 96 - 2 * m).narrow(2, m, 96 - 2 * m).abs().max().item<double>());
  }
  std::ostringstream os;
  os << "noise std " << fmt("%.6f", std) << " vs " << fmt("%.6f", 25.0 / 255.0) << " (" << fmt("%.3f", 100 * rel)
     << "%) over 3e6 samples; constant error " << fmt("%.1e", const_err) << "; interior ramp error "
     << fmt("%.1e", ramp_err);
  return {rel <= 0.01 && const_err == 0.0 && ramp_err <= 1e-3, os.str()};
}

// ---------------------------------------------------------------- P8
Outcome unit_identities() {
  auto bank = expand_prompts(load_seed_prompts(), 7 * 200, 5);
  InstructIRModel model(InstructIRConfig{}, 8);
  Rng rng(6);
  std::vector<std::string> prompts;
  for (int i = 0; i < 100; ++i) prompts.push_back(bank.records()[rng.uniform_index(bank.size())].text);
  torch::NoGradGuard no_grad;
  auto e = model.guide(prompts).embedding;
  const double norm_err = (e.norm(2, 1) - 1.0).abs().max().item<double>();

  InstructionConditionBlock icb(16, 256);
  icb->routing->weight.zero_();
  auto m = icb->mask(e);
  const bool half = m.eq(0.5).all().item<bool>();

  InstructionConditionBlock fresh(16, 256);
  auto f = torch::randn({100, 16, 8, 8});
  const bool identity = torch::equal(fresh->forward(f, e), f);
  std::ostringstream os;
  os << "max | ||e|| - 1 | " << fmt("%.1e", norm_err) << " over 100 prompts; zero W_c gives m = 0.5: "
     << (half ? "yes" : "no") << "; zero-scale block is identity: " << (identity ? "yes" : "no");
  return {norm_err <= 1e-5 && half && identity, os.str()};
}

// ---------------------------------------------------------------- P9
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome protocol_determinism() {
  TempDir dir;
  for (int i = 0; i < 3; ++i) save_png(dir / ("clean_" + std::to_string(i) + ".png"), synthetic_image(40 + i, 48, 48));
  save_png(dir / "rain_clean.png", synthetic_image(50, 48, 48));
  save_png(dir / "rain.png", rain_streaks(synthetic_image(50, 48, 48), 51));
  DatasetManifest manifest;
  manifest.root = dir.path();
  for (int i = 0; i < 3; ++i) {
    manifest.records.push_back({"clean_" + std::to_string(i) + ".png", Task::Denoising, std::nullopt,
                                DegradationSpec::noise(25.0)});
  }
  manifest.records.push_back({"rain_clean.png", Task::Deraining, "rain.png", std::nullopt});
  save_manifest(dir / "test.jsonl", manifest);
  write_text_atomic(dir / "bank.jsonl", serialize_bank(expand_prompts(load_seed_prompts(), 7 * 300, 3)));
  auto config = toy_config(8, {1, 1, 1, 1}, {1, 1, 1, 1}, 1, 384, 256, "5D");
  InstructIRModel model(config, 2);
  randomize_scales(model, 3);
  model.save(dir / "model.ckpt");

  std::string cmd_base = std::string(INSTRUCTIR_CLI) + " eval --checkpoint " + (dir / "model.ckpt").string() +
                         " --manifest " + (dir / "test.jsonl").string() + " --bank " + (dir / "bank.jsonl").string() +
                         " --repetitions 10 --level basic_precise --seed 13";
  for (int run = 0; run < 2; ++run) {
    const auto cmd = cmd_base + " --out " + (dir / ("report" + std::to_string(run) + ".txt")).string() + " --jsonl " +
                     (dir / ("report" + std::to_string(run) + ".jsonl")).string();
    if (std::system(cmd.c_str()) != 0) return {false, "eval command failed: " + cmd};
  }
  const auto r0 = slurp(dir / "report0.txt"), r1 = slurp(dir / "report1.txt");
  const auto j0 = slurp(dir / "report0.jsonl"), j1 = slurp(dir / "report1.jsonl");
  const bool same = !r0.empty() && r0 == r1 && j0 == j1;

  InstructIRModel full(InstructIRConfig{}, 0);
  const auto count = full.count_parameters();
  const double image_rel = std::abs(static_cast<double>(count.image) - 16e6) / 16e6;
  const double head_rel = std::abs(static_cast<double>(count.head) - 1e5) / 1e5;
  std::ostringstream os;
  os << "R=10 reports byte-identical: " << (same ? "yes" : "no") << " (" << r0.size() << " + " << j0.size()
     << " bytes); image parameters " << count.image << " (" << fmt("%+.1f", 100 * (count.image / 16e6 - 1))
     << "%), head parameters " << count.head << " (" << fmt("%+.1f", 100 * (count.head / 1e5 - 1)) << "%)";
  return {same && image_rel <= 0.15 && head_rel <= 0.20, os.str()};
}

// ---------------------------------------------------------------- P10
Outcome checkpoint_resume() {
  TempDir dir;
  auto tuples = write_overfit_fixtures(dir.path(), 32);
  auto manifest = tuples_manifest(dir.path(), tuples);
  auto bank = tuples_bank(tuples);
  TrainConfig config;
  config.system = tiny_config("5D");
  config.batch_size = 2;
  config.max_steps = 12;
  config.crop_size = 16;
  config.seed = 4;
  const std::int64_t k = 5;

  FitOptions full;
  full.out_dir = dir / "full";
  auto uninterrupted = fit(config, manifest, bank, full);

  FitOptions first;
  first.out_dir = dir / "split";
  first.stop_after = k;
  fit(config, manifest, bank, first);
  FitOptions second;
  second.out_dir = dir / "split";
  second.resume_from = dir / "split" / "last.ckpt";
  auto resumed = fit(config, manifest, bank, second);

  const double a = uninterrupted.history[k].total;
  const double b = resumed.history.front().total;
  const bool step_matches = resumed.history.front().step == k + 1 && a == b;
  const bool end_matches = uninterrupted.history.back().total == resumed.history.back().total;

  auto base = InstructIRModel::load(dir / "full" / "final.ckpt");
  auto widened = finetune_variant(base, TaskSet::from_name("6D"), 9);
  auto old_rows = base.head()->output->weight;
  auto new_rows = widened.head()->output->weight;
  const bool rows_kept = new_rows.size(0) == 6 && torch::equal(new_rows.narrow(0, 0, 5), old_rows) &&
                         torch::equal(widened.head()->output->bias.narrow(0, 0, 5), base.head()->output->bias);
  std::ostringstream os;
  os << "step " << k + 1 << " loss uninterrupted " << fmt("%.17g", a) << " resumed " << fmt("%.17g", b)
     << "; final losses equal: " << (end_matches ? "yes" : "no") << "; 5D->6D retained rows bit-exact: "
     << (rows_kept ? "yes" : "no");
  return {step_matches && end_matches && rows_kept, os.str()};
}

// ---------------------------------------------------------------- P4 / P5
struct OverfitRun {
  std::optional<InstructIRModel> model;
  std::vector<Tuple> tuples;
  std::vector<torch::Tensor> clean, degraded;
  double final_l1 = 0.0;
  double eval_l1 = 0.0;
  double min_gain = 0.0;
  double mean_gain = 0.0;
  std::int64_t steps = 0;
  std::int64_t lce_step = -1;  // first step with Lce < 0.05
  std::int64_t l1_step = -1;   // first step with L1 < 0.02
  double seconds = 0.0;
};

OverfitRun& overfit_run() {
  static OverfitRun run = [] {
    OverfitRun r;
    const auto t0 = std::chrono::steady_clock::now();
    TempDir dir;
    const std::int64_t size = 32;
    r.tuples = write_overfit_fixtures(dir.path(), size);
    auto manifest = tuples_manifest(dir.path(), r.tuples);
    auto bank = tuples_bank(r.tuples);

    TrainConfig config;
    config.system = toy_config(8, {2, 2, 4, 8}, {2, 2, 2, 2}, 4, 384, 256, "5D");
    config.batch_size = 4;
    config.lr = 2e-3;
    config.max_steps = 2000;
    config.crop_size = size;
    config.augment = false;
    config.seed = 1;
    auto result = fit(config, manifest, bank, FitOptions{});
    r.model = result.model;
    r.steps = result.history.back().step;
    r.final_l1 = result.history.back().l1;
    for (const auto& h : result.history) {
      if (r.lce_step < 0 && h.lce < 0.05) r.lce_step = h.step;
      if (r.l1_step < 0 && h.l1 < 0.02) r.l1_step = h.step;
    }

    double l1 = 0.0;
    r.min_gain = 1e9;
    for (std::size_t i = 0; i < r.tuples.size(); ++i) {
      Rng unused;
      auto pair = load_pair(manifest, manifest.records[i], unused);
      auto out = r.model->restore(pair.degraded, r.tuples[i].prompt).image;
      l1 += (out - pair.clean).abs().mean().item<double>() / static_cast<double>(r.tuples.size());
      const double gain = psnr(out, pair.clean) - psnr(pair.degraded, pair.clean);
      r.min_gain = std::min(r.min_gain, gain);
      r.mean_gain += gain / static_cast<double>(r.tuples.size());
      r.clean.push_back(pair.clean);
      r.degraded.push_back(pair.degraded);
    }
    r.eval_l1 = l1;
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome overfit_oracle() {
  auto& r = overfit_run();
  std::ostringstream os;
  os << r.steps << " steps in " << fmt("%.0f", r.seconds) << "s, final train L1 " << fmt("%.4f", r.final_l1)
     << ", L1 on the 4 tuples " << fmt("%.4f", r.eval_l1) << ", PSNR gain over degraded min "
     << fmt("%.2f", r.min_gain) << " dB mean " << fmt("%.2f", r.mean_gain) << " dB; Lce < 0.05 at step "
     << r.lce_step << ", L1 < 0.02 at step " << r.l1_step;
  const bool pass = r.steps <= 2000 && r.final_l1 < 0.02 && r.min_gain >= 6.0 && r.seconds < 900.0;
  return {pass, os.str()};
}

Outcome routing_sensitivity() {
  auto& r = overfit_run();
  torch::NoGradGuard no_grad;
  const std::vector<std::string> prompts{"Remove the noise from my picture", "Clear the rain from my picture"};
  auto g = r.model->guide(prompts);
  auto masks = r.model->net()->routing_masks(g.embedding);
  double best = 0.0;
  bool open_interval = true;
  for (const auto& m : masks) {
    best = std::max(best, (m[0] - m[1]).abs().mean().item<double>());
    open_interval = open_interval && m.gt(0.0).all().item<bool>() && m.lt(1.0).all().item<bool>();
  }
  std::ostringstream os;
  os << masks.size() << " condition blocks, largest mean |m_noise - m_rain| " << fmt("%.4f", best)
     << ", all entries in (0,1): " << (open_interval ? "yes" : "no");
  return {best > 0.01 && open_interval, os.str()};
}

}  // namespace

int main() {
  set_warning_handler([](std::string_view) {});
  torch::set_num_threads(1);
  int failures = 0;
  auto report = [&](const char* id, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s  %s: %s (%.1fs)\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };

  report("P1", "gradient fidelity", gradient_fidelity);
  report("P2", "freeze contract", freeze_contract);
  report("P3", "intent accuracy", intent_accuracy_check);
  report("P4", "overfit oracle", overfit_oracle);
  report("P5", "routing sensitivity", routing_sensitivity);
  report("P6", "metric oracles", metric_oracles);
  report("P7", "degradation statistics", degradation_statistics);
  report("P8", "unit identities", unit_identities);
  report("P9", "protocol determinism", protocol_determinism);
  report("P10", "checkpoint resume", checkpoint_resume);
  return failures == 0 ? 0 : 1;
}
