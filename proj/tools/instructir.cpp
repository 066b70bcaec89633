// Command-line entry points: prompt generation, manifests, training,
// fine-tuning, evaluation, inference, embedding export and the HTTP service.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "instructir/evaluation.hpp"
#include "instructir/image_io.hpp"
#include "instructir/service.hpp"
#include "instructir/trainer.hpp"

namespace fs = std::filesystem;
using namespace instructir;

namespace {

constexpr const char* kCheckpointEnv = "INSTRUCTIR_CHECKPOINT";
constexpr std::size_t kDefaultBankSize = 7 * 1700;

std::string checkpoint_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kCheckpointEnv); env && *env) return env;
  throw ConfigError(std::string("no checkpoint given; pass --checkpoint or set ") + kCheckpointEnv);
}

PromptBank bank_or_default(const std::string& path, std::uint64_t seed) {
  if (!path.empty()) return load_bank(path);
  return expand_prompts(load_seed_prompts(), kDefaultBankSize, seed);
}

DegradationSpec parse_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("degradation spec must be noise:<sigma> or bicubic:<scale>");
  const auto kind = text.substr(0, colon);
  const auto value = text.substr(colon + 1);
  try {
    if (kind == "noise") return DegradationSpec::noise(std::stod(value));
    if (kind == "bicubic") return DegradationSpec::bicubic(std::stoll(value));
  } catch (const std::logic_error&) {
    throw ConfigError("bad degradation parameter '" + value + "'");
  }
  throw ConfigError("unknown degradation '" + kind + "'");
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-guided all-in-one image restoration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "instructir 0.1.0");

  // generate-prompts
  std::size_t gp_count = kDefaultBankSize;
  std::uint64_t gp_seed = 0;
  double gp_test = 0.1;
  std::string gp_out, gp_seed_bank;
  auto* gp = app.add_subcommand("generate-prompts", "Expand the curated seed prompts into a task-labelled bank");
  gp->add_option("--count", gp_count, "Target number of prompts (at least the seed count)");
  gp->add_option("--seed", gp_seed, "Generator seed");
  gp->add_option("--test-fraction", gp_test, "Share of generated precise prompts held out")->check(CLI::Range(0.0, 0.9));
  gp->add_option("--seed-bank", gp_seed_bank, "Seed bank file (default: built-in curated prompts)");
  gp->add_option("--out", gp_out, "Output bank (line-delimited JSON)")->required();

  // build-manifest
  std::string bm_root, bm_clean, bm_degraded, bm_synth, bm_task, bm_out;
  std::vector<std::string> bm_inputs, bm_caps;
  std::uint64_t bm_seed = 0;
  auto* bm = app.add_subcommand("build-manifest", "Scan a dataset directory, or merge and cap manifests");
  bm->add_option("--root", bm_root, "Dataset root; record paths are relative to it");
  bm->add_option("--clean", bm_clean, "Clean image directory under the root");
  bm->add_option("--degraded", bm_degraded, "Degraded image directory, paired by file name");
  bm->add_option("--synthesize", bm_synth, "noise:<sigma> or bicubic:<scale>");
  bm->add_option("--task", bm_task, "Task label for scanned images");
  bm->add_option("--input", bm_inputs, "Manifests to merge (repeatable)");
  bm->add_option("--cap", bm_caps, "Per-task cap after merging, task=N (repeatable)");
  bm->add_option("--seed", bm_seed, "Subsampling seed");
  bm->add_option("--out", bm_out, "Output manifest")->required();

  // train
  std::string tr_config, tr_manifest, tr_bank, tr_out, tr_val, tr_resume;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::int64_t> tr_stop;
  auto* tr = app.add_subcommand("train", "Jointly train the restoration network and guidance head");
  tr->add_option("--config", tr_config, "Training config (JSON); defaults to the built-in recipe");
  tr->add_option("--manifest", tr_manifest, "Training manifest")->required();
  tr->add_option("--bank", tr_bank, "Prompt bank (default: generated with the run seed)");
  tr->add_option("--val-manifest", tr_val, "Held-out manifest for per-epoch PSNR");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint written by train");
  tr->add_option("--stop-after", tr_stop, "Pause after this global step");
  tr->add_option("--seed", tr_seed, "Override the config seed");
  tr->add_option("--out", tr_out, "Output directory for logs and checkpoints")->required();

  // finetune
  std::string ft_ckpt, ft_tasks, ft_config, ft_manifest, ft_bank, ft_out, ft_val;
  std::uint64_t ft_seed = 0;
  auto* ft = app.add_subcommand("finetune", "Widen a checkpoint to a larger task set and keep training");
  ft->add_option("--checkpoint", ft_ckpt, "Source checkpoint")->required();
  ft->add_option("--task-set", ft_tasks, "Target variant: 6D or 7D")->required();
  ft->add_option("--config", ft_config, "Training config (JSON)");
  ft->add_option("--manifest", ft_manifest, "Training manifest")->required();
  ft->add_option("--bank", ft_bank, "Prompt bank");
  ft->add_option("--val-manifest", ft_val, "Held-out manifest");
  ft->add_option("--seed", ft_seed, "Seed for the new classifier rows and sampling");
  ft->add_option("--out", ft_out, "Output directory")->required();

  // eval
  std::string ev_ckpt, ev_manifest, ev_bank, ev_level = "basic_precise", ev_split = "test", ev_out, ev_jsonl,
                       ev_prompt;
  std::int64_t ev_reps = 10;
  std::uint64_t ev_seed = 0;
  bool ev_delta_e = false;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint with repeated prompt sampling");
  ev->add_option("--checkpoint", ev_ckpt, std::string("Checkpoint (default: $") + kCheckpointEnv + ")");
  ev->add_option("--manifest", ev_manifest, "Test manifest")->required();
  ev->add_option("--bank", ev_bank, "Prompt bank (default: generated with --seed)");
  ev->add_option("--repetitions", ev_reps, "Prompt re-draws per image")->check(CLI::PositiveNumber);
  ev->add_option("--level", ev_level, "basic_precise, basic_ambiguous, real_user or any");
  ev->add_option("--split", ev_split, "Bank split to draw from: train or test");
  ev->add_option("--prompt", ev_prompt, "Use this instruction for every image");
  ev->add_option("--seed", ev_seed, "Sampling seed");
  ev->add_flag("--delta-e", ev_delta_e, "Also report mean CIE76 colour difference");
  ev->add_option("--out", ev_out, "Text report (default: stdout)");
  ev->add_option("--jsonl", ev_jsonl, "Machine-readable report");

  // restore
  std::string rs_ckpt, rs_image, rs_out, rs_steps;
  std::vector<std::string> rs_prompts;
  auto* rs = app.add_subcommand("restore", "Restore one image; repeat --prompt to chain instructions");
  rs->add_option("--checkpoint", rs_ckpt, std::string("Checkpoint (default: $") + kCheckpointEnv + ")");
  rs->add_option("--image", rs_image, "Input PNG or JPEG")->required();
  rs->add_option("--prompt", rs_prompts, "Instruction (repeatable)")->required();
  rs->add_option("--out", rs_out, "Output PNG (final step)")->required();
  rs->add_option("--steps-dir", rs_steps, "Also write every chain step as step_<i>.png");

  // export-embeddings
  std::string ee_ckpt, ee_bank, ee_out;
  std::uint64_t ee_seed = 0;
  auto* ee = app.add_subcommand("export-embeddings", "Write the guidance embedding of every bank prompt");
  ee->add_option("--checkpoint", ee_ckpt, std::string("Checkpoint (default: $") + kCheckpointEnv + ")");
  ee->add_option("--bank", ee_bank, "Prompt bank (default: generated with --seed)");
  ee->add_option("--seed", ee_seed, "Seed for the default bank");
  ee->add_option("--out", ee_out, "Output file: one 'task_id v1 ... vn' row per prompt")->required();

  // serve
  std::string sv_ckpt;
  ServiceOptions sv_options;
  auto* sv = app.add_subcommand("serve", "Serve POST /restore, GET /health and GET /tasks");
  sv->add_option("--checkpoint", sv_ckpt, std::string("Checkpoint (default: $") + kCheckpointEnv + ")");
  sv->add_option("--host", sv_options.host, "Bind address");
  sv->add_option("--port", sv_options.port, "Port (0 picks a free one)");
  sv->add_option("--workers", sv_options.workers, "Simultaneous restorations")->check(CLI::Range(1, 1024));
  sv->add_option("--max-side", sv_options.max_side, "Largest accepted image side in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gp) {
      auto seed = gp_seed_bank.empty() ? load_seed_prompts() : load_bank(gp_seed_bank);
      auto bank = expand_prompts(seed, gp_count, gp_seed, gp_test);
      write_text_atomic(gp_out, serialize_bank(bank));
      print_json({{"out", gp_out}, {"prompts", bank.size()}});
    } else if (*bm) {
      DatasetManifest manifest;
      if (!bm_inputs.empty()) {
        std::vector<DatasetManifest> parts;
        for (const auto& p : bm_inputs) parts.push_back(load_manifest(p));
        std::map<Task, std::size_t> caps;
        for (const auto& c : bm_caps) {
          const auto eq = c.find('=');
          if (eq == std::string::npos) throw ConfigError("cap must look like task=N, got '" + c + "'");
          caps[parse_task(c.substr(0, eq))] = std::stoull(c.substr(eq + 1));
        }
        manifest = balance_tasks(parts, caps, bm_seed);
        // Re-anchor paths to the output location.
        const auto out_dir = fs::absolute(fs::path(bm_out)).parent_path();
        for (auto& r : manifest.records) {
          r.clean_path = fs::absolute(manifest.resolve(r.clean_path)).lexically_relative(out_dir).generic_string();
          if (r.degraded_path) {
            r.degraded_path =
                fs::absolute(manifest.resolve(*r.degraded_path)).lexically_relative(out_dir).generic_string();
          }
        }
      } else {
        if (bm_root.empty() || bm_clean.empty() || bm_task.empty()) {
          throw ConfigError("scanning needs --root, --clean and --task");
        }
        if (bm_degraded.empty() == bm_synth.empty()) throw ConfigError("give exactly one of --degraded or --synthesize");
        const auto task = parse_task(bm_task);
        manifest = bm_degraded.empty() ? scan_synthetic(bm_root, bm_clean, task, parse_spec(bm_synth))
                                       : scan_paired(bm_root, bm_clean, bm_degraded, task);
        const auto out_dir = fs::absolute(fs::path(bm_out)).parent_path();
        const auto prefix = fs::absolute(bm_root).lexically_relative(out_dir);
        for (auto& r : manifest.records) {
          r.clean_path = (prefix / r.clean_path).lexically_normal().generic_string();
          if (r.degraded_path) r.degraded_path = (prefix / *r.degraded_path).lexically_normal().generic_string();
        }
      }
      save_manifest(bm_out, manifest);
      print_json({{"out", bm_out}, {"records", manifest.size()}});
    } else if (*tr || *ft) {
      const auto& config_path = *tr ? tr_config : ft_config;
      TrainConfig config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
      if (*tr && tr_seed) config.seed = *tr_seed;
      if (*ft) config.seed = ft_seed;
      FitOptions options;
      std::optional<InstructIRModel> base;
      if (*ft) {
        base = finetune_variant(InstructIRModel::load(ft_ckpt), TaskSet::from_name(ft_tasks), ft_seed);
        config.system = base->config();
        options.initial_model = base;
      }
      options.out_dir = *tr ? tr_out : ft_out;
      const auto& val = *tr ? tr_val : ft_val;
      if (!val.empty()) options.validation = load_manifest(val);
      if (*tr && !tr_resume.empty()) options.resume_from = tr_resume;
      if (*tr) options.stop_after = tr_stop;
      const auto manifest = load_manifest(*tr ? tr_manifest : ft_manifest);
      const auto bank = bank_or_default(*tr ? tr_bank : ft_bank, config.seed);
      options.on_step = [](const StepStats& s) {
        if (s.step % 50 == 0) {
          std::fprintf(stderr, "step %lld  lr %.3g  l1 %.5f  lce %.5f\n", static_cast<long long>(s.step), s.lr, s.l1,
                       s.lce);
        }
      };
      auto result = fit(config, manifest, bank, options);
      nlohmann::ordered_json j;
      j["checkpoint"] = result.checkpoint.string();
      j["steps"] = result.history.empty() ? 0 : result.history.back().step;
      if (!result.history.empty()) j["final_total"] = result.history.back().total;
      print_json(j);
    } else if (*ev) {
      const auto model = InstructIRModel::load(checkpoint_or_env(ev_ckpt));
      const auto manifest = load_manifest(ev_manifest);
      const auto bank = bank_or_default(ev_bank, ev_seed);
      EvalProtocol protocol;
      protocol.repetitions = ev_reps;
      protocol.level = ev_level == "any" ? std::nullopt : std::optional(parse_level(ev_level));
      protocol.split = parse_split(ev_split);
      protocol.seed = ev_seed;
      protocol.delta_e = ev_delta_e;
      if (!ev_prompt.empty()) protocol.fixed_prompt = ev_prompt;
      const auto report = evaluate(model, manifest, bank, protocol);
      const auto text = format_report(report);
      if (ev_out.empty()) {
        std::cout << text;
      } else {
        write_text_atomic(ev_out, text);
      }
      if (!ev_jsonl.empty()) write_text_atomic(ev_jsonl, format_report_jsonl(report));
    } else if (*rs) {
      const auto model = InstructIRModel::load(checkpoint_or_env(rs_ckpt));
      auto image = load_image(rs_image);
      if (!rs_steps.empty()) fs::create_directories(rs_steps);
      nlohmann::ordered_json j;
      j["out"] = rs_out;
      j["steps"] = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < rs_prompts.size(); ++i) {
        RestoreResult r;
        try {
          r = model.restore(image, rs_prompts[i]);
        } catch (const Error& e) {
          if (rs_prompts.size() > 1) std::fprintf(stderr, "chain step %zu failed\n", i);
          throw;
        }
        const auto png = encode_png(r.image);
        if (!rs_steps.empty()) write_file_atomic(fs::path(rs_steps) / ("step_" + std::to_string(i) + ".png"), png);
        if (i + 1 == rs_prompts.size()) write_file_atomic(rs_out, png);
        j["steps"].push_back({{"predicted_task", task_name(r.task)}, {"confidence", r.confidence}});
        image = quantize_8bit(r.image);
      }
      print_json(j);
    } else if (*ee) {
      const auto model = InstructIRModel::load(checkpoint_or_env(ee_ckpt));
      const auto bank = bank_or_default(ee_bank, ee_seed);
      export_embeddings(model.head(), model.encoder(), bank, ee_out);
      print_json({{"out", ee_out}, {"prompts", bank.size()}});
    } else if (*sv) {
      const auto path = checkpoint_or_env(sv_ckpt);
      const auto bytes = read_file(path);
      const auto id = hex64(fnv1a64({reinterpret_cast<const char*>(bytes.data()), bytes.size()}));
      RestoreService service(InstructIRModel::load(path), sv_options, id);
      std::fprintf(stderr, "serving %s on %s:%d\n", path.c_str(), sv_options.host.c_str(), sv_options.port);
      service.listen();
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
