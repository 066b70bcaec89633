#include "instructir/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "instructir/metrics.hpp"

namespace instructir {

namespace {

struct Accumulator {
  double sum = 0.0;
  std::int64_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double mean() const { return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN(); }
};

double stddev(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size()));
}

Summary collect(const std::vector<const TaskMetrics*>& tasks, std::optional<std::size_t> only_rep) {
  Accumulator psnr_all, ssim_all, de_all;
  std::vector<double> rep_psnr, rep_ssim;
  Summary s;
  std::size_t reps = 0;
  for (auto* t : tasks) reps = std::max(reps, t->psnr.size());
  for (std::size_t r = 0; r < reps; ++r) {
    if (only_rep && r != *only_rep) continue;
    Accumulator p, q;
    for (auto* t : tasks) {
      if (r >= t->psnr.size()) continue;
      for (std::size_t i = 0; i < t->psnr[r].size(); ++i) {
        if (std::isfinite(t->psnr[r][i])) {
          p.add(t->psnr[r][i]);
          psnr_all.add(t->psnr[r][i]);
        } else {
          ++s.infinite_psnr;
        }
        q.add(t->ssim[r][i]);
        ssim_all.add(t->ssim[r][i]);
        if (!t->delta_e.empty()) de_all.add(t->delta_e[r][i]);
      }
    }
    if (p.n > 0) rep_psnr.push_back(p.mean());
    if (q.n > 0) rep_ssim.push_back(q.mean());
  }
  s.psnr_mean = psnr_all.mean();
  s.ssim_mean = ssim_all.mean();
  s.psnr_std = stddev(rep_psnr);
  s.ssim_std = stddev(rep_ssim);
  if (de_all.n > 0) s.delta_e_mean = de_all.mean();
  s.n_values = ssim_all.n;
  return s;
}

std::uint64_t record_key(const ManifestRecord& r) {
  std::string id = r.clean_path + '\n' + std::string(task_name(r.task)) + '\n' + r.degraded_path.value_or("") + '\n';
  if (r.spec) id += r.spec->to_json().dump();
  return fnv1a64(id);
}

std::string fmt(double v, int precision = 4) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

void append_summary(nlohmann::ordered_json& j, const Summary& s) {
  j["psnr_mean"] = std::isfinite(s.psnr_mean) ? nlohmann::ordered_json(s.psnr_mean) : nlohmann::ordered_json(nullptr);
  j["psnr_std"] = s.psnr_std;
  j["ssim_mean"] = std::isfinite(s.ssim_mean) ? nlohmann::ordered_json(s.ssim_mean) : nlohmann::ordered_json(nullptr);
  j["ssim_std"] = s.ssim_std;
  if (s.delta_e_mean) j["delta_e_mean"] = *s.delta_e_mean;
  j["n_values"] = s.n_values;
  j["infinite_psnr"] = s.infinite_psnr;
}

[[noreturn]] void rethrow_with_step(const Error& e, std::size_t step) {
  const std::string msg = "chain step " + std::to_string(step) + ": " + e.what();
  if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
  if (dynamic_cast<const ParseError*>(&e)) throw ParseError(msg);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
  if (dynamic_cast<const DecodeError*>(&e)) throw DecodeError(msg);
  if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  if (dynamic_cast<const CapacityError*>(&e)) throw CapacityError(msg);
  if (dynamic_cast<const EmptyPoolError*>(&e)) throw EmptyPoolError(msg);
  if (dynamic_cast<const UnsupportedError*>(&e)) throw UnsupportedError(msg);
  throw Error(msg);
}

}  // namespace

Summary summarize(const TaskMetrics& metrics) { return collect({&metrics}, std::nullopt); }

Summary summarize_repetition(const TaskMetrics& metrics, std::size_t repetition) {
  return collect({&metrics}, repetition);
}

Summary MetricReport::overall() const {
  std::vector<const TaskMetrics*> all;
  for (const auto& t : tasks) all.push_back(&t);
  return collect(all, std::nullopt);
}

MetricReport evaluate(const InstructIRModel& model, const DatasetManifest& manifest, const PromptBank& bank,
                      const EvalProtocol& protocol) {
  if (protocol.repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (protocol.fixed_prompt && normalize_text(*protocol.fixed_prompt).empty()) throw ConfigError("fixed prompt is empty");
  const auto tasks = model.tasks();
  for (auto t : manifest.tasks()) {
    if (!tasks.contains(t)) {
      throw ConfigError("test manifest contains task " + std::string(task_name(t)) + " outside task set " + tasks.name());
    }
  }
  if (!protocol.fixed_prompt) {
    for (auto t : manifest.tasks()) {
      if (bank.pool(t, protocol.split, protocol.level).empty()) {
        throw EmptyPoolError("no " + std::string(protocol.level ? level_name(*protocol.level) : "any-level") + " " +
                             std::string(split_name(protocol.split)) + " prompts for task " +
                             std::string(task_name(t)));
      }
    }
  }

  MetricReport report;
  report.checkpoint = hex64(model.weights_checksum());
  report.task_set = tasks.name();
  report.protocol = protocol;

  std::map<Task, TaskMetrics> by_task;
  const auto reps = static_cast<std::size_t>(protocol.repetitions);
  ImageCache cache;
  for (const auto& record : manifest.records) {
    auto& m = by_task[record.task];
    m.task = record.task;
    if (m.psnr.empty()) {
      m.psnr.resize(reps);
      m.ssim.resize(reps);
      m.prompts.resize(reps);
      if (protocol.delta_e) m.delta_e.resize(reps);
    }
    m.images.push_back(record.clean_path);
    const auto key = record_key(record);
    Rng synth = Rng::derive(protocol.seed, {key, 0xd15ULL});
    const auto pair = load_pair(manifest, record, synth, &cache);
    for (std::size_t r = 0; r < reps; ++r) {
      std::string prompt;
      if (protocol.fixed_prompt) {
        prompt = *protocol.fixed_prompt;
      } else {
        Rng rng = Rng::derive(protocol.seed, {key, static_cast<std::uint64_t>(r)});
        prompt = sample_prompt(bank, record.task, protocol.split, rng, protocol.level).text;
      }
      const auto out = model.restore(pair.degraded, prompt).image;
      m.psnr[r].push_back(psnr(out, pair.clean));
      m.ssim[r].push_back(ssim(out, pair.clean));
      if (protocol.delta_e) m.delta_e[r].push_back(delta_e(out, pair.clean));
      m.prompts[r].push_back(std::move(prompt));
      if (std::isinf(m.psnr[r].back())) ++m.infinite_psnr;
    }
  }
  for (auto& [task, m] : by_task) report.tasks.push_back(std::move(m));
  return report;
}

std::string format_report(const MetricReport& report) {
  const auto& p = report.protocol;
  std::ostringstream os;
  os << "checkpoint " << report.checkpoint << "  task_set " << report.task_set << '\n';
  os << "repetitions " << p.repetitions << "  level " << (p.level ? std::string(level_name(*p.level)) : "any")
     << "  split " << split_name(p.split) << "  seed " << p.seed;
  if (p.fixed_prompt) os << "  prompt \"" << *p.fixed_prompt << '"';
  os << "\n\n";
  for (const auto& t : report.tasks) {
    const auto s = summarize(t);
    os << "[" << task_name(t.task) << "]  images " << t.n_images() << "  repetitions " << t.n_repetitions() << '\n';
    os << "  PSNR " << fmt(s.psnr_mean) << " +- " << fmt(s.psnr_std) << " dB   SSIM " << fmt(s.ssim_mean) << " +- "
       << fmt(s.ssim_std);
    if (s.delta_e_mean) os << "   dE " << fmt(*s.delta_e_mean);
    if (s.infinite_psnr > 0) os << "   (" << s.infinite_psnr << " infinite PSNR excluded)";
    os << '\n';
    for (std::size_t r = 0; r < t.psnr.size(); ++r) {
      const auto rs = summarize_repetition(t, r);
      os << "  rep " << r + 1 << "  PSNR " << fmt(rs.psnr_mean) << "  SSIM " << fmt(rs.ssim_mean);
      if (rs.delta_e_mean) os << "  dE " << fmt(*rs.delta_e_mean);
      os << '\n';
    }
    os << '\n';
  }
  const auto o = report.overall();
  os << "[overall]  PSNR " << fmt(o.psnr_mean) << " dB   SSIM " << fmt(o.ssim_mean);
  if (o.delta_e_mean) os << "   dE " << fmt(*o.delta_e_mean);
  os << "   values " << o.n_values << '\n';
  return os.str();
}

std::string format_report_jsonl(const MetricReport& report) {
  std::string out;
  for (const auto& t : report.tasks) {
    for (std::size_t r = 0; r < t.psnr.size(); ++r) {
      nlohmann::ordered_json j;
      j["kind"] = "repetition";
      j["task"] = task_name(t.task);
      j["repetition"] = r + 1;
      append_summary(j, summarize_repetition(t, r));
      out += j.dump() + '\n';
    }
  }
  for (const auto& t : report.tasks) {
    nlohmann::ordered_json j;
    j["kind"] = "task";
    j["task"] = task_name(t.task);
    j["n_images"] = t.n_images();
    j["n_repetitions"] = t.n_repetitions();
    append_summary(j, summarize(t));
    out += j.dump() + '\n';
  }
  nlohmann::ordered_json j;
  j["kind"] = "overall";
  j["checkpoint"] = report.checkpoint;
  j["task_set"] = report.task_set;
  j["repetitions"] = report.protocol.repetitions;
  j["seed"] = report.protocol.seed;
  append_summary(j, report.overall());
  out += j.dump() + '\n';
  return out;
}

std::vector<RestoreResult> chain_restore(const InstructIRModel& model, const torch::Tensor& image,
                                         const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw ConfigError("chain needs at least one instruction");
  std::vector<RestoreResult> out;
  torch::Tensor current = image;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    try {
      out.push_back(model.restore(current, prompts[i]));
    } catch (const Error& e) {
      rethrow_with_step(e, i);
    }
    current = out.back().image;
  }
  return out;
}

}  // namespace instructir
