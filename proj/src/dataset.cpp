#include "instructir/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "instructir/image_io.hpp"

namespace instructir {

namespace fs = std::filesystem;

std::set<Task> DatasetManifest::tasks() const {
  std::set<Task> out;
  for (const auto& r : records) out.insert(r.task);
  return out;
}

std::size_t DatasetManifest::count(Task task) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.task == task; }));
}

fs::path DatasetManifest::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : root / p;
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["clean_path"] = r.clean_path;
    j["task"] = task_name(r.task);
    if (r.degraded_path) j["degraded_path"] = *r.degraded_path;
    if (r.spec) j["spec"] = r.spec->to_json();
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view document, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < document.size()) {
    auto end = document.find('\n', pos);
    if (end == std::string_view::npos) end = document.size();
    auto line = document.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (normalize_text(line).empty()) continue;
    const auto where = "manifest line " + std::to_string(line_no) + ": ";
    try {
      auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.clean_path = j.at("clean_path").get<std::string>();
      r.task = parse_task(j.at("task").get<std::string>());
      if (j.contains("degraded_path")) r.degraded_path = j["degraded_path"].get<std::string>();
      if (j.contains("spec")) r.spec = DegradationSpec::from_json(j["spec"]);
      if (r.degraded_path.has_value() == r.spec.has_value()) {
        throw ParseError("exactly one of degraded_path or spec is required");
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path, std::optional<fs::path> root) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), root ? *root : path.parent_path());
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  write_text_atomic(path, serialize_manifest(manifest));
}

torch::Tensor ImageCache::get(const fs::path& path) {
  const auto key = path.string();
  {
    std::lock_guard lock(mutex_);
    if (auto it = images_.find(key); it != images_.end()) return it->second;
  }
  auto image = load_image(path);
  std::lock_guard lock(mutex_);
  return images_.emplace(key, image).first->second;
}

ImagePair load_pair(const DatasetManifest& manifest, const ManifestRecord& record, Rng& rng, ImageCache* cache) {
  auto load = [&](const std::string& p) { return cache ? cache->get(manifest.resolve(p)) : load_image(manifest.resolve(p)); };
  ImagePair pair;
  pair.clean = load(record.clean_path);
  if (record.spec) {
    pair.degraded = apply_degradation(pair.clean, *record.spec, rng);
  } else if (record.degraded_path) {
    pair.degraded = load(*record.degraded_path);
    if (pair.degraded.sizes() != pair.clean.sizes()) {
      throw ShapeError("degraded image " + *record.degraded_path + " has shape " + c10::str(pair.degraded.sizes()) +
                       " but clean image " + record.clean_path + " has shape " + c10::str(pair.clean.sizes()));
    }
  } else {
    throw ConfigError("record for " + record.clean_path + " has neither degraded_path nor spec");
  }
  return pair;
}

TrainSample make_train_sample(const DatasetManifest& manifest, const ManifestRecord& record, const PromptBank& bank,
                              Rng& rng, const SampleOptions& options, ImageCache* cache) {
  if (options.crop_size < 1) throw ConfigError("crop size must be positive");
  auto pair = load_pair(manifest, record, rng, cache);
  const auto crop = options.crop_size;
  auto degraded = pair.degraded;
  auto clean = pair.clean;
  const auto h = clean.size(1);
  const auto w = clean.size(2);
  if (h < crop || w < crop) {
    warn("image " + record.clean_path + " (" + std::to_string(h) + "x" + std::to_string(w) +
         ") is smaller than the crop; reflect-padding");
    const auto ph = std::max<std::int64_t>(0, crop - h);
    const auto pw = std::max<std::int64_t>(0, crop - w);
    auto pad = [&](const torch::Tensor& t) {
      namespace F = torch::nn::functional;
      const bool reflect_ok = ph < h && pw < w;
      return F::pad(t.unsqueeze(0), F::PadFuncOptions({0, pw, 0, ph}).mode(
                     reflect_ok ? F::PadFuncOptions::mode_t(torch::kReflect) : F::PadFuncOptions::mode_t(torch::kReplicate)))
          .squeeze(0);
    };
    degraded = pad(degraded);
    clean = pad(clean);
  }
  TrainSample s;
  s.task = record.task;
  s.crop_top = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::size_t>(clean.size(1) - crop + 1)));
  s.crop_left = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::size_t>(clean.size(2) - crop + 1)));
  degraded = degraded.narrow(1, s.crop_top, crop).narrow(2, s.crop_left, crop);
  clean = clean.narrow(1, s.crop_top, crop).narrow(2, s.crop_left, crop);
  if (options.augment) {
    s.flip_h = rng.coin();
    s.flip_v = rng.coin();
  }
  if (s.flip_h) {
    degraded = degraded.flip({2});
    clean = clean.flip({2});
  }
  if (s.flip_v) {
    degraded = degraded.flip({1});
    clean = clean.flip({1});
  }
  s.degraded = degraded.contiguous();
  s.clean = clean.contiguous();
  s.prompt = sample_prompt(bank, record.task, Split::Train, rng).text;
  return s;
}

DatasetManifest balance_tasks(const std::vector<DatasetManifest>& manifests, const std::map<Task, std::size_t>& caps,
                              std::uint64_t seed) {
  if (manifests.empty()) throw ConfigError("balance_tasks needs at least one manifest");
  DatasetManifest merged;
  const bool same_root = std::all_of(manifests.begin(), manifests.end(),
                                     [&](const auto& m) { return m.root == manifests.front().root; });
  merged.root = same_root ? manifests.front().root : fs::path();
  for (const auto& m : manifests) {
    for (auto r : m.records) {
      if (!same_root) {
        r.clean_path = m.resolve(r.clean_path).string();
        if (r.degraded_path) r.degraded_path = m.resolve(*r.degraded_path).string();
      }
      merged.records.push_back(std::move(r));
    }
  }

  std::vector<bool> keep(merged.records.size(), true);
  for (const auto& [task, cap] : caps) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < merged.records.size(); ++i) {
      if (merged.records[i].task == task) idx.push_back(i);
    }
    if (cap > idx.size()) {
      warn("cap " + std::to_string(cap) + " for " + std::string(task_name(task)) + " exceeds the " +
           std::to_string(idx.size()) + " available records; keeping all");
    }
    if (cap >= idx.size()) continue;
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(task_id(task))});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    for (std::size_t i = cap; i < idx.size(); ++i) keep[idx[i]] = false;
  }
  DatasetManifest out;
  out.root = merged.root;
  for (std::size_t i = 0; i < merged.records.size(); ++i) {
    if (keep[i]) out.records.push_back(std::move(merged.records[i]));
  }
  return out;
}

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path().filename());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetManifest scan_paired(const fs::path& root, const fs::path& clean_dir, const fs::path& degraded_dir, Task task) {
  DatasetManifest m;
  m.root = root;
  const auto degraded = list_images(root / degraded_dir);
  for (const auto& name : list_images(root / clean_dir)) {
    if (!std::binary_search(degraded.begin(), degraded.end(), name)) {
      throw IoError("no degraded counterpart for " + (clean_dir / name).string() + " in " + degraded_dir.string());
    }
    m.records.push_back({(clean_dir / name).generic_string(), task, (degraded_dir / name).generic_string(), std::nullopt});
  }
  return m;
}

DatasetManifest scan_synthetic(const fs::path& root, const fs::path& clean_dir, Task task,
                               const DegradationSpec& spec) {
  spec.validate();
  DatasetManifest m;
  m.root = root;
  for (const auto& name : list_images(root / clean_dir)) {
    m.records.push_back({(clean_dir / name).generic_string(), task, std::nullopt, spec});
  }
  return m;
}

}  // namespace instructir
