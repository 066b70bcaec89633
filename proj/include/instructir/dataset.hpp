#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "instructir/common.hpp"
#include "instructir/degradation.hpp"
#include "instructir/prompt_bank.hpp"

namespace instructir {

// One training/evaluation image: a clean target plus either a degraded file
// (paired datasets) or a synthesis spec (noise, bicubic).
struct ManifestRecord {
  std::string clean_path;
  Task task = Task::Denoising;
  std::optional<std::string> degraded_path;
  std::optional<DegradationSpec> spec;

  bool operator==(const ManifestRecord&) const = default;
};

// Record paths are relative to `root` (or absolute).
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  std::set<Task> tasks() const;
  std::size_t count(Task task) const;
  std::filesystem::path resolve(const std::string& path) const;
};

// Line-delimited JSON: {"clean_path", "task", "degraded_path"} or
// {"clean_path", "task", "spec": {"type": "gaussian_noise", "sigma"} | {"type": "bicubic", "scale"}}.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view document, const std::filesystem::path& root);
// Root defaults to the manifest file's directory.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<std::filesystem::path> root = std::nullopt);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Decoded-image cache shared by sample builders; safe for concurrent use.
class ImageCache {
 public:
  torch::Tensor get(const std::filesystem::path& path);

 private:
  std::mutex mutex_;
  std::map<std::string, torch::Tensor> images_;
};

struct ImagePair {
  torch::Tensor degraded;
  torch::Tensor clean;
};

// Loads (or synthesizes, drawing noise from `rng`) the pair for one record.
// Errors: IoError (missing file), DecodeError, ShapeError (size mismatch).
ImagePair load_pair(const DatasetManifest& manifest, const ManifestRecord& record, Rng& rng,
                    ImageCache* cache = nullptr);

struct SampleOptions {
  std::int64_t crop_size = 256;
  bool augment = true;  // random horizontal / vertical flips
};

struct TrainSample {
  torch::Tensor degraded;  // (3, crop, crop)
  torch::Tensor clean;
  Task task = Task::Denoising;
  std::string prompt;
  std::int64_t crop_top = 0;
  std::int64_t crop_left = 0;
  bool flip_h = false;
  bool flip_v = false;
};

// Synthesis, crop, flips and prompt all draw from `rng`, in that order, so
// (record, rng state) fully determines the sample. Images smaller than the
// crop are reflect-padded first, with a warning.
TrainSample make_train_sample(const DatasetManifest& manifest, const ManifestRecord& record,
                              const PromptBank& bank, Rng& rng, const SampleOptions& options,
                              ImageCache* cache = nullptr);

// Concatenates manifests and caps each task's record count by seeded uniform
// subsampling (original order kept). A cap above the available count keeps
// every record and warns.
DatasetManifest balance_tasks(const std::vector<DatasetManifest>& manifests,
                              const std::map<Task, std::size_t>& caps, std::uint64_t seed);

// Pairs files in `clean_dir` and `degraded_dir` (relative to `root`) by file name.
DatasetManifest scan_paired(const std::filesystem::path& root, const std::filesystem::path& clean_dir,
                            const std::filesystem::path& degraded_dir, Task task);
// One synthesis record per image in `clean_dir`.
DatasetManifest scan_synthetic(const std::filesystem::path& root, const std::filesystem::path& clean_dir, Task task,
                               const DegradationSpec& spec);

}  // namespace instructir
