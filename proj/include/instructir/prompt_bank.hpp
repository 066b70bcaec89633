#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instructir/common.hpp"

namespace instructir {

enum class LanguageLevel { BasicPrecise, BasicAmbiguous, RealUser };
enum class Split { Train, Test };

std::string_view level_name(LanguageLevel level);
LanguageLevel parse_level(std::string_view name);
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct PromptRecord {
  std::string text;
  Task task = Task::Denoising;
  LanguageLevel level = LanguageLevel::BasicPrecise;
  Split split = Split::Train;

  bool operator==(const PromptRecord&) const = default;
};

// Task-labelled instruction collection. Immutable once constructed; the
// constructor normalizes text and enforces the bank invariants:
//   * text non-empty after normalization
//   * no duplicate (text, task) within a split
//   * no text shared between the train and test splits
class PromptBank {
 public:
  PromptBank() = default;
  explicit PromptBank(std::vector<PromptRecord> records, std::uint64_t rng_seed = 0);

  const std::vector<PromptRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::uint64_t rng_seed() const { return rng_seed_; }

  std::size_t count(Task task, Split split) const;
  // Indices of matching records, in bank order.
  std::vector<std::size_t> pool(Task task, Split split,
                                std::optional<LanguageLevel> level = std::nullopt) const;

  // Content equality; the generation seed is provenance and not compared.
  bool operator==(const PromptBank& other) const { return records_ == other.records_; }

 private:
  std::vector<PromptRecord> records_;
  std::uint64_t rng_seed_ = 0;
};

// Curated examples, one record per (prompt, task). General prompts are
// ambiguous and are replicated to every task in the test split.
PromptBank load_seed_prompts();

// Number of distinct precise prompts the phrase tables can produce for a task.
std::size_t template_capacity(Task task);

// Grows `seed` to at least `target_count` records with template-composed
// prompts, spread uniformly over all tasks. Deterministic for a fixed seed.
// Throws CapacityError when the phrase tables cannot reach the target.
PromptBank expand_prompts(const PromptBank& seed, std::size_t target_count, std::uint64_t rng_seed,
                          double test_fraction = 0.1);

// Uniform draw among records for (task, split[, level]); advances `rng`.
// Throws EmptyPoolError naming the task and split if nothing matches.
const PromptRecord& sample_prompt(const PromptBank& bank, Task task, Split split, Rng& rng,
                                  std::optional<LanguageLevel> level = std::nullopt);

// Line-delimited JSON, one {text, task, language_level, split} object per line.
std::string serialize_bank(const PromptBank& bank);
PromptBank parse_bank(std::string_view document);
PromptBank load_bank(const std::string& path);

}  // namespace instructir
