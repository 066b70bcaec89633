#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace instructir {

// Error hierarchy. Every failure surfaced by the library derives from Error so
// the CLI can print a single machine-parseable line per failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define INSTRUCTIR_ERROR(Name, tag)                        \
  class Name : public Error {                              \
   public:                                                 \
    using Error::Error;                                    \
    const char* kind() const noexcept override { return tag; } \
  }

INSTRUCTIR_ERROR(ConfigError, "config");
INSTRUCTIR_ERROR(ParseError, "parse");
INSTRUCTIR_ERROR(IoError, "io");
INSTRUCTIR_ERROR(DecodeError, "decode");
INSTRUCTIR_ERROR(ShapeError, "shape");
INSTRUCTIR_ERROR(NumericError, "numeric");
INSTRUCTIR_ERROR(CapacityError, "capacity");
INSTRUCTIR_ERROR(EmptyPoolError, "empty_pool");
INSTRUCTIR_ERROR(UnsupportedError, "unsupported");

#undef INSTRUCTIR_ERROR

// Degradation classes. The numbering follows the nesting order of the task
// variants (3D ⊂ 5D ⊂ 6D ⊂ 7D), so a class keeps its id in every variant.
enum class Task : std::int32_t {
  Denoising = 0,
  Dehazing = 1,
  Deraining = 2,
  Deblurring = 3,
  LowLight = 4,
  SuperResolution = 5,
  Enhancement = 6,
};

inline constexpr std::int32_t kMaxTasks = 7;

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
inline std::int32_t task_id(Task task) { return static_cast<std::int32_t>(task); }
inline std::ostream& operator<<(std::ostream& os, Task task) { return os << task_name(task); }

// A model variant's task set: the first D tasks in nesting order.
class TaskSet {
 public:
  explicit TaskSet(std::int32_t count);

  static TaskSet from_name(std::string_view name);  // "3D", "5D", "6D", "7D"

  std::int32_t size() const { return count_; }
  std::string name() const;
  bool contains(Task task) const { return task_id(task) < count_; }
  std::vector<Task> tasks() const;
  Task at(std::int32_t id) const;

  bool operator==(const TaskSet&) const = default;

 private:
  std::int32_t count_;
};

// Explicit random state. Owned by callers; nothing in the library touches a
// hidden global generator except torch parameter initialization.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream keyed by (seed, keys...), e.g. (global_seed, step, index).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64() { return engine_(); }
  std::size_t uniform_index(std::size_t n);  // unbiased, n > 0
  double uniform();                          // [0, 1)
  double normal();                           // standard normal, Box-Muller
  bool coin() { return (next_u64() >> 63) != 0; }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);
std::string hex64(std::uint64_t value);

// Trim and collapse internal whitespace runs to one space; case preserved.
std::string normalize_text(std::string_view text);

// Non-fatal diagnostics (clipping, cap shortfalls, padding). Defaults to stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace instructir
