#include "instructir/common.hpp"

#include <cmath>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>

namespace instructir {

namespace {

constexpr std::array<std::string_view, kMaxTasks> kTaskNames = {
    "denoising", "dehazing", "deraining", "deblurring",
    "low_light", "super_resolution", "enhancement"};

std::mutex g_warn_mutex;
WarningHandler g_warn_handler;

}  // namespace

std::string_view task_name(Task task) {
  auto id = task_id(task);
  if (id < 0 || id >= kMaxTasks) throw ConfigError("task id out of range: " + std::to_string(id));
  return kTaskNames[static_cast<std::size_t>(id)];
}

Task parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i) {
    if (kTaskNames[i] == name) return static_cast<Task>(i);
  }
  throw ParseError("unknown task '" + std::string(name) + "'");
}

TaskSet::TaskSet(std::int32_t count) : count_(count) {
  if (count != 3 && count != 5 && count != 6 && count != 7) {
    throw ConfigError("task count must be one of 3, 5, 6, 7; got " + std::to_string(count));
  }
}

TaskSet TaskSet::from_name(std::string_view name) {
  if (name.size() == 2 && name[1] == 'D' && name[0] >= '0' && name[0] <= '9') {
    return TaskSet(name[0] - '0');
  }
  throw ConfigError("unknown task set '" + std::string(name) + "' (expected 3D, 5D, 6D or 7D)");
}

std::string TaskSet::name() const { return std::to_string(count_) + "D"; }

std::vector<Task> TaskSet::tasks() const {
  std::vector<Task> out;
  for (std::int32_t i = 0; i < count_; ++i) out.push_back(static_cast<Task>(i));
  return out;
}

Task TaskSet::at(std::int32_t id) const {
  if (id < 0 || id >= count_) {
    throw ConfigError("class id " + std::to_string(id) + " outside task set " + name());
  }
  return static_cast<Task>(id);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ConfigError("uniform_index on empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng.engine_;
  if (is.fail()) throw ParseError("malformed rng state");
  return rng;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

void set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_warn_mutex);
  g_warn_handler = std::move(handler);
}

void warn(std::string_view message) {
  std::lock_guard lock(g_warn_mutex);
  if (g_warn_handler) {
    g_warn_handler(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace instructir
