#include "instructir/prompt_bank.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace instructir {

namespace {

struct LevelName {
  LanguageLevel level;
  std::string_view name;
};
constexpr LevelName kLevels[] = {
    {LanguageLevel::BasicPrecise, "basic_precise"},
    {LanguageLevel::BasicAmbiguous, "basic_ambiguous"},
    {LanguageLevel::RealUser, "real_user"},
};

// Phrase tables for the template generator. A precise prompt is
//   prefix + verb + noun + place + qualifier + terminator
// and an ambiguous one swaps in a vague verb and noun.
struct Prefix {
  std::string_view lead;
  std::string_view end;
};
constexpr Prefix kPrefixes[] = {
    {"", "."},
    {"please ", "."},
    {"can you ", "?"},
    {"could you ", "?"},
    {"I need you to ", "."},
    {"help me ", "."},
};
constexpr std::string_view kQualifiers[] = {"", " for me", " if you can", " right away"};
constexpr std::string_view kVagueVerbs[] = {"fix", "clean up", "sort out"};

struct PhraseTable {
  std::array<std::string_view, 6> verbs;
  std::array<std::string_view, 6> nouns;
  std::array<std::string_view, 6> places;
  std::array<std::string_view, 3> vague_nouns;
};

constexpr std::array<PhraseTable, kMaxTasks> kTables = {{
    // denoising
    {{"remove", "reduce", "clean up", "get rid of", "eliminate", "suppress"},
     {"the noise", "the grain", "the noisy dots", "the speckles", "the sensor noise", "the graininess"},
     {"from my photo", "in this image", "from this picture", "in my shot", "from the photograph",
      "in this snapshot"},
     {"the tiny dots", "the little specks", "the rough texture"}},
    // dehazing
    {{"remove", "clear", "get rid of", "lift", "cut through", "take away"},
     {"the haze", "the fog", "the mist", "the smog", "the hazy veil", "the foggy layer"},
     {"from my photo", "in this image", "from this picture", "in my shot", "from the landscape photo",
      "over this scene"},
     {"the cloudy look", "the milky look", "the washed-out sky"}},
    // deraining
    {{"remove", "erase", "get rid of", "clean off", "wipe out", "take out"},
     {"the rain", "the raindrops", "the rain streaks", "the rainy streaks", "the drizzle",
      "the falling water drops"},
     {"from my photo", "in this image", "from this picture", "in my shot", "from the street photo",
      "over this scene"},
     {"the streaky lines", "the wet look", "the stripes"}},
    // deblurring
    {{"fix", "remove", "reduce", "correct", "undo", "eliminate"},
     {"the blur", "the motion blur", "the camera shake", "the blurriness", "the fuzziness",
      "the shaky smearing"},
     {"in my photo", "in this image", "in this picture", "in my shot", "in the photograph",
      "in this snapshot"},
     {"the soft look", "the unclear edges", "the smudged look"}},
    // low_light
    {{"fix", "correct", "improve", "brighten up", "lift", "repair"},
     {"the darkness", "the low light", "the underexposure", "the dim lighting",
      "the poor illumination", "the murky shadows"},
     {"in my photo", "in this image", "in this picture", "in my shot", "in the night photo",
      "in this snapshot"},
     {"the gloomy look", "the heavy shadows", "the dull tones"}},
    // super_resolution
    {{"increase", "boost", "upscale", "raise", "double", "multiply"},
     {"the resolution", "the pixel count", "the level of detail", "the pixel resolution",
      "the fine detail density", "the image size and detail"},
     {"of my photo", "of this image", "of this picture", "of my shot", "of the photograph",
      "of this snapshot"},
     {"the tiny size", "the small look", "the pixelated look"}},
    // enhancement
    {{"adjust", "balance", "grade", "retouch", "tune", "refine"},
     {"the colors", "the color balance", "the contrast", "the saturation", "the color grading",
      "the vibrance"},
     {"of my photo", "of this image", "of this picture", "of my shot", "of the photograph",
      "of this snapshot"},
     {"the bland look", "the flat look", "the boring look"}},
}};

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string compose_precise(const PhraseTable& t, std::size_t index) {
  const std::size_t nq = std::size(kQualifiers);
  const auto q = index % nq;
  index /= nq;
  const auto pl = index % t.places.size();
  index /= t.places.size();
  const auto n = index % t.nouns.size();
  index /= t.nouns.size();
  const auto v = index % t.verbs.size();
  index /= t.verbs.size();
  const auto& p = kPrefixes[index % std::size(kPrefixes)];
  std::string text = std::string(p.lead) + std::string(t.verbs[v]) + " " + std::string(t.nouns[n]) +
                     " " + std::string(t.places[pl]) + std::string(kQualifiers[q]) + std::string(p.end);
  return capitalize(std::move(text));
}

constexpr std::size_t kAmbiguousPrefixes = 3;

std::size_t ambiguous_capacity(const PhraseTable& t) {
  return kAmbiguousPrefixes * std::size(kVagueVerbs) * t.vague_nouns.size() * t.places.size();
}

std::string compose_ambiguous(const PhraseTable& t, std::size_t index) {
  const auto pl = index % t.places.size();
  index /= t.places.size();
  const auto n = index % t.vague_nouns.size();
  index /= t.vague_nouns.size();
  const auto v = index % std::size(kVagueVerbs);
  index /= std::size(kVagueVerbs);
  const auto& p = kPrefixes[index % kAmbiguousPrefixes];
  std::string text = std::string(p.lead) + std::string(kVagueVerbs[v]) + " " +
                     std::string(t.vague_nouns[n]) + " " + std::string(t.places[pl]) + std::string(p.end);
  return capitalize(std::move(text));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  return idx;
}

}  // namespace

std::string_view level_name(LanguageLevel level) {
  for (const auto& l : kLevels) {
    if (l.level == level) return l.name;
  }
  throw ConfigError("invalid language level");
}

LanguageLevel parse_level(std::string_view name) {
  for (const auto& l : kLevels) {
    if (l.name == name) return l.level;
  }
  throw ParseError("unknown language level '" + std::string(name) + "'");
}

std::string_view split_name(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(name) + "'");
}

PromptBank::PromptBank(std::vector<PromptRecord> records, std::uint64_t rng_seed)
    : records_(std::move(records)), rng_seed_(rng_seed) {
  std::set<std::tuple<Split, Task, std::string>> seen;
  std::map<std::string, Split> text_split;
  for (auto& r : records_) {
    r.text = normalize_text(r.text);
    if (r.text.empty()) throw ConfigError("prompt text is empty after trimming");
    task_name(r.task);  // range check
    if (!seen.emplace(r.split, r.task, r.text).second) {
      throw ConfigError("duplicate prompt '" + r.text + "' for task " + std::string(task_name(r.task)) +
                        " in split " + std::string(split_name(r.split)));
    }
    auto [it, inserted] = text_split.emplace(r.text, r.split);
    if (!inserted && it->second != r.split) {
      throw ConfigError("prompt '" + r.text + "' appears in both train and test splits");
    }
  }
}

std::size_t PromptBank::count(Task task, Split split) const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const auto& r) {
    return r.task == task && r.split == split;
  }));
}

std::vector<std::size_t> PromptBank::pool(Task task, Split split, std::optional<LanguageLevel> level) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.task == task && r.split == split && (!level || r.level == *level)) out.push_back(i);
  }
  return out;
}

PromptBank load_seed_prompts() {
  using enum Task;
  const std::vector<std::pair<Task, std::string_view>> rows = {
      {Denoising, "Can you clean the dots from my image?"},
      {Denoising, "Fix the grainy parts of this photo"},
      {Denoising, "Remove the noise from my picture"},
      {Deblurring, "Can you reduce the movement in the image?"},
      {Deblurring, "My picture's not sharp, fix it"},
      {Deblurring, "Deblur my picture, it's too fuzzy"},
      {Dehazing, "Can you make this picture clearer?"},
      {Dehazing, "Help, my picture is all cloudy"},
      {Dehazing, "Remove the fog from my photo"},
      {Deraining, "I want my photo to be clear, not rainy"},
      {Deraining, "Clear the rain from my picture"},
      {Deraining, "Remove the raindrops from my photo"},
      {SuperResolution, "Make my photo bigger and better"},
      {SuperResolution, "Add details to this image"},
      {SuperResolution, "Increase the resolution of this photo"},
      {LowLight, "The photo is too dark, improve exposure"},
      {LowLight, "Increase the illumination in this shot"},
      {LowLight, "My shot has very low dynamic range"},
      {Enhancement, "Make it pop!"},
      {Enhancement, "Adjust the color balance for a natural look"},
      {Enhancement, "Apply a cinematic color grade to the photo"},
  };
  const std::string_view general[] = {"Fix my image please", "make the image look better"};

  std::vector<PromptRecord> records;
  for (const auto& [task, text] : rows) {
    records.push_back({std::string(text), task, LanguageLevel::BasicPrecise, Split::Train});
  }
  for (auto text : general) {
    for (std::int32_t t = 0; t < kMaxTasks; ++t) {
      records.push_back({std::string(text), static_cast<Task>(t), LanguageLevel::BasicAmbiguous, Split::Test});
    }
  }
  return PromptBank(std::move(records));
}

std::size_t template_capacity(Task task) {
  const auto& t = kTables[static_cast<std::size_t>(task_id(task))];
  return std::size(kPrefixes) * t.verbs.size() * t.nouns.size() * t.places.size() * std::size(kQualifiers);
}

PromptBank expand_prompts(const PromptBank& seed, std::size_t target_count, std::uint64_t rng_seed,
                          double test_fraction) {
  if (target_count < seed.size()) {
    throw ConfigError("target_count " + std::to_string(target_count) + " is below the seed bank size " +
                      std::to_string(seed.size()));
  }
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw ConfigError("test_fraction must lie in [0, 1)");

  std::vector<PromptRecord> out = seed.records();
  std::set<std::string> used;
  for (const auto& r : out) used.insert(r.text);

  const std::size_t missing = target_count - seed.size();
  const std::size_t quota = (missing + kMaxTasks - 1) / kMaxTasks;
  if (quota == 0) return PromptBank(std::move(out), rng_seed);

  for (std::int32_t t = 0; t < kMaxTasks; ++t) {
    const auto task = static_cast<Task>(t);
    const auto& table = kTables[static_cast<std::size_t>(t)];
    Rng rng = Rng::derive(rng_seed, {static_cast<std::uint64_t>(t)});

    const std::size_t n_ambiguous = std::min(quota / 20, ambiguous_capacity(table));
    const std::size_t n_precise = quota - n_ambiguous;
    if (n_precise > template_capacity(task)) {
      throw CapacityError("cannot generate " + std::to_string(n_precise) + " prompts for " +
                          std::string(task_name(task)) + ": template capacity is " +
                          std::to_string(template_capacity(task)));
    }

    std::vector<std::string> precise;
    for (auto idx : shuffled_indices(template_capacity(task), rng)) {
      if (precise.size() == n_precise) break;
      auto text = compose_precise(table, idx);
      if (used.insert(text).second) precise.push_back(std::move(text));
    }
    if (precise.size() < n_precise) {
      throw CapacityError("template collisions left only " + std::to_string(precise.size()) +
                          " distinct prompts for " + std::string(task_name(task)));
    }
    const auto n_test = static_cast<std::size_t>(static_cast<double>(n_precise) * test_fraction + 0.5);
    for (std::size_t i = 0; i < precise.size(); ++i) {
      out.push_back({std::move(precise[i]), task, LanguageLevel::BasicPrecise,
                     i < n_test ? Split::Test : Split::Train});
    }

    std::size_t added = 0;
    for (auto idx : shuffled_indices(ambiguous_capacity(table), rng)) {
      if (added == n_ambiguous) break;
      auto text = compose_ambiguous(table, idx);
      if (!used.insert(text).second) continue;
      out.push_back({std::move(text), task, LanguageLevel::BasicAmbiguous, Split::Test});
      ++added;
    }
  }
  return PromptBank(std::move(out), rng_seed);
}

const PromptRecord& sample_prompt(const PromptBank& bank, Task task, Split split, Rng& rng,
                                  std::optional<LanguageLevel> level) {
  const auto matches = bank.pool(task, split, level);
  if (matches.empty()) {
    std::string msg = "no prompts for task " + std::string(task_name(task)) + " in split " +
                      std::string(split_name(split));
    if (level) msg += " at level " + std::string(level_name(*level));
    throw EmptyPoolError(msg);
  }
  return bank.records()[matches[rng.uniform_index(matches.size())]];
}

std::string serialize_bank(const PromptBank& bank) {
  std::string out;
  for (const auto& r : bank.records()) {
    nlohmann::ordered_json j;
    j["text"] = r.text;
    j["task"] = task_name(r.task);
    j["language_level"] = level_name(r.level);
    j["split"] = split_name(r.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

PromptBank parse_bank(std::string_view document) {
  std::vector<PromptRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < document.size()) {
    auto end = document.find('\n', pos);
    if (end == std::string_view::npos) end = document.size();
    auto line = document.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (normalize_text(line).empty()) continue;

    const auto where = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    auto field = [&](const char* name) -> std::string {
      if (!j.contains(name)) throw ParseError(where + ": missing field '" + name + "'");
      if (!j[name].is_string()) throw ParseError(where + ": field '" + name + "' must be a string");
      return j[name].get<std::string>();
    };
    PromptRecord r;
    r.text = field("text");
    try {
      r.task = parse_task(field("task"));
      r.level = parse_level(field("language_level"));
      r.split = parse_split(field("split"));
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ParseError("prompt bank document contains no records");
  try {
    return PromptBank(std::move(records));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid prompt bank: ") + e.what());
  }
}

PromptBank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open prompt bank " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bank(ss.str());
}

}  // namespace instructir
