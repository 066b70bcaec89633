#include "instructir/text_encoder.hpp"

#include <cctype>
#include <fstream>

#include "instructir/common.hpp"

namespace instructir {

namespace {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '\'') {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint64_t tensor_digest(const torch::Tensor& t, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  auto c = t.contiguous();
  return fnv1a64(std::string_view(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size()), hash);
}

}  // namespace

torch::Tensor SentenceEncoder::encode_batch(std::span<const std::string> texts) const {
  std::vector<torch::Tensor> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) rows.push_back(encode(t));
  if (rows.empty()) return torch::empty({0, dim()});
  return torch::stack(rows);
}

HashingEncoder::HashingEncoder(std::int64_t dim, std::int64_t buckets, std::uint64_t seed)
    : dim_(dim), buckets_(buckets), seed_(seed) {
  if (dim <= 0 || buckets <= 0) throw ConfigError("hashing encoder needs positive dim and buckets");
  table_ = torch::empty({buckets, dim}, torch::kFloat32);
  auto acc = table_.accessor<float, 2>();
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::int64_t b = 0; b < buckets; ++b) {
    for (std::int64_t d = 0; d < dim; ++d) acc[b][d] = static_cast<float>(rng.normal() * scale);
  }
  table_.set_requires_grad(false);
}

torch::Tensor HashingEncoder::encode(std::string_view text) const {
  torch::NoGradGuard no_grad;
  const auto tokens = tokenize(text);
  auto out = torch::zeros({dim_}, torch::kFloat32);
  if (tokens.empty()) return out;
  std::int64_t n = 0;
  auto add = [&](std::string_view feature) {
    const auto bucket = static_cast<std::int64_t>(fnv1a64(feature) % static_cast<std::uint64_t>(buckets_));
    out += table_[bucket];
    ++n;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i]);
    if (i + 1 < tokens.size()) add(tokens[i] + ' ' + tokens[i + 1]);
  }
  return out / static_cast<float>(n);
}

std::uint64_t HashingEncoder::checksum() const {
  std::uint64_t h = fnv1a64("hashing");
  h = fnv1a64(std::to_string(dim_) + "/" + std::to_string(buckets_) + "/" + std::to_string(seed_), h);
  return tensor_digest(table_, h);
}

PrecomputedEncoder::PrecomputedEncoder(const std::filesystem::path& cache_path) {
  std::ifstream in(cache_path);
  if (!in) throw IoError("cannot open embedding cache " + cache_path.string());
  std::string line;
  std::size_t line_no = 0;
  checksum_ = fnv1a64("precomputed");
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(cache_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("model") && !j.contains("text")) {
      model_name_ = j["model"].get<std::string>();
      continue;
    }
    if (!j.contains("text") || !j.contains("embedding") || !j["embedding"].is_array()) {
      throw ParseError(cache_path.string() + ":" + std::to_string(line_no) +
                       ": expected {\"text\", \"embedding\"}");
    }
    auto values = j["embedding"].get<std::vector<float>>();
    if (dim_ == 0) dim_ = static_cast<std::int64_t>(values.size());
    if (static_cast<std::int64_t>(values.size()) != dim_ || dim_ == 0) {
      throw ParseError(cache_path.string() + ":" + std::to_string(line_no) + ": embedding dimension " +
                       std::to_string(values.size()) + " != " + std::to_string(dim_));
    }
    auto tensor = torch::from_blob(values.data(), {dim_}, torch::kFloat32).clone();
    checksum_ = tensor_digest(tensor, fnv1a64(line, checksum_));
    table_[normalize_text(j["text"].get<std::string>())] = std::move(tensor);
  }
  if (table_.empty()) throw ParseError("embedding cache " + cache_path.string() + " is empty");
  if (model_name_.empty()) model_name_ = cache_path.stem().string();
}

torch::Tensor PrecomputedEncoder::encode(std::string_view text) const {
  auto it = table_.find(normalize_text(text));
  if (it == table_.end()) {
    throw ConfigError("text not in embedding cache: '" + std::string(text) +
                      "' (re-run tools/encode_prompts.py with this prompt)");
  }
  return it->second.clone();
}

nlohmann::json EncoderSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["dim"] = dim;
  j["buckets"] = buckets;
  j["seed"] = seed;
  j["path"] = path;
  return j;
}

EncoderSpec EncoderSpec::from_json(const nlohmann::json& j) {
  EncoderSpec s;
  s.kind = j.value("kind", s.kind);
  s.dim = j.value("dim", s.dim);
  s.buckets = j.value("buckets", s.buckets);
  s.seed = j.value("seed", s.seed);
  s.path = j.value("path", s.path);
  return s;
}

std::shared_ptr<const SentenceEncoder> make_encoder(const EncoderSpec& spec) {
  if (spec.kind == "hashing") return std::make_shared<HashingEncoder>(spec.dim, spec.buckets, spec.seed);
  if (spec.kind == "precomputed") {
    auto enc = std::make_shared<PrecomputedEncoder>(spec.path);
    if (enc->dim() != spec.dim) {
      throw ConfigError("embedding cache dimension " + std::to_string(enc->dim()) +
                        " does not match configured text dim " + std::to_string(spec.dim));
    }
    return enc;
  }
  throw ConfigError("unknown encoder kind '" + spec.kind + "'");
}

}  // namespace instructir
