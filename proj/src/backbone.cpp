#include "instructir/backbone.hpp"

#include "instructir/common.hpp"

namespace instructir {

namespace F = torch::nn::functional;

void ModelConfig::validate() const {
  if (width < 1) throw ConfigError("base width must be positive");
  if (encoder_depths.empty()) throw ConfigError("model needs at least one encoder level");
  if (encoder_depths.size() != decoder_depths.size()) {
    throw ConfigError("encoder and decoder must have the same number of levels");
  }
  for (auto d : encoder_depths) {
    if (d < 1) throw ConfigError("every encoder level needs at least one block");
  }
  for (auto d : decoder_depths) {
    if (d < 1) throw ConfigError("every decoder level needs at least one block");
  }
  if (middle_blocks < 0) throw ConfigError("middle block count must be non-negative");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"width", width},
          {"encoder_depths", encoder_depths},
          {"decoder_depths", decoder_depths},
          {"middle_blocks", middle_blocks},
          {"embed_dim", embed_dim},
          {"identity_init", identity_init}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.width = j.value("width", c.width);
  c.encoder_depths = j.value("encoder_depths", c.encoder_depths);
  c.decoder_depths = j.value("decoder_depths", c.decoder_depths);
  c.middle_blocks = j.value("middle_blocks", c.middle_blocks);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.identity_init = j.value("identity_init", c.identity_init);
  return c;
}

LayerNorm2dImpl::LayerNorm2dImpl(std::int64_t channels, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  auto mu = x.mean(1, /*keepdim=*/true);
  auto centered = x - mu;
  auto var = centered.pow(2).mean(1, /*keepdim=*/true);
  auto y = centered / (var + eps_).sqrt();
  return y * weight.view({1, -1, 1, 1}) + bias.view({1, -1, 1, 1});
}

torch::Tensor simple_gate(const torch::Tensor& x) {
  if (x.size(1) % 2 != 0) throw ShapeError("simple gate needs an even channel count, got " + std::to_string(x.size(1)));
  auto halves = x.chunk(2, 1);
  return halves[0] * halves[1];
}

NAFBlockImpl::NAFBlockImpl(std::int64_t c) : channels_(c) {
  using torch::nn::Conv2d;
  using torch::nn::Conv2dOptions;
  const auto dw = 2 * c;
  norm1 = register_module("norm1", LayerNorm2d(c));
  expand1 = register_module("expand1", Conv2d(Conv2dOptions(c, dw, 1)));
  depthwise = register_module("depthwise", Conv2d(Conv2dOptions(dw, dw, 3).padding(1).groups(dw)));
  attention = register_module("attention", Conv2d(Conv2dOptions(dw / 2, dw / 2, 1)));
  project1 = register_module("project1", Conv2d(Conv2dOptions(dw / 2, c, 1)));
  norm2 = register_module("norm2", LayerNorm2d(c));
  expand2 = register_module("expand2", Conv2d(Conv2dOptions(c, 2 * c, 1)));
  project2 = register_module("project2", Conv2d(Conv2dOptions(c, c, 1)));
  beta = register_parameter("beta", torch::zeros({1, c, 1, 1}));
  gamma = register_parameter("gamma", torch::zeros({1, c, 1, 1}));
}

torch::Tensor NAFBlockImpl::spatial(const torch::Tensor& x) {
  auto y = simple_gate(depthwise(expand1(norm1(x))));
  y = y * attention(F::adaptive_avg_pool2d(y, F::AdaptiveAvgPool2dFuncOptions(1)));
  return project1(y);
}

torch::Tensor NAFBlockImpl::channel(const torch::Tensor& x) {
  return project2(simple_gate(expand2(norm2(x))));
}

torch::Tensor NAFBlockImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_) {
    throw ShapeError("NAF block expects " + std::to_string(channels_) + " channels, got " +
                     (x.dim() == 4 ? std::to_string(x.size(1)) : "a non-4D tensor"));
  }
  auto y = x + spatial(x) * beta;
  return y + channel(y) * gamma;
}

torch::Tensor NAFBlockImpl::residual(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_) {
    throw ShapeError("NAF block expects " + std::to_string(channels_) + " channels");
  }
  auto d1 = spatial(x) * beta;
  auto d2 = channel(x + d1) * gamma;
  return d1 + d2;
}

InstructionConditionBlockImpl::InstructionConditionBlockImpl(std::int64_t channels, std::int64_t embed_dim) {
  routing = register_module("routing",
                            torch::nn::Linear(torch::nn::LinearOptions(embed_dim, channels).bias(false)));
  block = register_module("block", NAFBlock(channels));
}

torch::Tensor InstructionConditionBlockImpl::mask(const torch::Tensor& embedding) {
  if (embedding.dim() != 2 || embedding.size(1) != routing->weight.size(1)) {
    throw ShapeError("routing expects [B, " + std::to_string(routing->weight.size(1)) + "] embeddings");
  }
  return torch::sigmoid(routing(embedding));
}

torch::Tensor InstructionConditionBlockImpl::forward(const torch::Tensor& features, const torch::Tensor& embedding) {
  if (features.dim() != 4 || features.size(1) != routing->weight.size(0)) {
    throw ShapeError("condition block expects " + std::to_string(routing->weight.size(0)) + " channels");
  }
  if (embedding.size(0) != features.size(0)) {
    throw ShapeError("embedding batch " + std::to_string(embedding.size(0)) + " != feature batch " +
                     std::to_string(features.size(0)));
  }
  auto m = mask(embedding).unsqueeze(-1).unsqueeze(-1);
  return features + block->residual(features * m);
}

RestorationNetImpl::RestorationNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  using torch::nn::Conv2d;
  using torch::nn::Conv2dOptions;
  const auto c0 = config_.width;
  intro = register_module("intro", Conv2d(Conv2dOptions(3, c0, 3).padding(1)));
  ending = register_module("ending", Conv2d(Conv2dOptions(c0, 3, 3).padding(1)));
  if (config_.identity_init) {
    torch::NoGradGuard no_grad;
    ending->weight.zero_();
    ending->bias.zero_();
  }

  auto stack = [&](const std::string& name, std::int64_t depth, std::int64_t channels) {
    torch::nn::Sequential seq;
    for (std::int64_t i = 0; i < depth; ++i) seq->push_back(NAFBlock(channels));
    return register_module(name, seq);
  };

  std::int64_t c = c0;
  for (std::int64_t l = 0; l < config_.levels(); ++l) {
    const auto tag = std::to_string(l);
    encoders.push_back(stack("encoder" + tag, config_.encoder_depths[static_cast<std::size_t>(l)], c));
    encoder_conditions.push_back(
        register_module("encoder_condition" + tag, InstructionConditionBlock(c, config_.embed_dim)));
    downs.push_back(register_module("down" + tag, Conv2d(Conv2dOptions(c, 2 * c, 2).stride(2))));
    c *= 2;
  }
  middle = register_module("middle", torch::nn::Sequential());
  for (std::int64_t i = 0; i < config_.middle_blocks; ++i) middle->push_back(NAFBlock(c));

  ups.resize(static_cast<std::size_t>(config_.levels()));
  decoders.resize(static_cast<std::size_t>(config_.levels()));
  decoder_conditions.resize(static_cast<std::size_t>(config_.levels()), nullptr);
  for (std::int64_t l = config_.levels() - 1; l >= 0; --l) {
    const auto tag = std::to_string(l);
    const auto i = static_cast<std::size_t>(l);
    ups[i] = register_module("up" + tag, torch::nn::Sequential(Conv2d(Conv2dOptions(c, 2 * c, 1).bias(false)),
                                                               torch::nn::PixelShuffle(2)));
    c /= 2;
    decoders[i] = stack("decoder" + tag, config_.decoder_depths[i], c);
    decoder_conditions[i] = register_module("decoder_condition" + tag, InstructionConditionBlock(c, config_.embed_dim));
  }
}

torch::Tensor RestorationNetImpl::forward(const torch::Tensor& image, const torch::Tensor& embedding) {
  if (image.dim() != 4 || image.size(1) != 3) throw ShapeError("restoration input must be [B, 3, H, W]");
  if (!torch::isfinite(image).all().item<bool>()) throw NumericError("restoration input has non-finite values");
  if (embedding.dim() != 2 || embedding.size(0) != image.size(0) || embedding.size(1) != config_.embed_dim) {
    throw ShapeError("embedding must be [B, " + std::to_string(config_.embed_dim) + "]");
  }
  const auto h = image.size(2);
  const auto w = image.size(3);
  const auto m = config_.size_multiple();
  const auto pad_h = (m - h % m) % m;
  const auto pad_w = (m - w % m) % m;
  auto input = image;
  if (pad_h > 0 || pad_w > 0) {
    const bool reflect_ok = pad_h < h && pad_w < w;
    input = F::pad(image, F::PadFuncOptions({0, pad_w, 0, pad_h})
                              .mode(reflect_ok ? F::PadFuncOptions::mode_t(torch::kReflect) : F::PadFuncOptions::mode_t(torch::kReplicate)));
  }
  auto e = embedding.to(intro->weight.scalar_type());

  auto x = intro(input);
  std::vector<torch::Tensor> skips;
  for (std::size_t l = 0; l < encoders.size(); ++l) {
    x = encoder_conditions[l](encoders[l]->forward(x), e);
    skips.push_back(x);
    x = downs[l](x);
  }
  if (!middle->is_empty()) x = middle->forward(x);
  for (std::size_t l = encoders.size(); l-- > 0;) {
    x = ups[l]->forward(x) + skips[l];
    x = decoder_conditions[l](decoders[l]->forward(x), e);
  }
  x = ending(x) + input;
  if (pad_h > 0 || pad_w > 0) x = x.narrow(2, 0, h).narrow(3, 0, w);
  return x;
}

std::vector<torch::Tensor> RestorationNetImpl::routing_masks(const torch::Tensor& embedding) {
  auto e = embedding.to(intro->weight.scalar_type());
  std::vector<torch::Tensor> masks;
  for (auto& icb : encoder_conditions) masks.push_back(icb->mask(e));
  for (auto& icb : decoder_conditions) masks.push_back(icb->mask(e));
  return masks;
}

std::int64_t count_module_parameters(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace instructir
