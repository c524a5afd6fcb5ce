#include "fedhp/learncore/model.hpp"

#include <cmath>
#include <cstring>

namespace fedhp::learncore {

const TensorF& ParamGroup::at(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw InvalidInput("param group: unknown tensor '" + std::string(name) + "'");
}

TensorF& ParamGroup::at(std::string_view name) {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw InvalidInput("param group: unknown tensor '" + std::string(name) + "'");
}

std::size_t ParamGroup::param_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.numel();
  return n;
}

bool ParamGroup::bitwise_equal(const ParamGroup& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].first != other.tensors[i].first) return false;
    if (tensors[i].second.shape != other.tensors[i].second.shape) return false;
    const auto& a = tensors[i].second.v;
    const auto& b = other.tensors[i].second.v;
    for (std::size_t j = 0; j < a.size(); ++j)
      if (std::memcmp(&a[j], &b[j], sizeof(float)) != 0) return false;
  }
  return true;
}

void BackboneConfig::validate() const {
  if (blocks < 1 || channels < 1 || adaptor_hidden < 1 || bands < 1)
    throw InvalidInput("backbone config: all extents must be >= 1");
}

void PromptConfig::validate() const {
  if (channels < 1) throw InvalidInput("prompt config: channels must be >= 1");
}

namespace {

TensorF he_normal(std::vector<std::size_t> shape, std::size_t fan_in,
                  Rng& rng) {
  TensorF t = TensorF::zeros(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.v) v = static_cast<float>(std * rng.normal());
  return t;
}

}  // namespace

ParamGroup init_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t C = cfg.channels, N = cfg.bands;
  ParamGroup g;
  g.tag = Group::backbone;
  g.tensors.emplace_back("embed.w", he_normal({3, 3, N, C}, 9 * N, rng));
  g.tensors.emplace_back("embed.b", TensorF::zeros({C}));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    TensorF gamma = TensorF::zeros({C});
    for (auto& v : gamma.v) v = 1.0f;
    g.tensors.emplace_back(p + "ln.gamma", std::move(gamma));
    g.tensors.emplace_back(p + "ln.beta", TensorF::zeros({C}));
    g.tensors.emplace_back(p + "conv1.w", he_normal({3, 3, C, C}, 9 * C, rng));
    g.tensors.emplace_back(p + "conv1.b", TensorF::zeros({C}));
    g.tensors.emplace_back(p + "conv2.w", he_normal({3, 3, C, C}, 9 * C, rng));
    g.tensors.emplace_back(p + "conv2.b", TensorF::zeros({C}));
  }
  g.tensors.emplace_back("out.w", he_normal({1, 1, C, N}, C, rng));
  g.tensors.emplace_back("out.b", TensorF::zeros({N}));
  return g;
}

ParamGroup init_adaptors(const BackboneConfig& cfg, Rng& rng,
                         bool zero_residual) {
  cfg.validate();
  const std::size_t C = cfg.channels, A = cfg.adaptor_hidden;
  ParamGroup g;
  g.tag = Group::adaptor;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    g.tensors.emplace_back(p + "adaptor.conv1.w",
                           he_normal({1, 1, C, A}, C, rng));
    g.tensors.emplace_back(p + "adaptor.conv1.b", TensorF::zeros({A}));
    g.tensors.emplace_back(p + "adaptor.conv2.w",
                           zero_residual ? TensorF::zeros({1, 1, A, C})
                                         : he_normal({1, 1, A, C}, A, rng));
    g.tensors.emplace_back(p + "adaptor.conv2.b", TensorF::zeros({C}));
  }
  return g;
}

ParamGroup init_prompt(const PromptConfig& cfg, Rng& rng, bool zero_output) {
  cfg.validate();
  const std::size_t C = cfg.channels;
  ParamGroup g;
  g.tag = Group::prompt;
  g.tensors.emplace_back("prompt.conv1.w", he_normal({3, 3, 1, C}, 9, rng));
  g.tensors.emplace_back("prompt.conv1.b", TensorF::zeros({C}));
  g.tensors.emplace_back("prompt.conv2.w", he_normal({3, 3, C, C}, 9 * C, rng));
  g.tensors.emplace_back("prompt.conv2.b", TensorF::zeros({C}));
  g.tensors.emplace_back("prompt.out.w", zero_output
                                             ? TensorF::zeros({1, 1, C, 1})
                                             : he_normal({1, 1, C, 1}, C, rng));
  g.tensors.emplace_back("prompt.out.b", TensorF::zeros({1}));
  return g;
}

TensorF pad_mask_to_measurement(const optics::CodedAperture& mask,
                                const optics::DispersionModel& disp,
                                std::size_t bands) {
  disp.validate(bands);
  const std::size_t wd = mask.width + disp.total_shift(bands);
  TensorF t = TensorF::zeros({mask.height, wd, 1});
  for (std::size_t h = 0; h < mask.height; ++h)
    for (std::size_t w = 0; w < mask.width; ++w)
      t.v[h * wd + w] = mask.at(h, w);
  return t;
}

TensorF measurement_tensor(const optics::Measurement& y) {
  TensorF t;
  t.shape = {y.height, y.width, 1};
  t.v = y.values;
  return t;
}

TensorF backbone_forward(const BackboneConfig& cfg, const ParamGroup& theta,
                         const ParamGroup* adaptors, const TensorF& y_init) {
  if (y_init.shape.size() != 3 || y_init.shape[2] != cfg.bands)
    throw InvalidInput("backbone_forward: input must be {H, W, bands}");
  GraphF g;
  auto bt = bind_group(g, theta);
  BoundGroup<float> ba;
  if (adaptors) ba = bind_group(g, *adaptors);
  auto y = g.input(y_init, "y_init");
  auto out = backbone_graph(g, cfg, bt, adaptors ? &ba : nullptr, y);
  return g.value(out);
}

TensorF prompt_forward(const ParamGroup& phi, const optics::CodedAperture& mask,
                       const optics::DispersionModel& disp, std::size_t bands) {
  GraphF g;
  auto bp = bind_group(g, phi);
  auto m = g.input(pad_mask_to_measurement(mask, disp, bands), "mask");
  auto out = prompt_graph(g, bp, m);
  return g.value(out);
}

optics::Measurement apply_prompt(const optics::Measurement& y,
                                 const TensorF& prompt) {
  if (prompt.shape.size() != 3 || prompt.shape[0] != y.height ||
      prompt.shape[1] != y.width || prompt.shape[2] != 1)
    throw InvalidInput("apply_prompt: prompt shape must match measurement");
  optics::Measurement out = y;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] += prompt.v[i];
  return out;
}

double mse_loss(const TensorF& a, const TensorF& b) {
  if (!a.same_shape(b))
    throw InvalidInput("mse_loss: shape mismatch " + shape_str(a.shape) +
                       " vs " + shape_str(b.shape));
  if (a.numel() == 0) throw InvalidInput("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

TensorF cube_tensor(const optics::HyperspectralCube& c) {
  TensorF t;
  t.shape = {c.height, c.width, c.bands};
  t.v = c.values;
  return t;
}

optics::HyperspectralCube tensor_cube(const TensorF& t) {
  if (t.shape.size() != 3) throw InvalidInput("tensor_cube: rank must be 3");
  return {t.shape[0], t.shape[1], t.shape[2], t.v};
}

}  // namespace fedhp::learncore
