#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedhp/learncore/graph.hpp"
#include "fedhp/learncore/tensor.hpp"
#include "fedhp/optics.hpp"
#include "fedhp/rng.hpp"

namespace fedhp::learncore {

/// Named float tensors forming one parameter family. Order is fixed at
/// construction; names are unique within a group.
struct ParamGroup {
  Group tag = Group::none;
  bool trainable = true;
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& at(std::string_view name) const;
  TensorF& at(std::string_view name);
  std::size_t param_count() const;
  bool bitwise_equal(const ParamGroup& other) const;
};

/// Residual conv backbone standing in for the full-scale transformer: an
/// embedding conv, `blocks` residual blocks of [LN -> conv3x3 -> GELU ->
/// conv3x3], and a 1x1 projection back to `bands` channels. One adaptor
/// insertion point per LN layer.
struct BackboneConfig {
  std::size_t blocks = 2;
  std::size_t channels = 8;
  std::size_t adaptor_hidden = 4;
  std::size_t bands = 4;

  void validate() const;
};

/// Mask-conditioned prompt network: conv3x3 -> GELU -> conv3x3 -> GELU ->
/// 1x1 projection over the right-padded mask. Output matches the
/// measurement shape.
struct PromptConfig {
  std::size_t channels = 4;

  void validate() const;
};

/// Backbone parameters (group "backbone"). Conv weights are He-normal,
/// biases zero, LN scale 1 / shift 0.
ParamGroup init_backbone(const BackboneConfig& cfg, Rng& rng);

/// Adaptor parameters (group "adaptor"): per block, conv1x1 -> GELU ->
/// conv1x1 residual-added onto the LN output. When zero_residual is set the
/// second conv starts at zero so the adapted backbone equals the plain one.
ParamGroup init_adaptors(const BackboneConfig& cfg, Rng& rng,
                         bool zero_residual = true);

/// Prompt parameters (group "prompt"). When zero_output is set the final
/// projection starts at zero so the prompt is initially the identity
/// perturbation.
ParamGroup init_prompt(const PromptConfig& cfg, Rng& rng,
                       bool zero_output = true);

/// Leaves of one group bound into a graph, in group order.
template <typename S>
struct BoundGroup {
  Group tag = Group::none;
  std::vector<std::pair<std::string, typename Graph<S>::Var>> vars;

  typename Graph<S>::Var at(std::string_view name) const {
    for (const auto& [n, v] : vars)
      if (n == name) return v;
    throw InvalidInput("bound group: unknown tensor '" + std::string(name) +
                       "'");
  }
};

template <typename S>
BoundGroup<S> bind_group(Graph<S>& g, const ParamGroup& group) {
  BoundGroup<S> out;
  out.tag = group.tag;
  for (const auto& [name, t] : group.tensors)
    out.vars.emplace_back(name, g.leaf(tensor_cast<S>(t), group.tag, name));
  return out;
}

/// After backward(): gradients of a bound group's leaves, name-aligned.
template <typename S>
std::vector<std::pair<std::string, TensorT<S>>> collect_grads(
    const Graph<S>& g, const BoundGroup<S>& bound) {
  std::vector<std::pair<std::string, TensorT<S>>> out;
  out.reserve(bound.vars.size());
  for (const auto& [name, var] : bound.vars)
    out.emplace_back(name, g.grad(var));
  return out;
}

/// Builds the reconstruction forward pass. `adaptors` may be null (plain
/// backbone). y_init is {H, W, bands}; the result is {H, W, bands}.
template <typename S>
typename Graph<S>::Var backbone_graph(Graph<S>& g, const BackboneConfig& cfg,
                                      const BoundGroup<S>& theta,
                                      const BoundGroup<S>* adaptors,
                                      typename Graph<S>::Var y_init) {
  using Var = typename Graph<S>::Var;
  Var x = g.conv2d(y_init, theta.at("embed.w"), theta.at("embed.b"), "embed");
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Var t = g.layer_norm(x, theta.at(p + "ln.gamma"), theta.at(p + "ln.beta"),
                         p + "ln");
    if (adaptors) {
      Var a = g.conv2d(t, adaptors->at(p + "adaptor.conv1.w"),
                       adaptors->at(p + "adaptor.conv1.b"), p + "adaptor.1");
      a = g.gelu(a);
      a = g.conv2d(a, adaptors->at(p + "adaptor.conv2.w"),
                   adaptors->at(p + "adaptor.conv2.b"), p + "adaptor.2");
      t = g.add(t, a, p + "adaptor.res");
    }
    t = g.conv2d(t, theta.at(p + "conv1.w"), theta.at(p + "conv1.b"),
                 p + "conv1");
    t = g.gelu(t);
    t = g.conv2d(t, theta.at(p + "conv2.w"), theta.at(p + "conv2.b"),
                 p + "conv2");
    x = g.add(x, t, p + "res");
  }
  return g.conv2d(x, theta.at("out.w"), theta.at("out.b"), "out");
}

/// Builds the prompt forward pass over an already-bound padded mask
/// {H, W+delta, 1}; output has the same shape.
template <typename S>
typename Graph<S>::Var prompt_graph(Graph<S>& g, const BoundGroup<S>& phi,
                                    typename Graph<S>::Var padded_mask) {
  using Var = typename Graph<S>::Var;
  Var t = g.conv2d(padded_mask, phi.at("prompt.conv1.w"),
                   phi.at("prompt.conv1.b"), "prompt.1");
  t = g.gelu(t);
  t = g.conv2d(t, phi.at("prompt.conv2.w"), phi.at("prompt.conv2.b"),
               "prompt.2");
  t = g.gelu(t);
  return g.conv2d(t, phi.at("prompt.out.w"), phi.at("prompt.out.b"),
                  "prompt.out");
}

/// Mask right-padded with zeros to measurement width, as a {H, W+delta, 1}
/// tensor (the prompt network's only input).
TensorF pad_mask_to_measurement(const optics::CodedAperture& mask,
                                const optics::DispersionModel& disp,
                                std::size_t bands);

/// {H, W, 1} view of a measurement.
TensorF measurement_tensor(const optics::Measurement& y);

/// Eager forward pass through the (optionally adapted) backbone.
/// y_init is {H, W, bands} (typically a shift_back output as a tensor).
TensorF backbone_forward(const BackboneConfig& cfg, const ParamGroup& theta,
                         const ParamGroup* adaptors, const TensorF& y_init);

/// Eager prompt evaluation; depends only on the mask and dispersion geometry.
/// Returns {H, W+delta, 1}.
TensorF prompt_forward(const ParamGroup& phi, const optics::CodedAperture& mask,
                       const optics::DispersionModel& disp, std::size_t bands);

/// Elementwise sum of a measurement and a same-shaped prompt tensor.
optics::Measurement apply_prompt(const optics::Measurement& y,
                                 const TensorF& prompt);

/// Mean squared error between two same-shaped tensors (double accumulation).
double mse_loss(const TensorF& a, const TensorF& b);

TensorF cube_tensor(const optics::HyperspectralCube& c);
optics::HyperspectralCube tensor_cube(const TensorF& t);

}  // namespace fedhp::learncore
