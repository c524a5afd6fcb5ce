#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fedhp/learncore/graph.hpp"
#include "fedhp/learncore/model.hpp"
#include "fedhp/rng.hpp"

namespace fedhp::learncore {

/// Double-precision parameter set used by the gradient checker.
struct ParamGroupD {
  Group tag = Group::none;
  std::vector<std::pair<std::string, TensorD>> tensors;

  static ParamGroupD from(const ParamGroup& g) {
    ParamGroupD out;
    out.tag = g.tag;
    for (const auto& [name, t] : g.tensors)
      out.tensors.emplace_back(name, tensor_cast<double>(t));
    return out;
  }
};

template <typename S>
BoundGroup<S> bind_group_d(Graph<S>& g, const ParamGroupD& group) {
  BoundGroup<S> out;
  out.tag = group.tag;
  for (const auto& [name, t] : group.tensors)
    out.vars.emplace_back(name, g.leaf(t, group.tag, name));
  return out;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_group;

  double group_error(std::string_view name) const {
    for (const auto& [n, e] : per_group)
      if (n == name) return e;
    throw InvalidInput("grad_check: unknown group '" + std::string(name) + "'");
  }
};

/// Compares analytic gradients against central finite differences, with the
/// whole closure evaluated in 64-bit. `build` must deterministically
/// construct the scalar loss from the bound groups (same order as `groups`).
/// Samples at least `coords_per_group` random coordinates per group.
template <typename BuildFn>
GradCheckReport grad_check(const std::vector<ParamGroup>& groups,
                           BuildFn&& build, Rng& rng, double eps = 1e-3,
                           std::size_t coords_per_group = 50) {
  std::vector<ParamGroupD> work;
  work.reserve(groups.size());
  for (const auto& g : groups) work.push_back(ParamGroupD::from(g));

  const auto eval_loss = [&](GraphD* out_graph,
                             std::vector<BoundGroup<double>>* out_bound)
      -> double {
    GraphD g;
    std::vector<BoundGroup<double>> bound;
    bound.reserve(work.size());
    for (const auto& pg : work) bound.push_back(bind_group_d(g, pg));
    auto loss = build(g, bound);
    const double value = g.value(loss).v[0];
    if (out_graph) {
      std::vector<Group> tags;
      for (const auto& pg : work) tags.push_back(pg.tag);
      g.backward(loss, std::span<const Group>(tags));
      *out_graph = std::move(g);
      *out_bound = std::move(bound);
    }
    return value;
  };

  GraphD analytic_graph;
  std::vector<BoundGroup<double>> analytic_bound;
  eval_loss(&analytic_graph, &analytic_bound);

  GradCheckReport report;
  for (std::size_t gi = 0; gi < work.size(); ++gi) {
    auto& pg = work[gi];
    double group_max = 0.0;
    for (std::size_t s = 0; s < coords_per_group; ++s) {
      const std::size_t ti = rng.below(pg.tensors.size());
      auto& tensor = pg.tensors[ti].second;
      if (tensor.numel() == 0) continue;
      const std::size_t ei = rng.below(tensor.numel());

      const auto& grads = analytic_graph.grad(analytic_bound[gi].vars[ti].second);
      const double analytic = grads.v[ei];

      const double orig = tensor.v[ei];
      tensor.v[ei] = orig + eps;
      const double lp = eval_loss(nullptr, nullptr);
      tensor.v[ei] = orig - eps;
      const double lm = eval_loss(nullptr, nullptr);
      tensor.v[ei] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);

      const double denom = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = denom < 1e-10 ? 0.0 : std::abs(analytic - numeric) / denom;
      group_max = std::max(group_max, rel);
    }
    report.per_group.emplace_back(group_name(pg.tag), group_max);
    report.max_rel_error = std::max(report.max_rel_error, group_max);
  }
  return report;
}

}  // namespace fedhp::learncore
