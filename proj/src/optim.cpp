#include "fedhp/learncore/optim.hpp"

namespace fedhp::learncore {

AdamState AdamState::like(const ParamGroup& group) {
  AdamState s;
  for (const auto& [name, t] : group.tensors) {
    s.m.emplace_back(name, TensorF::zeros(t.shape));
    s.v.emplace_back(name, TensorF::zeros(t.shape));
  }
  return s;
}

void adam_step(ParamGroup& params, const GradList& grads, AdamState& state,
               double lr) {
  if (grads.size() != params.tensors.size() ||
      state.m.size() != params.tensors.size())
    throw InvalidInput("adam_step: gradient/state list mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& [pname, p] = params.tensors[i];
    const auto& [gname, g] = grads[i];
    if (pname != gname || !p.same_shape(g))
      throw InvalidInput("adam_step: gradient does not match parameter '" +
                         pname + "'");
    auto& m = state.m[i].second;
    auto& v = state.v[i].second;
    for (std::size_t j = 0; j < p.v.size(); ++j) {
      const double gj = g.v[j];
      const double mj = state.beta1 * m.v[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v.v[j] + (1.0 - state.beta2) * gj * gj;
      m.v[j] = static_cast<float>(mj);
      v.v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p.v[j] = static_cast<float>(p.v[j] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace fedhp::learncore
