#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fedhp/learncore/tensor.hpp"

namespace fedhp::learncore {

/// The three parameter families with distinct update/aggregation rules, plus
/// a tag for non-parameter nodes.
enum class Group : std::uint8_t { none = 0, backbone, prompt, adaptor };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::backbone: return "backbone";
    case Group::prompt: return "prompt";
    case Group::adaptor: return "adaptor";
    default: return "none";
  }
}

/// Reverse-mode tape over dense tensors. Supports exactly the operations the
/// reconstruction architecture needs: conv2d (same padding), layer norm over
/// channels, GELU, elementwise add, scalar scale, MSE, and the dispersion
/// shift-back. Every op checks its output for non-finite values.
///
/// backward(loss, groups) propagates only along paths that reach a leaf of a
/// requested group, so frozen groups never receive gradients.
template <typename S>
class Graph {
 public:
  struct Var {
    std::uint32_t id = 0;
  };

  /// Trainable leaf tagged with its parameter group.
  Var leaf(TensorT<S> value, Group g, std::string name = {}) {
    return push(std::move(value), g, std::move(name), {}, nullptr);
  }

  /// Constant input (data, masks, targets).
  Var input(TensorT<S> value, std::string name = {}) {
    return push(std::move(value), Group::none, std::move(name), {}, nullptr);
  }

  const TensorT<S>& value(Var x) const { return nodes_[x.id].value; }

  /// Gradient of the loss w.r.t. x; valid only after backward() visited it.
  const TensorT<S>& grad(Var x) const {
    const Node& n = nodes_[x.id];
    if (!n.needs)
      throw InvalidInput("graph: gradient not computed for node '" + n.name +
                         "' (group not requested in backward)");
    return n.grad;
  }

  Var add(Var a, Var b, std::string name = {}) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
      throw InvalidInput("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    TensorT<S> out = ta;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
    return push(std::move(out), Group::none, std::move(name), {a.id, b.id},
                [](Graph& g, const Node& n) {
                  g.accumulate(n.inputs[0], n.grad.v);
                  g.accumulate(n.inputs[1], n.grad.v);
                });
  }

  Var scale(Var a, S factor, std::string name = {}) {
    TensorT<S> out = val(a);
    for (auto& x : out.v) x *= factor;
    Var r = push(std::move(out), Group::none, std::move(name), {a.id}, nullptr);
    nodes_[r.id].back = [factor](Graph& g, const Node& n) {
      std::vector<S> gx(n.grad.v.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = n.grad.v[i] * factor;
      g.accumulate(n.inputs[0], gx);
    };
    return r;
  }

  /// 2D convolution, same zero padding, stride 1. x {H,W,Ci}, w {K,K,Ci,Co}
  /// (K odd), b {Co} -> {H,W,Co}. Accumulates in double.
  Var conv2d(Var x, Var w, Var b, std::string name = {}) {
    const auto& tx = val(x);
    const auto& tw = val(w);
    const auto& tb = val(b);
    if (tx.shape.size() != 3 || tw.shape.size() != 4 || tb.shape.size() != 1)
      throw InvalidInput("conv2d: rank mismatch");
    const std::size_t H = tx.shape[0], W = tx.shape[1], Ci = tx.shape[2];
    const std::size_t K = tw.shape[0];
    const std::size_t Co = tw.shape[3];
    if (tw.shape[1] != K || tw.shape[2] != Ci || tb.shape[0] != Co || K % 2 == 0)
      throw InvalidInput("conv2d: weight shape mismatch for input " +
                         shape_str(tx.shape));
    const long r = static_cast<long>(K / 2);

    TensorT<S> out = TensorT<S>::zeros({H, W, Co});
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t ww = 0; ww < W; ++ww)
        for (std::size_t co = 0; co < Co; ++co) {
          double acc = static_cast<double>(tb.v[co]);
          for (std::size_t kh = 0; kh < K; ++kh) {
            const long ih = static_cast<long>(h) + static_cast<long>(kh) - r;
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            for (std::size_t kw = 0; kw < K; ++kw) {
              const long iw = static_cast<long>(ww) + static_cast<long>(kw) - r;
              if (iw < 0 || iw >= static_cast<long>(W)) continue;
              const S* xp = &tx.v[(static_cast<std::size_t>(ih) * W +
                                   static_cast<std::size_t>(iw)) *
                                  Ci];
              const S* wp = &tw.v[((kh * K + kw) * Ci) * Co + co];
              for (std::size_t ci = 0; ci < Ci; ++ci)
                acc += static_cast<double>(xp[ci]) *
                       static_cast<double>(wp[ci * Co]);
            }
          }
          out.at3(h, ww, co) = static_cast<S>(acc);
        }

    return push(std::move(out), Group::none, std::move(name),
                {x.id, w.id, b.id}, [](Graph& g, const Node& n) {
                  g.conv2d_backward(n);
                });
  }

  /// Layer normalization across the channel axis of {H,W,C}, per spatial
  /// location, with per-channel scale/shift. gamma, beta {C}.
  Var layer_norm(Var x, Var gamma, Var beta, std::string name = {}) {
    const auto& tx = val(x);
    const auto& tg = val(gamma);
    const auto& tb = val(beta);
    if (tx.shape.size() != 3)
      throw InvalidInput("layer_norm: input must be rank 3");
    const std::size_t C = tx.shape[2];
    if (tg.shape != std::vector<std::size_t>{C} || !tg.same_shape(tb))
      throw InvalidInput("layer_norm: scale/shift must be shaped {C}");

    TensorT<S> out = TensorT<S>::zeros(tx.shape);
    const std::size_t hw = tx.shape[0] * tx.shape[1];
    for (std::size_t p = 0; p < hw; ++p) {
      const S* xp = &tx.v[p * C];
      double mu = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += static_cast<double>(xp[c]);
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = static_cast<double>(xp[c]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(C);
      const double inv = 1.0 / std::sqrt(var + kLnEps);
      for (std::size_t c = 0; c < C; ++c) {
        const double xhat = (static_cast<double>(xp[c]) - mu) * inv;
        out.v[p * C + c] = static_cast<S>(
            xhat * static_cast<double>(tg.v[c]) + static_cast<double>(tb.v[c]));
      }
    }
    return push(std::move(out), Group::none, std::move(name),
                {x.id, gamma.id, beta.id},
                [](Graph& g, const Node& n) { g.layer_norm_backward(n); });
  }

  Var gelu(Var x, std::string name = {}) {
    TensorT<S> out = val(x);
    for (auto& v : out.v) {
      const double t = static_cast<double>(v);
      v = static_cast<S>(0.5 * t * (1.0 + std::erf(t * kInvSqrt2)));
    }
    return push(std::move(out), Group::none, std::move(name), {x.id},
                [](Graph& g, const Node& n) {
                  const auto& tx = g.nodes_[n.inputs[0]].value;
                  std::vector<S> gx(tx.v.size());
                  for (std::size_t i = 0; i < gx.size(); ++i) {
                    const double t = static_cast<double>(tx.v[i]);
                    const double cdf = 0.5 * (1.0 + std::erf(t * kInvSqrt2));
                    const double pdf =
                        std::exp(-0.5 * t * t) * 0.3989422804014327;
                    gx[i] = static_cast<S>(
                        static_cast<double>(n.grad.v[i]) * (cdf + t * pdf));
                  }
                  g.accumulate(n.inputs[0], gx);
                });
  }

  /// Mean over all elements of the squared difference; scalar output.
  Var mse(Var pred, Var target, std::string name = {}) {
    const auto& tp = val(pred);
    const auto& tt = val(target);
    if (!tp.same_shape(tt))
      throw InvalidInput("mse: shape mismatch " + shape_str(tp.shape) +
                         " vs " + shape_str(tt.shape));
    double acc = 0.0;
    for (std::size_t i = 0; i < tp.v.size(); ++i) {
      const double d =
          static_cast<double>(tp.v[i]) - static_cast<double>(tt.v[i]);
      acc += d * d;
    }
    TensorT<S> out =
        TensorT<S>::scalar(static_cast<S>(acc / static_cast<double>(tp.numel())));
    return push(std::move(out), Group::none, std::move(name),
                {pred.id, target.id}, [](Graph& g, const Node& n) {
                  const auto& tp = g.nodes_[n.inputs[0]].value;
                  const auto& tt = g.nodes_[n.inputs[1]].value;
                  const double go = static_cast<double>(n.grad.v[0]);
                  const double inv_n =
                      2.0 / static_cast<double>(tp.numel());
                  std::vector<S> gp(tp.v.size());
                  for (std::size_t i = 0; i < gp.size(); ++i)
                    gp[i] = static_cast<S>(go * inv_n *
                                           (static_cast<double>(tp.v[i]) -
                                            static_cast<double>(tt.v[i])));
                  g.accumulate(n.inputs[0], gp);
                  if (g.nodes_[n.inputs[1]].needs) {
                    for (auto& v : gp) v = -v;
                    g.accumulate(n.inputs[1], gp);
                  }
                });
  }

  /// Dispersion inverse windowing: y {H, W+step*(bands-1), 1} ->
  /// {H, W, bands}, band n reads the width-W window at offset step*n.
  Var shift_back(Var y, int step, std::size_t bands, std::string name = {}) {
    const auto& ty = val(y);
    if (ty.shape.size() != 3 || ty.shape[2] != 1)
      throw InvalidInput("shift_back: input must be {H, W', 1}");
    if (step < 0) throw InvalidInput("shift_back: step must be >= 0");
    const std::size_t H = ty.shape[0], Wd = ty.shape[1];
    const std::size_t delta = static_cast<std::size_t>(step) * (bands - 1);
    if (Wd < delta + 1)
      throw InvalidInput("shift_back: band window out of range");
    const std::size_t W = Wd - delta;

    TensorT<S> out = TensorT<S>::zeros({H, W, bands});
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t n = 0; n < bands; ++n)
          out.at3(h, w, n) =
              ty.v[h * Wd + w + static_cast<std::size_t>(step) * n];

    Var r = push(std::move(out), Group::none, std::move(name), {y.id}, nullptr);
    nodes_[r.id].back = [step, bands, W, Wd](Graph& g, const Node& n) {
      std::vector<S> gy(g.nodes_[n.inputs[0]].value.v.size(), S{0});
      const std::size_t H = n.grad.shape[0];
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t b = 0; b < bands; ++b)
            gy[h * Wd + w + static_cast<std::size_t>(step) * b] +=
                n.grad.v[(h * W + w) * bands + b];
      g.accumulate(n.inputs[0], gy);
    };
    return r;
  }

  /// Reverse sweep from a scalar loss. Only nodes on a path to a leaf of a
  /// requested group participate; other leaves stay gradient-free.
  void backward(Var loss, std::span<const Group> groups) {
    if (val(loss).numel() != 1)
      throw InvalidInput("backward: loss must be scalar");
    bool any = false;
    for (Group g : groups)
      for (const Node& n : nodes_)
        if (n.group == g && n.back == nullptr) {
          any = true;
          break;
        }
    if (!any) throw InvalidInput("backward: no requested group in graph");

    for (Node& n : nodes_) {
      n.needs = false;
      n.grad = TensorT<S>{};
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.back == nullptr) {
        for (Group g : groups)
          if (n.group == g) n.needs = true;
      } else {
        for (std::uint32_t in : n.inputs)
          if (nodes_[in].needs) {
            n.needs = true;
            break;
          }
      }
    }
    for (Node& n : nodes_)
      if (n.needs) n.grad = TensorT<S>::zeros(n.value.shape);
    if (!nodes_[loss.id].needs) return;  // loss does not depend on the groups

    nodes_[loss.id].grad.v[0] = S{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs && n.back) n.back(*this, n);
    }
  }

  void backward(Var loss, std::initializer_list<Group> groups) {
    backward(loss, std::span<const Group>(groups.begin(), groups.size()));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad;
    Group group = Group::none;
    bool needs = false;
    std::string name;
    std::vector<std::uint32_t> inputs;
    std::function<void(Graph&, const Node&)> back;
  };

  static constexpr double kLnEps = 1e-5;
  static constexpr double kInvSqrt2 = 0.7071067811865475244;

  const TensorT<S>& val(Var x) const { return nodes_[x.id].value; }

  Var push(TensorT<S> value, Group g, std::string name,
           std::vector<std::uint32_t> inputs,
           std::function<void(Graph&, const Node&)> back) {
    if (!value.all_finite())
      throw NumericalError("graph: non-finite value in tensor '" + name + "'");
    Node n;
    n.value = std::move(value);
    n.group = g;
    n.name = std::move(name);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void accumulate(std::uint32_t id, std::span<const S> g) {
    Node& n = nodes_[id];
    if (!n.needs) return;
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.v[i] += g[i];
  }

  void conv2d_backward(const Node& n) {
    const auto& tx = nodes_[n.inputs[0]].value;
    const auto& tw = nodes_[n.inputs[1]].value;
    const std::size_t H = tx.shape[0], W = tx.shape[1], Ci = tx.shape[2];
    const std::size_t K = tw.shape[0], Co = tw.shape[3];
    const long r = static_cast<long>(K / 2);
    const bool need_x = nodes_[n.inputs[0]].needs;
    const bool need_w = nodes_[n.inputs[1]].needs;
    const bool need_b = nodes_[n.inputs[2]].needs;

    std::vector<S> gx(need_x ? tx.v.size() : 0, S{0});
    std::vector<S> gw(need_w ? tw.v.size() : 0, S{0});
    std::vector<S> gb(need_b ? Co : 0, S{0});

    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t ww = 0; ww < W; ++ww)
        for (std::size_t co = 0; co < Co; ++co) {
          const S go = n.grad.at3(h, ww, co);
          if (need_b) gb[co] += go;
          if (!need_x && !need_w) continue;
          for (std::size_t kh = 0; kh < K; ++kh) {
            const long ih = static_cast<long>(h) + static_cast<long>(kh) - r;
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            for (std::size_t kw = 0; kw < K; ++kw) {
              const long iw = static_cast<long>(ww) + static_cast<long>(kw) - r;
              if (iw < 0 || iw >= static_cast<long>(W)) continue;
              const std::size_t xbase = (static_cast<std::size_t>(ih) * W +
                                         static_cast<std::size_t>(iw)) *
                                        Ci;
              const std::size_t wbase = ((kh * K + kw) * Ci) * Co + co;
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                if (need_x) gx[xbase + ci] += go * tw.v[wbase + ci * Co];
                if (need_w) gw[wbase + ci * Co] += go * tx.v[xbase + ci];
              }
            }
          }
        }
    if (need_x) accumulate(n.inputs[0], gx);
    if (need_w) accumulate(n.inputs[1], gw);
    if (need_b) accumulate(n.inputs[2], gb);
  }

  void layer_norm_backward(const Node& n) {
    const auto& tx = nodes_[n.inputs[0]].value;
    const auto& tg = nodes_[n.inputs[1]].value;
    const std::size_t C = tx.shape[2];
    const std::size_t hw = tx.shape[0] * tx.shape[1];
    const bool need_x = nodes_[n.inputs[0]].needs;
    const bool need_g = nodes_[n.inputs[1]].needs;
    const bool need_b = nodes_[n.inputs[2]].needs;

    std::vector<S> gx(need_x ? tx.v.size() : 0, S{0});
    std::vector<S> gg(need_g ? C : 0, S{0});
    std::vector<S> gb(need_b ? C : 0, S{0});

    std::vector<double> xhat(C);
    for (std::size_t p = 0; p < hw; ++p) {
      const S* xp = &tx.v[p * C];
      double mu = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += static_cast<double>(xp[c]);
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = static_cast<double>(xp[c]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(C);
      const double inv = 1.0 / std::sqrt(var + kLnEps);
      double mean_gz = 0.0, mean_gzx = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        xhat[c] = (static_cast<double>(xp[c]) - mu) * inv;
        const double go = static_cast<double>(n.grad.v[p * C + c]);
        if (need_g) gg[c] += static_cast<S>(go * xhat[c]);
        if (need_b) gb[c] += static_cast<S>(go);
        const double gz = go * static_cast<double>(tg.v[c]);
        mean_gz += gz;
        mean_gzx += gz * xhat[c];
      }
      if (need_x) {
        mean_gz /= static_cast<double>(C);
        mean_gzx /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) {
          const double go = static_cast<double>(n.grad.v[p * C + c]);
          const double gz = go * static_cast<double>(tg.v[c]);
          gx[p * C + c] =
              static_cast<S>(inv * (gz - mean_gz - xhat[c] * mean_gzx));
        }
      }
    }
    if (need_x) accumulate(n.inputs[0], gx);
    if (need_g) accumulate(n.inputs[1], gg);
    if (need_b) accumulate(n.inputs[2], gb);
  }

  std::vector<Node> nodes_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace fedhp::learncore
