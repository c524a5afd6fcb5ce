#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedhp/common.hpp"

namespace fedhp::learncore {

/// Dense row-major tensor (last index fastest). Training uses float storage;
/// the double instantiation backs the 64-bit gradient-check mode.
template <typename S>
struct TensorT {
  std::vector<std::size_t> shape;
  std::vector<S> v;

  TensorT() = default;
  TensorT(std::vector<std::size_t> s, std::vector<S> values)
      : shape(std::move(s)), v(std::move(values)) {}

  static TensorT zeros(std::span<const std::size_t> s) {
    TensorT t;
    t.shape.assign(s.begin(), s.end());
    t.v.assign(numel_of(s), S{0});
    return t;
  }
  static TensorT zeros(std::initializer_list<std::size_t> s) {
    return zeros(std::span<const std::size_t>(s.begin(), s.size()));
  }
  static TensorT scalar(S value) { return TensorT({1}, {value}); }

  static std::size_t numel_of(std::span<const std::size_t> s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  std::size_t numel() const { return v.size(); }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  // 3D accessor for {H, W, C} layouts.
  S at3(std::size_t h, std::size_t w, std::size_t c) const {
    return v[(h * shape[1] + w) * shape[2] + c];
  }
  S& at3(std::size_t h, std::size_t w, std::size_t c) {
    return v[(h * shape[1] + w) * shape[2] + c];
  }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  TensorT<To> out;
  out.shape = t.shape;
  out.v.reserve(t.v.size());
  for (From x : t.v) out.v.push_back(static_cast<To>(x));
  return out;
}

inline std::string shape_str(std::span<const std::size_t> s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace fedhp::learncore
