// Copyright 2026 The hsd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HSD_KERNELS_HPP_
#define HSD_KERNELS_HPP_

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace hsd::kernels {

// All reductions below run in a fixed left-to-right order so that a
// position computed alone and the same position computed inside a batch
// produce identical bits.

template <typename A, typename B>
typename A::Scalar ordered_dot(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  typename A::Scalar acc(0);
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += a(i) * b(i);
  return acc;
}

/// y = W x with one ordered dot product per output row.
template <typename MatDerived, typename VecDerived>
Eigen::Matrix<typename MatDerived::Scalar, Eigen::Dynamic, 1> matvec(
    const Eigen::MatrixBase<MatDerived>& w, const Eigen::MatrixBase<VecDerived>& x) {
  using Scalar = typename MatDerived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y(w.rows());
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    Scalar acc(0);
    for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * x(c);
    y(r) = acc;
  }
  return y;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> rms_norm(
    const Eigen::MatrixBase<Derived>& x,
    const Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>& gain,
    typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  Scalar sum_sq(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) sum_sq += x(i) * x(i);
  const Scalar inv = Scalar(1) / std::sqrt(sum_sq / Scalar(x.size()) + eps);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y(i) = x(i) * inv * gain(i);
  return y;
}

/// Rotary embedding applied in place to each head of a row vector.
template <typename Derived>
void apply_rope(Eigen::MatrixBase<Derived>& v, Eigen::Index position, int n_heads) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index head_dim = v.size() / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index base = h * head_dim;
    for (Eigen::Index i = 0; i + 1 < head_dim; i += 2) {
      const Scalar freq = std::pow(Scalar(10000), -Scalar(i) / Scalar(head_dim));
      const Scalar angle = Scalar(position) * freq;
      const Scalar c = std::cos(angle);
      const Scalar s = std::sin(angle);
      const Scalar a = v(base + i);
      const Scalar b = v(base + i + 1);
      v(base + i) = a * c - b * s;
      v(base + i + 1) = a * s + b * c;
    }
  }
}

template <typename Scalar>
Scalar silu(Scalar x) {
  return x / (Scalar(1) + std::exp(-x));
}

/// Causal multi-head attention for one query row over key/value rows
/// [0, query_position].
template <typename QDerived, typename KDerived, typename VDerived>
Eigen::Matrix<typename QDerived::Scalar, Eigen::Dynamic, 1> attend(
    const Eigen::MatrixBase<QDerived>& query, const Eigen::MatrixBase<KDerived>& keys,
    const Eigen::MatrixBase<VDerived>& values, Eigen::Index query_position, int n_heads) {
  using Scalar = typename QDerived::Scalar;
  const Eigen::Index width = query.size();
  const Eigen::Index head_dim = width / n_heads;
  const Eigen::Index span = query_position + 1;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(head_dim));
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(width);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores(span);
  for (int h = 0; h < n_heads; ++h) {
    const Eigen::Index base = h * head_dim;
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < span; ++j) {
      Scalar acc(0);
      for (Eigen::Index i = 0; i < head_dim; ++i) acc += query(base + i) * keys(j, base + i);
      scores(j) = acc * scale;
      if (scores(j) > peak) peak = scores(j);
    }
    Scalar total(0);
    for (Eigen::Index j = 0; j < span; ++j) {
      scores(j) = std::exp(scores(j) - peak);
      total += scores(j);
    }
    for (Eigen::Index j = 0; j < span; ++j) {
      const Scalar weight = scores(j) / total;
      for (Eigen::Index i = 0; i < head_dim; ++i) out(base + i) += weight * values(j, base + i);
    }
  }
  return out;
}

}  // namespace hsd::kernels

#endif  // HSD_KERNELS_HPP_
