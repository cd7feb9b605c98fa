// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "moelab/errors.hpp"

namespace moelab {

// Dense row-major storage matches the checkpoint and codec byte order.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Tensor = MatrixX<double>;
using RowVec = RowVectorX<double>;
using Vec = VectorX<double>;

/// Matrix product with a fixed reduction order: every output element is
/// accumulated over the inner index from left to right. A single row of `a`
/// produces the same bits whether it is multiplied alone or inside a larger
/// block.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " disagree");
  }
  // Ref binds row-major storage (and row blocks of it) without copying.
  const Eigen::Ref<const MatrixX<Scalar>> lhs(a.derived());
  const Eigen::Ref<const MatrixX<Scalar>> rhs(b.derived());
  const Eigen::Index m = lhs.rows(), k = lhs.cols(), n = rhs.cols();
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    Scalar* o = out.data() + i * n;
    for (Eigen::Index p = 0; p < k; ++p) {
      const Scalar s = lhs(i, p);
      const Scalar* r = rhs.data() + p * rhs.outerStride();
      for (Eigen::Index j = 0; j < n; ++j) o[j] += s * r[j];
    }
  }
  return out;
}

/// Numerically stable softmax over all entries, returned in the input's shape.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw ShapeError("softmax: empty input");
  const Scalar top = v.maxCoeff();
  MatrixX<Scalar> e = (v.array() - top).unaryExpr([](Scalar x) { return std::exp(x); }).matrix();
  Scalar total = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) total += e.data()[i];
  return e / total;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (!std::isfinite(x(i, j))) return false;
  return true;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace moelab
