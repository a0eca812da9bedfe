// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace avse::detail {

// C[m x n] (+)= op(A)[m x k] . op(B)[k x n], all row-major.
// A is stored [k x m] when ta, else [m x k]; B is stored [n x k] when tb,
// else [k x n]. Eigen runs single-threaded here, so results are
// reproducible run to run.
template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, M, N);
  if (!accumulate) cm.setZero();
  Eigen::Map<const Mat> am(a, ta ? K : M, ta ? M : K);
  Eigen::Map<const Mat> bm(b, tb ? N : K, tb ? K : N);
  if (!ta && !tb) cm.noalias() += am * bm;
  else if (!ta && tb) cm.noalias() += am * bm.transpose();
  else if (ta && !tb) cm.noalias() += am.transpose() * bm;
  else cm.noalias() += am.transpose() * bm.transpose();
}

}  // namespace avse::detail
