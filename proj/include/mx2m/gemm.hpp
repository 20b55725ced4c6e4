// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace mx2m::kernels {

// Worker count for the row-parallel kernels. Each output row is produced by
// exactly one thread with an unchanged inner summation order, so results are
// bit-identical for any setting.
inline int& gemm_threads() {
  static int n = 1;
  return n;
}

namespace detail {

template <typename Fn>
inline void parallel_rows(int m, Fn&& body) {
  const int want = gemm_threads();
  if (want <= 1 || m < 128) {
    body(0, m);
    return;
  }
  const int nt = want < m ? want : m;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt) - 1);
  const int chunk = (m + nt - 1) / nt;
  for (int t = 1; t < nt; ++t) {
    const int lo = t * chunk;
    const int hi = lo + chunk < m ? lo + chunk : m;
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(0, chunk < m ? chunk : m);
  for (auto& th : pool) th.join();
}

}  // namespace detail

// C[M x N] = (acc ? C : 0) + A[M x K] * B[K x N], all row-major.
inline void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c,
                    bool acc = false) {
  detail::parallel_rows(m, [=](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const double* ai = a + static_cast<size_t>(i) * k;
      double* ci = c + static_cast<size_t>(i) * n;
      if (!acc)
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

// C[M x N] = (acc ? C : 0) + A[M x K] * B^T, with B stored [N x K] row-major.
inline void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c,
                    bool acc = false) {
  detail::parallel_rows(m, [=](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const double* ai = a + static_cast<size_t>(i) * k;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + static_cast<size_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] = acc ? ci[j] + s : s;
      }
    }
  });
}

// C[M x N] = (acc ? C : 0) + A^T * B, with A stored [K x M] row-major.
// Rank-1 accumulation over k keeps A and B streaming and C hot; runs on one
// thread because every pass touches all of C.
inline void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c,
                    bool acc = false) {
  if (!acc) {
    const size_t total = static_cast<size_t>(m) * n;
    for (size_t i = 0; i < total; ++i) c[i] = 0.0;
  }
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<size_t>(p) * m;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace mx2m::kernels
