// Copyright 2026 The PlayMimic Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "playmimic/parallel.hpp"

namespace playmimic {

// C[M,N] (+)= A[M,K] * B[K,N], row-major. The i-k-j loop order streams rows of
// B and vectorizes on the N axis without reassociating any reduction, so
// results are bit-identical across runs and thread counts.
template <typename T>
void gemm(int M, int K, int N, const T* a, const T* b, T* c, bool accumulate) {
  auto body = [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * N;
      if (!accumulate) {
        for (int j = 0; j < N; ++j) crow[j] = T(0);
      }
      const T* arow = a + i * K;
      for (int k = 0; k < K; ++k) {
        T av = arow[k];
        if (av == T(0)) continue;
        const T* brow = b + static_cast<int64_t>(k) * N;
        for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  };
  // Threading pays off only for wide rows.
  if (static_cast<int64_t>(M) * K * N >= 65536) {
    parallel_for(M, body);
  } else {
    body(0, M);
  }
}

// C[M,N] (+)= A^T * B where A is [K,M]: used for weight gradients.
template <typename T>
void gemm_tn(int M, int K, int N, const T* a, const T* b, T* c, bool accumulate) {
  auto body = [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = c + i * N;
      if (!accumulate) {
        for (int j = 0; j < N; ++j) crow[j] = T(0);
      }
      for (int k = 0; k < K; ++k) {
        T av = a[static_cast<int64_t>(k) * M + i];
        if (av == T(0)) continue;
        const T* brow = b + static_cast<int64_t>(k) * N;
        for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (static_cast<int64_t>(M) * K * N >= 65536) {
    parallel_for(M, body);
  } else {
    body(0, M);
  }
}

// C[M,N] (+)= A * B^T where B is [N,K]: used for input gradients. Materializes
// B^T once so the main loop stays in the fast streaming form.
template <typename T>
void gemm_nt(int M, int K, int N, const T* a, const T* b, T* c, bool accumulate) {
  std::vector<T> bt(static_cast<size_t>(K) * N);
  for (int j = 0; j < N; ++j) {
    const T* brow = b + static_cast<int64_t>(j) * K;
    for (int k = 0; k < K; ++k) bt[static_cast<size_t>(k) * N + j] = brow[k];
  }
  gemm(M, K, N, a, bt.data(), c, accumulate);
}

}  // namespace playmimic
