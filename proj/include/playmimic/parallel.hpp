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

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace playmimic {

// Static-partition fork/join pool. Every output element is computed by exactly
// one worker with a fixed sequential accumulation order, so results are
// bit-identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int threads() const { return n_threads_; }

  void set_threads(int n) {
    if (n < 1) n = 1;
    std::lock_guard<std::mutex> lk(api_mu_);
    shutdown_workers();
    n_threads_ = n;
    spawn_workers();
  }

  // fn(begin, end) over [0, n) split into contiguous chunks, one per worker.
  // Nested calls (from inside a worker) run serially on the caller.
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (n_threads_ == 1 || in_worker_ || n < 2) {
      fn(0, n);
      return;
    }
    std::lock_guard<std::mutex> lk(api_mu_);
    int nt = n_threads_;
    if (int64_t(nt) > n) nt = static_cast<int>(n);
    {
      std::unique_lock<std::mutex> jl(job_mu_);
      job_fn_ = &fn;
      job_n_ = n;
      job_parts_ = nt;
      pending_ = nt - 1;  // main thread takes chunk 0
      epoch_++;
      job_cv_.notify_all();
    }
    in_worker_ = true;  // nested calls from this chunk degrade to serial
    run_chunk(0, fn, n, nt);
    in_worker_ = false;
    std::unique_lock<std::mutex> jl(job_mu_);
    done_cv_.wait(jl, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() { shutdown_workers(); }

 private:
  ThreadPool() {
    unsigned hw = std::thread::hardware_concurrency();
    n_threads_ = hw ? static_cast<int>(hw) : 1;
    spawn_workers();
  }

  static void run_chunk(int part, const std::function<void(int64_t, int64_t)>& fn, int64_t n,
                        int parts) {
    int64_t b = n * part / parts;
    int64_t e = n * (part + 1) / parts;
    if (b < e) fn(b, e);
  }

  void spawn_workers() {
    stop_ = false;
    for (int t = 1; t < n_threads_; ++t) {
      workers_.emplace_back([this, t] {
        in_worker_ = true;
        uint64_t seen = 0;
        for (;;) {
          const std::function<void(int64_t, int64_t)>* fn = nullptr;
          int64_t n = 0;
          int parts = 0;
          {
            std::unique_lock<std::mutex> jl(job_mu_);
            job_cv_.wait(jl, [&] { return stop_ || (epoch_ != seen && job_fn_ != nullptr); });
            if (stop_) return;
            seen = epoch_;
            fn = job_fn_;
            n = job_n_;
            parts = job_parts_;
          }
          if (t < parts) run_chunk(t, *fn, n, parts);
          {
            std::unique_lock<std::mutex> jl(job_mu_);
            if (--pending_ == 0) done_cv_.notify_all();
          }
        }
      });
    }
  }

  void shutdown_workers() {
    {
      std::unique_lock<std::mutex> jl(job_mu_);
      stop_ = true;
      job_cv_.notify_all();
    }
    for (auto& w : workers_) {
      if (w.joinable()) w.join();
    }
    workers_.clear();
  }

  int n_threads_ = 1;
  std::vector<std::thread> workers_;
  std::mutex api_mu_;
  std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int job_parts_ = 0;
  int pending_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
  static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace playmimic
