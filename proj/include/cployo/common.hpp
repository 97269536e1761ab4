#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cployo {

// Data/contract problems (bad files, shape mismatches, invalid arguments).
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures (non-finite values, gradient checks out of tolerance).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ValueError(msg);
}

// Deterministic RNG. std::mt19937_64 with explicit float/normal derivation so
// streams do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() { return state_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(state_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

namespace detail {

// Worker pool behind parallel_for. One job at a time; a second caller (or a
// nested call from inside a lane) runs its loop serially instead of queueing,
// so the pool is safe to hit from anywhere. Lane count is capped by
// CPLOYO_THREADS (default: hardware concurrency).
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int lanes() const { return lanes_; }

  void run(int n_lanes, const std::function<void(int)>& fn) {
    if (n_lanes <= 1 || lanes_ <= 1) {
      for (int i = 0; i < n_lanes; ++i) fn(i);
      return;
    }
    bool expected = false;
    if (!busy_.compare_exchange_strong(expected, true)) {
      for (int i = 0; i < n_lanes; ++i) fn(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_fn_ = &fn;
      next_lane_ = 1;
      job_lanes_ = n_lanes;
      pending_ = n_lanes - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0);
    {
      std::unique_lock<std::mutex> lk(mu_);
      done_cv_.wait(lk, [&] { return pending_ == 0; });
      job_fn_ = nullptr;
    }
    busy_.store(false);
  }

 private:
  ThreadPool() {
    int n = 0;
    if (const char* env = std::getenv("CPLOYO_THREADS")) n = std::atoi(env);
    if (n <= 0) {
      unsigned hw = std::thread::hardware_concurrency();
      n = hw == 0 ? 1 : static_cast<int>(hw);
    }
    if (n > 64) n = 64;
    lanes_ = n;
    for (int i = 0; i < lanes_ - 1; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* fn = nullptr;
      std::uint64_t gen = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        gen = generation_;
      }
      for (;;) {
        int lane = -1;
        {
          std::unique_lock<std::mutex> lk(mu_);
          if (generation_ != gen || job_fn_ == nullptr || next_lane_ >= job_lanes_) break;
          lane = next_lane_++;
          fn = job_fn_;
        }
        (*fn)(lane);
        {
          std::unique_lock<std::mutex> lk(mu_);
          if (--pending_ == 0) done_cv_.notify_all();
        }
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* job_fn_ = nullptr;
  int job_lanes_ = 0;
  int next_lane_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::atomic<bool> busy_{false};
  int lanes_ = 1;
};

}  // namespace detail

// Splits [0,n) into contiguous chunks, one per lane; f(begin,end) per chunk.
// Chunking depends only on n and the configured lane count, and lanes write
// disjoint ranges, so results are identical across runs and thread counts.
template <typename F>
void parallel_for(std::int64_t n, std::int64_t grain, F&& f) {
  if (n <= 0) return;
  auto& pool = detail::ThreadPool::instance();
  int lanes = pool.lanes();
  if (grain < 1) grain = 1;
  const std::int64_t max_lanes = (n + grain - 1) / grain;
  if (max_lanes < lanes) lanes = static_cast<int>(max_lanes);
  if (lanes <= 1) {
    f(std::int64_t{0}, n);
    return;
  }
  const std::int64_t chunk = (n + lanes - 1) / lanes;
  std::function<void(int)> lane_fn = [&](int lane) {
    const std::int64_t b = lane * chunk;
    const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
    if (b < e) f(b, e);
  };
  pool.run(lanes, lane_fn);
}

}  // namespace cployo
