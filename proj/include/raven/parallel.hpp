#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace raven {

// Process-wide worker pool. Work is always partitioned by element index, so
// results are bit-identical for any worker count; --workers only trades
// latency. Pool size 1 (the default) runs inline on the caller.
class WorkerPool {
 public:
  static WorkerPool& instance() {
    static WorkerPool pool;
    return pool;
  }

  void set_workers(int n) {
    std::lock_guard<std::mutex> lk(config_mutex_);
    stop_threads();
    workers_ = n < 1 ? 1 : n;
    if (workers_ > 1) start_threads(workers_ - 1);
  }

  int workers() const { return workers_; }

  // Runs fn(begin, end) over [0, n) split into one contiguous range per
  // worker. Caller blocks until every range is done. Nested calls (say, a
  // row-parallel matmul inside a per-passage job) run inline on the current
  // thread; only the outermost level fans out.
  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (workers_ == 1 || n == 1 || threads_.empty() || in_job()) {
      fn(0, n);
      return;
    }
    int parts = static_cast<int>(std::min<int64_t>(workers_, n));
    int64_t chunk = (n + parts - 1) / parts;
    {
      std::unique_lock<std::mutex> lk(mutex_);
      job_fn_ = &fn;
      job_chunk_ = chunk;
      job_n_ = n;
      job_parts_ = parts;
      pending_ = parts - 1;  // caller takes part 0
      generation_++;
    }
    cv_.notify_all();
    in_job() = true;
    fn(0, std::min<int64_t>(chunk, n));
    in_job() = false;
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  ~WorkerPool() { stop_threads(); }

 private:
  WorkerPool() = default;

  // True while the current thread is executing a slice of some job.
  static bool& in_job() {
    static thread_local bool v = false;
    return v;
  }

  void start_threads(int count) {
    stopping_ = false;
    for (int i = 0; i < count; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i + 1); });
    }
  }

  void stop_threads() {
    {
      std::unique_lock<std::mutex> lk(mutex_);
      stopping_ = true;
      generation_++;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void worker_loop(int part_index) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      int64_t begin = 0, end = 0;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
        seen = generation_;
        if (stopping_) return;
        if (part_index >= job_parts_) {
          // no slice for this worker in the current job
          continue;
        }
        fn = job_fn_;
        begin = std::min<int64_t>(part_index * job_chunk_, job_n_);
        end = std::min<int64_t>(begin + job_chunk_, job_n_);
      }
      if (fn && begin < end) {
        in_job() = true;
        (*fn)(begin, end);
        in_job() = false;
      }
      {
        std::unique_lock<std::mutex> lk(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex config_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_chunk_ = 0;
  int64_t job_n_ = 0;
  int job_parts_ = 0;
  int pending_ = 0;
  int workers_ = 1;
  uint64_t generation_ = 0;
  bool stopping_ = false;
};

inline void set_workers(int n) { WorkerPool::instance().set_workers(n); }

inline void parallel_for(int64_t n,
                         const std::function<void(int64_t, int64_t)>& fn) {
  WorkerPool::instance().run(n, fn);
}

}  // namespace raven
