#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace ebt {

/// Runs task(0..n-1) on `workers` threads and hands each result to `sink`
/// strictly in index order, one call at a time, as soon as every earlier
/// result has been delivered. The first exception thrown by a task or the
/// sink stops new work and is rethrown after the workers join.
template <typename Result>
void run_ordered(std::size_t n, std::size_t workers, const std::function<Result(std::size_t)>& task,
                 const std::function<void(std::size_t, Result&&)>& sink) {
  std::mutex mu;
  std::size_t next_task = 0, next_emit = 0;
  std::map<std::size_t, Result> ready;
  std::exception_ptr error;

  // Called with `mu` held, by the thread that completed index next_emit.
  auto drain = [&] {
    while (!error) {
      auto it = ready.find(next_emit);
      if (it == ready.end()) break;
      Result r = std::move(it->second);
      ready.erase(it);
      const std::size_t idx = next_emit;
      try {
        sink(idx, std::move(r));
      } catch (...) {
        error = std::current_exception();
      }
      ++next_emit;
    }
  };

  auto worker = [&] {
    for (;;) {
      std::size_t idx;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (error || next_task >= n) return;
        idx = next_task++;
      }
      std::optional<Result> r;
      try {
        r.emplace(task(idx));
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        return;
      }
      std::lock_guard<std::mutex> lock(mu);
      ready.emplace(idx, std::move(*r));
      if (idx == next_emit) drain();
    }
  };

  const std::size_t k = std::max<std::size_t>(1, std::min(workers, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(k);
    for (std::size_t i = 0; i < k; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace ebt
