#include "preemptkit/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace pk {

std::size_t worker_count() {
  if (const char* env = std::getenv("PREEMPTKIT_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) return static_cast<std::size_t>(value);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

namespace {

std::string summarize(const std::vector<BatchError::Failure>& failures) {
  std::string msg = std::to_string(failures.size()) + " item(s) failed";
  if (!failures.empty()) {
    msg += "; first: [" + std::to_string(failures.front().index) + "] " + failures.front().message;
  }
  return msg;
}

}  // namespace

BatchError::BatchError(std::vector<Failure> failures)
    : Error(summarize(failures)), failures_(std::move(failures)) {}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::min(worker_count(), n);
  std::vector<BatchError::Failure> failures;
  std::mutex failures_mutex;

  auto run_range = [&](std::size_t worker) {
    for (std::size_t i = worker; i < n; i += workers) {
      try {
        body(i);
      } catch (const std::exception& e) {
        std::lock_guard lock(failures_mutex);
        failures.push_back({i, e.what()});
      }
    }
  };

  if (workers == 1) {
    run_range(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_range, w);
  }

  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    throw BatchError(std::move(failures));
  }
}

}  // namespace pk
