#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "preemptkit/error.hpp"

namespace pk {

// Worker count: PREEMPTKIT_THREADS when set to a positive integer, otherwise
// the hardware concurrency (at least 1).
std::size_t worker_count();

// Failures collected from a parallel loop, one entry per failing index.
class BatchError : public Error {
 public:
  struct Failure {
    std::size_t index;
    std::string message;
  };
  explicit BatchError(std::vector<Failure> failures);
  const std::vector<Failure>& failures() const { return failures_; }

 private:
  std::vector<Failure> failures_;
};

// Runs body(i) for i in [0, n). Each index is owned by exactly one worker, so
// bodies that only write slot i produce results independent of scheduling.
// Exceptions are gathered and rethrown as a BatchError ordered by index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace pk
