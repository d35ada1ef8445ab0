#pragma once

#include <chrono>

namespace nmpc {

inline double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

class ScopedTimer {
 public:
  explicit ScopedTimer(double& accumulator) : acc_(accumulator), start_(now_seconds()) {}
  ~ScopedTimer() { acc_ += now_seconds() - start_; }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  double& acc_;
  double start_;
};

}  // namespace nmpc
