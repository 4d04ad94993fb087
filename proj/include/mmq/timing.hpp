#pragma once

#include <chrono>

namespace mmq {

/// Wall-clock milliseconds per pipeline stage.
struct StageTimes {
  double backbone = 0.0;
  double init = 0.0;
  double decoder = 0.0;
  double heads = 0.0;

  double total() const { return backbone + init + decoder + heads; }
};

/// Adds the lifetime of the guard to `*sink`; a null sink makes it a no-op.
class StageClock {
 public:
  explicit StageClock(double* sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  StageClock(const StageClock&) = delete;
  StageClock& operator=(const StageClock&) = delete;
  ~StageClock() {
    if (sink_) *sink_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double* sink_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mmq
