// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mspnf {

/// Splits [0, n) into `workers` contiguous ranges and runs fn(begin, end, worker)
/// on each. Worker 0 runs on the calling thread. The first exception thrown by
/// any worker is rethrown after all have joined.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  if (w == 1) {
    fn(std::size_t{0}, n, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  threads.reserve(w - 1);
  auto run = [&](std::size_t k) {
    const std::size_t begin = n * k / w;
    const std::size_t end = n * (k + 1) / w;
    try {
      fn(begin, end, static_cast<int>(k));
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  for (std::size_t k = 1; k < w; ++k) threads.emplace_back(run, k);
  run(0);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mspnf
