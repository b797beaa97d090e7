#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace shiftlab {

// Runs fn(begin, end) over [0, n) split into contiguous blocks, one per
// worker. Blocks are fixed by (n, threads) so results written by index do not
// depend on scheduling.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  int block = (n + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    int begin = w * block;
    int end = std::min(n, begin + block);
    if (begin >= end) break;
    workers.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

}  // namespace shiftlab
