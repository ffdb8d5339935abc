#include "hstr/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace hstr {

namespace {

int threads_from_env() {
  if (const char* env = std::getenv("HSTRNET_THREADS")) {
    try {
      int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{threads_from_env()};
  return cap;
}

}  // namespace

int num_threads() { return thread_cap().load(); }

void set_num_threads(int threads) { thread_cap().store(std::max(1, threads)); }

void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_chunk) {
  if (count <= 0) return;
  int64_t workers = std::min<int64_t>(num_threads(), (count + min_chunk - 1) / min_chunk);
  if (workers <= 1) {
    fn(0, count);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  int64_t chunk = (count + workers - 1) / workers;
  for (int64_t t = 1; t < workers; ++t) {
    int64_t b = t * chunk;
    int64_t e = std::min(count, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(count, chunk));
}

}  // namespace hstr
