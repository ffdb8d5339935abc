#pragma once

#include <cstdint>
#include <functional>

namespace hstr {

/// Worker thread cap. Defaults to HSTRNET_THREADS when set, otherwise the
/// hardware concurrency.
int num_threads();
void set_num_threads(int threads);

/// Runs fn(begin, end) over contiguous chunks of [0, count). Chunks write
/// disjoint outputs, so results do not depend on the thread count.
void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_chunk = 1);

}  // namespace hstr
