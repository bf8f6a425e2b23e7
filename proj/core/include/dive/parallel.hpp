#ifndef DIVE_PARALLEL_HPP
#define DIVE_PARALLEL_HPP

#include <cstdint>
#include <functional>

namespace dive {

// Runs body(i) for i in [begin, end) on up to `threads` workers.
// Work is split into contiguous chunks, so each index is processed exactly
// once and writes to per-index slots never race. Results are bitwise
// independent of the thread count as long as body(i) touches only slot i.
// threads <= 1 runs inline.
void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                  const std::function<void(std::int64_t)>& body);

// Thread budget from a --threads value, falling back to the DIVE_THREADS
// environment variable, then to 1.
int resolve_thread_count(int requested);

}  // namespace dive

#endif
