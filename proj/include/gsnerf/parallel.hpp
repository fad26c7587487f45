// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace gsnerf {

// Global worker count for kernel-internal parallelism. 1 = fully serial.
// Work is always split into a fixed number of chunks independent of the
// worker count, and chunk results are combined in chunk order, so numeric
// results are identical for any thread count.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end, chunk_index) over [0, n) split into `chunks` contiguous
// ranges. Chunks are distributed over the worker pool; fn must only write to
// disjoint state per chunk.
void parallel_chunks(int64_t n, int chunks,
                     const std::function<void(int64_t, int64_t, int)>& fn);

// Convenience: one chunk per worker, at most n.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn);

}  // namespace gsnerf
