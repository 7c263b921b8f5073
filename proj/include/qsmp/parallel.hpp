#pragma once

#include <cstddef>
#include <functional>

namespace qsmp::parallel {

/// Fixed work-unit size. Chunk boundaries never depend on the thread count,
/// so any per-chunk computation is reproducible across thread settings.
inline constexpr std::size_t kChunkSize = 2048;

void set_threads(unsigned count);
unsigned threads();

/// Resolves the thread count from an explicit request, then QSMP_THREADS,
/// then 1.
unsigned resolve_threads(int requested);

/// Runs body(begin, end) over [0, count) split into kChunkSize ranges.
/// Ranges may execute concurrently; body must only write to its own range.
void for_chunks(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace qsmp::parallel
