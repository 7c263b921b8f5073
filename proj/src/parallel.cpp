#include "qsmp/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace qsmp::parallel {
namespace {
std::atomic<unsigned> g_threads{1};
}

void set_threads(unsigned count) { g_threads.store(std::max(1u, count)); }

unsigned threads() { return g_threads.load(); }

unsigned resolve_threads(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("QSMP_THREADS")) {
    try {
      const int value = std::stoi(env);
      if (value > 0) return static_cast<unsigned>(value);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void for_chunks(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t chunks = (count + kChunkSize - 1) / kChunkSize;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads(), chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c * kChunkSize, std::min(count, (c + 1) * kChunkSize));
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        body(c * kChunkSize, std::min(count, (c + 1) * kChunkSize));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(chunks);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace qsmp::parallel
