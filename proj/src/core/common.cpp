#include "core/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace tracekit {

void fail_usage(const std::string& msg) { throw Error(ErrorKind::kUsage, msg); }
void fail_parse(const std::string& msg) { throw Error(ErrorKind::kParse, msg); }
void fail_numeric(const std::string& msg) { throw Error(ErrorKind::kNumeric, msg); }
void fail_io(const std::string& msg) { throw Error(ErrorKind::kIo, msg); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream); decorrelates nearby seeds.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("TRACE_KIT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(std::min<long>(v, 256));
  }
  return hw;
}

namespace {
thread_local bool g_inside_parallel = false;
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  int workers = worker_count();
  if (workers <= 1 || n == 1 || g_inside_parallel) {
    fn(0, n);
    return;
  }
  std::int64_t chunks = std::min<std::int64_t>(workers, n);
  std::int64_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    std::int64_t begin = c * step;
    std::int64_t end = std::min(n, begin + step);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      g_inside_parallel = true;
      fn(begin, end);
      g_inside_parallel = false;
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace tracekit
