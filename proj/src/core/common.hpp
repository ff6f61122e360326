#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace tracekit {

// Coarse failure category so the C boundary and the CLI can map errors to
// stable status / exit codes without string matching.
enum class ErrorKind {
  kUsage,    // bad arguments or configuration
  kParse,    // malformed input file
  kNumeric,  // solver breakdown, NaN, divergence
  kIo,       // missing or unwritable files
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail_usage(const std::string& msg);
[[noreturn]] void fail_parse(const std::string& msg);
[[noreturn]] void fail_numeric(const std::string& msg);
[[noreturn]] void fail_io(const std::string& msg);

// Derives an independent seed for sub-stream `stream` of a user seed, so
// e.g. the source and target draws of one world never share a generator.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Worker cap: TRACE_KIT_THREADS (clamped to >= 1) wins over
// hardware_concurrency. Re-read on each call so tests can vary it.
int worker_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Every index must be
// computable independently; under that contract results are bitwise
// identical for any worker count. Nested calls run inline on the caller.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace tracekit
