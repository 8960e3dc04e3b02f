#pragma once
// Command-line front end. Exit codes: 0 success, 1 gradient check failure,
// 2 configuration or usage error, 3 runtime failure.

#include <iosfwd>

namespace ion::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Raises the glibc mmap and trim thresholds so the per-step tensor
// allocations are served from the heap instead of fresh zeroed pages.
void tune_allocator();

}  // namespace ion::cli
