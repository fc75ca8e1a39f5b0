#pragma once

#include <atomic>
#include <cstddef>

namespace slamkit::tools {

/// Calls to the global operator new since program start.
extern std::atomic<std::size_t> g_allocations;

}  // namespace slamkit::tools
