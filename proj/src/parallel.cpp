#include "pwmini/parallel.hpp"

#include <atomic>

#include "pwmini/error.hpp"

namespace pwmini {

namespace {
std::atomic<int> g_kernel_threads{1};
}

int kernel_threads() { return g_kernel_threads.load(std::memory_order_relaxed); }

void set_kernel_threads(int n) {
  if (n < 1) throw InvalidArgument("kernel thread count must be >= 1");
  g_kernel_threads.store(n, std::memory_order_relaxed);
}

}  // namespace pwmini
