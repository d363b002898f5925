#pragma once

// Thread count used by the OpenMP kernels inside one rank. Ranks are already
// concurrent, so the default is one kernel thread per rank.

namespace pwmini {

int kernel_threads();
void set_kernel_threads(int n);

}  // namespace pwmini
