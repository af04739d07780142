#pragma once

namespace dproto {

// Sets the number of OpenMP threads used by all kernels. Results are
// bit-identical for any thread count: every kernel assigns each output
// element to exactly one thread and accumulates in a fixed serial order.
void set_threads(int n);
int threads();

}  // namespace dproto
