#include "dproto/threading.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dproto/errors.hpp"

namespace dproto {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
    if (n < 1) {
        throw ConfigError("thread count must be >= 1, got " + std::to_string(n));
    }
    g_threads.store(n);
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

int threads() {
    return g_threads.load();
}

}  // namespace dproto
