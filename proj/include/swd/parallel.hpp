#pragma once

#include <cstddef>
#include <functional>

namespace swd {

/// Worker count for batch-parallel helpers; 1 (the default) runs inline.
void set_worker_threads(std::size_t n);
std::size_t worker_threads();

/// Calls fn(i) for every i in [0, n). Each index must write only its own
/// output slot, so results do not depend on the thread count. The first
/// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace swd
