#pragma once

#include <cstddef>
#include <functional>

namespace bsl {

/// Runs fn(i) for i in [0, n) on up to `threads` threads with static
/// chunking. The first exception (lowest index) is rethrown after all
/// workers finish. Callers own any reduction and must do it in index order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace bsl
