#pragma once

#include <cstddef>
#include <functional>

namespace nestsvd {

/// Worker count used by parallel_for; values below 1 are clamped to 1.
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n). Each index is executed exactly once and must
/// touch disjoint output, so results never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace nestsvd
