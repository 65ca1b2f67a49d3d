// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <vector>

namespace vim {

// Process-wide counters for every buffer that goes through TrackedAllocator.
struct AllocStats {
  std::int64_t current_bytes = 0;
  std::int64_t peak_bytes = 0;
};

AllocStats alloc_stats() noexcept;

// Drops the high-water mark back to the live byte count.
void reset_peak_bytes() noexcept;

namespace detail {
void record_alloc(std::size_t bytes) noexcept;
void record_free(std::size_t bytes) noexcept;
}  // namespace detail

template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    detail::record_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    detail::record_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, TrackedAllocator<T>>;

}  // namespace vim
