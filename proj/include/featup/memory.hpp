#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace featup {

/// Process-wide counter of scratch memory allocated by the kernels. Only
/// buffers created through TrackingAllocator are counted; inputs and outputs
/// owned by the caller are not.
class ScratchCounter {
 public:
  static void reset_peak();
  static std::size_t current_bytes();
  static std::size_t peak_bytes();
  static void on_allocate(std::size_t bytes);
  static void on_deallocate(std::size_t bytes);
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    ScratchCounter::on_allocate(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ScratchCounter::on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using scratch_vector = std::vector<T, TrackingAllocator<T>>;

}  // namespace featup
