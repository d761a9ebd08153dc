#include "featup/memory.hpp"

#include <atomic>

namespace featup {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

void ScratchCounter::reset_peak() { g_peak.store(g_current.load()); }

std::size_t ScratchCounter::current_bytes() { return g_current.load(); }

std::size_t ScratchCounter::peak_bytes() { return g_peak.load(); }

void ScratchCounter::on_allocate(std::size_t bytes) {
  std::size_t now = g_current.fetch_add(bytes) + bytes;
  std::size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void ScratchCounter::on_deallocate(std::size_t bytes) { g_current.fetch_sub(bytes); }

}  // namespace featup
