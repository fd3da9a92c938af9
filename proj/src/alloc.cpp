// Every heap block starts on a 64-byte boundary. Eigen picks scalar or packet
// code paths (and hence summation order) from buffer alignment, so without
// this the same op on the same values could round differently from run to run.

#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t kAlign = 64;

void* aligned_or_null(std::size_t size) {
  const std::size_t rounded = (size + kAlign - 1) / kAlign * kAlign;
  return std::aligned_alloc(kAlign, rounded == 0 ? kAlign : rounded);
}

}  // namespace

void* operator new(std::size_t size) {
  if (void* p = aligned_or_null(size)) return p;
  throw std::bad_alloc();
}

void* operator new[](std::size_t size) { return operator new(size); }
void* operator new(std::size_t size, const std::nothrow_t&) noexcept { return aligned_or_null(size); }
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept { return aligned_or_null(size); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
