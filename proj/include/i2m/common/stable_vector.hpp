#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <mutex>

#include "i2m/common/error.hpp"

namespace i2m {

/// Chunked array whose elements never move. Growth is serialized by a
/// mutex; element access is lock-free, so readers can keep references while
/// another thread appends. Capacity is capped at kChunkCount * kChunkSize.
template <class T>
class StableVector {
 public:
  static constexpr std::size_t kChunkBits = 14;
  static constexpr std::size_t kChunkSize = std::size_t{1} << kChunkBits;
  static constexpr std::size_t kChunkCount = std::size_t{1} << 15;

  StableVector() : chunks_(new std::atomic<T*>[kChunkCount]) {
    for (std::size_t i = 0; i < kChunkCount; ++i) chunks_[i].store(nullptr, std::memory_order_relaxed);
  }
  ~StableVector() { release(); }

  StableVector(const StableVector&) = delete;
  StableVector& operator=(const StableVector&) = delete;

  StableVector(StableVector&& other) noexcept
      : chunks_(std::move(other.chunks_)), allocated_(other.allocated_.load()) {
    other.allocated_ = 0;
  }
  StableVector& operator=(StableVector&& other) noexcept {
    if (this != &other) {
      release();
      chunks_ = std::move(other.chunks_);
      allocated_ = other.allocated_.load();
      other.allocated_ = 0;
    }
    return *this;
  }

  T& operator[](std::size_t i) {
    return chunks_[i >> kChunkBits].load(std::memory_order_acquire)[i & (kChunkSize - 1)];
  }
  const T& operator[](std::size_t i) const {
    return chunks_[i >> kChunkBits].load(std::memory_order_acquire)[i & (kChunkSize - 1)];
  }

  /// Makes indices [0, n) addressable. New elements are value-initialized.
  void ensure(std::size_t n) {
    if (n <= allocated_.load(std::memory_order_acquire)) return;
    std::lock_guard lock(grow_mutex_);
    std::size_t have = allocated_.load(std::memory_order_relaxed);
    while (have < n) {
      const std::size_t c = have >> kChunkBits;
      if (c >= kChunkCount) throw MeshError("mesh storage capacity exceeded");
      chunks_[c].store(new T[kChunkSize](), std::memory_order_release);
      have += kChunkSize;
    }
    allocated_.store(have, std::memory_order_release);
  }

  std::size_t capacity() const { return allocated_.load(std::memory_order_acquire); }

 private:
  void release() {
    if (!chunks_) return;
    const std::size_t n = allocated_.load() >> kChunkBits;
    for (std::size_t c = 0; c < n; ++c) delete[] chunks_[c].load();
    allocated_ = 0;
  }

  std::unique_ptr<std::atomic<T*>[]> chunks_;
  std::atomic<std::size_t> allocated_{0};
  std::mutex grow_mutex_;
};

}  // namespace i2m
