// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Paged key/value storage: fixed-size blocks addressed through per-sequence
// block tables, reference-counted so forks share a prefix and copy a block
// only when they write to it.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "arvis/error.hpp"
#include "arvis/numerics.hpp"
#include "arvis/tokenization.hpp"

namespace arvis {

// Per-layer key and value rows for a run of consecutive tokens.
template <class T>
struct KvRows {
  std::vector<Tensor2D<T>> k;
  std::vector<Tensor2D<T>> v;

  KvRows() = default;
  KvRows(std::size_t layers, std::size_t rows, std::size_t dim)
      : k(layers, Tensor2D<T>(rows, dim)), v(layers, Tensor2D<T>(rows, dim)) {}
  std::size_t rows() const { return k.empty() ? 0 : k.front().rows(); }
};

// A sequence's view into a pool. Move-only: sharing goes through fork().
class CacheHandle {
 public:
  CacheHandle() = default;
  CacheHandle(CacheHandle&& o) noexcept { *this = std::move(o); }
  CacheHandle& operator=(CacheHandle&& o) noexcept {
    id_ = o.id_;
    pool_id_ = o.pool_id_;
    blocks_ = std::move(o.blocks_);
    tokens_ = std::move(o.tokens_);
    filled_ = o.filled_;
    o.id_ = 0;
    o.filled_ = 0;
    o.blocks_.clear();
    o.tokens_.clear();
    return *this;
  }
  CacheHandle(const CacheHandle&) = delete;
  CacheHandle& operator=(const CacheHandle&) = delete;

  std::uint64_t id() const { return id_; }
  std::uint32_t pool_id() const { return pool_id_; }
  const std::vector<std::uint32_t>& blocks() const { return blocks_; }
  // Token ids whose keys/values are stored, in order.
  const std::vector<TokenId>& tokens() const { return tokens_; }
  std::size_t filled() const { return filled_; }
  bool valid() const { return id_ != 0; }

 private:
  template <class>
  friend class BlockPool;

  std::uint64_t id_ = 0;
  std::uint32_t pool_id_ = 0;
  std::vector<std::uint32_t> blocks_;
  std::vector<TokenId> tokens_;
  std::size_t filled_ = 0;
};

template <class T>
class BlockPool {
 public:
  static constexpr std::size_t kDefaultBlockSize = 16;

  BlockPool(std::size_t n_layers, std::size_t kv_dim, std::size_t capacity,
            std::size_t block_size = kDefaultBlockSize)
      : n_layers_(n_layers),
        dim_(kv_dim),
        block_size_(block_size),
        capacity_(capacity),
        pool_id_(next_pool_id()),
        keys_(capacity * n_layers * block_size * kv_dim),
        values_(capacity * n_layers * block_size * kv_dim),
        refcount_(capacity, 0) {
    if (block_size == 0) throw ConfigError("block size must be positive");
    free_.reserve(capacity);
    for (std::size_t b = capacity; b-- > 0;) {
      free_.push_back(static_cast<std::uint32_t>(b));
    }
  }

  BlockPool(const BlockPool&) = delete;
  BlockPool& operator=(const BlockPool&) = delete;

  std::size_t block_size() const { return block_size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_layers() const { return n_layers_; }
  std::size_t kv_dim() const { return dim_; }
  std::uint32_t id() const { return pool_id_; }

  std::size_t free_blocks() const {
    std::lock_guard lock(mu_);
    return free_.size();
  }
  std::size_t allocated_blocks() const { return capacity_ - free_blocks(); }
  std::uint32_t refcount(std::uint32_t block) const {
    std::lock_guard lock(mu_);
    return refcount_.at(block);
  }

  std::size_t blocks_for(std::size_t tokens) const {
    return (tokens + block_size_ - 1) / block_size_;
  }

  // Reserves ceil(initial_len / block_size) blocks; nothing is filled yet.
  CacheHandle allocate(std::size_t initial_len = 0) {
    const std::size_t need = blocks_for(initial_len);
    std::lock_guard lock(mu_);
    if (free_.size() < need) {
      throw OutOfBlocksError("pool exhausted: need " + std::to_string(need) +
                             " blocks, " + std::to_string(free_.size()) +
                             " free");
    }
    CacheHandle h;
    h.id_ = next_handle_++;
    h.pool_id_ = pool_id_;
    for (std::size_t i = 0; i < need; ++i) h.blocks_.push_back(take_locked());
    live_.insert(h.id_);
    return h;
  }

  // Appends the first n rows of `rows` for every layer. Blocks are grown on
  // demand and shared blocks are copied before being written. On failure the
  // handle and the pool are left exactly as they were.
  void append(CacheHandle& h, const KvRows<T>& rows, std::size_t n,
              std::span<const TokenId> tokens) {
    check(h);
    if (rows.k.size() != n_layers_ || rows.v.size() != n_layers_ ||
        rows.rows() < n || tokens.size() < n) {
      throw DimensionError("append: row/layer count mismatch");
    }
    if (n == 0) return;
    const std::size_t first_block = h.filled_ / block_size_;
    const std::size_t need_total = blocks_for(h.filled_ + n);
    {
      std::lock_guard lock(mu_);
      std::size_t copies = 0;
      for (std::size_t b = first_block; b < std::min(need_total, h.blocks_.size());
           ++b) {
        if (refcount_[h.blocks_[b]] > 1) ++copies;
      }
      const std::size_t grow =
          need_total > h.blocks_.size() ? need_total - h.blocks_.size() : 0;
      if (free_.size() < copies + grow) {
        throw OutOfBlocksError("pool exhausted during append");
      }
      for (std::size_t b = first_block; b < std::min(need_total, h.blocks_.size());
           ++b) {
        const std::uint32_t old = h.blocks_[b];
        if (refcount_[old] > 1) {
          const std::uint32_t fresh = take_locked();
          copy_block(old, fresh);
          --refcount_[old];
          h.blocks_[b] = fresh;
        }
      }
      for (std::size_t i = 0; i < grow; ++i) h.blocks_.push_back(take_locked());
    }
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t pos = h.filled_ + r;
      for (std::size_t l = 0; l < n_layers_; ++l) {
        std::copy_n(rows.k[l].row(r), dim_, mutable_row(keys_, h, l, pos));
        std::copy_n(rows.v[l].row(r), dim_, mutable_row(values_, h, l, pos));
      }
    }
    h.tokens_.insert(h.tokens_.end(), tokens.begin(), tokens.begin() + n);
    h.filled_ += n;
  }

  // New handle sharing every block of `h`.
  CacheHandle fork(const CacheHandle& h) {
    check(h);
    std::lock_guard lock(mu_);
    CacheHandle f;
    f.id_ = next_handle_++;
    f.pool_id_ = pool_id_;
    f.blocks_ = h.blocks_;
    f.tokens_ = h.tokens_;
    f.filled_ = h.filled_;
    for (auto b : f.blocks_) ++refcount_[b];
    live_.insert(f.id_);
    return f;
  }

  void free(CacheHandle& h) {
    check(h);
    std::lock_guard lock(mu_);
    for (auto b : h.blocks_) {
      if (--refcount_[b] == 0) free_.push_back(b);
    }
    live_.erase(h.id_);
    h.blocks_.clear();
    h.tokens_.clear();
    h.filled_ = 0;
    h.id_ = 0;
  }

  const T* key_row(const CacheHandle& h, std::size_t layer,
                   std::size_t pos) const {
    return row_ptr(keys_, h, layer, pos);
  }
  const T* value_row(const CacheHandle& h, std::size_t layer,
                     std::size_t pos) const {
    return row_ptr(values_, h, layer, pos);
  }

  // Filled rows of one layer in token order: (keys, values).
  std::pair<Tensor2D<T>, Tensor2D<T>> gather(const CacheHandle& h,
                                             std::size_t layer) const {
    check(h);
    if (layer >= n_layers_) throw DimensionError("gather: layer out of range");
    Tensor2D<T> k(h.filled_, dim_), v(h.filled_, dim_);
    for (std::size_t p = 0; p < h.filled_; ++p) {
      std::copy_n(key_row(h, layer, p), dim_, k.row(p));
      std::copy_n(value_row(h, layer, p), dim_, v.row(p));
    }
    return {std::move(k), std::move(v)};
  }

  // "handle_id: [block ids] filled=n"
  std::string dump(const CacheHandle& h) const {
    std::ostringstream os;
    os << h.id_ << ": [";
    for (std::size_t i = 0; i < h.blocks_.size(); ++i) {
      if (i) os << ' ';
      os << h.blocks_[i];
    }
    os << "] filled=" << h.filled_;
    return os.str();
  }

  void check(const CacheHandle& h) const {
    if (h.pool_id_ != pool_id_) {
      throw InvalidHandleError("handle does not belong to this pool");
    }
    std::lock_guard lock(mu_);
    if (h.id_ == 0 || !live_.count(h.id_)) {
      throw InvalidHandleError("use of a freed or foreign cache handle");
    }
  }

 private:
  static std::uint32_t next_pool_id() {
    static std::atomic<std::uint32_t> next{1};
    return next++;
  }

  std::uint32_t take_locked() {
    const std::uint32_t b = free_.back();
    free_.pop_back();
    refcount_[b] = 1;
    return b;
  }

  std::size_t offset(std::uint32_t block, std::size_t layer,
                     std::size_t slot) const {
    return ((static_cast<std::size_t>(block) * n_layers_ + layer) *
                block_size_ +
            slot) *
           dim_;
  }

  void copy_block(std::uint32_t from, std::uint32_t to) {
    const std::size_t len = n_layers_ * block_size_ * dim_;
    std::copy_n(keys_.begin() + static_cast<std::ptrdiff_t>(offset(from, 0, 0)),
                len, keys_.begin() + static_cast<std::ptrdiff_t>(offset(to, 0, 0)));
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(offset(from, 0, 0)),
                len,
                values_.begin() + static_cast<std::ptrdiff_t>(offset(to, 0, 0)));
  }

  const T* row_ptr(const std::vector<T>& arena, const CacheHandle& h,
                   std::size_t layer, std::size_t pos) const {
    return arena.data() + offset(h.blocks_[pos / block_size_], layer,
                                 pos % block_size_);
  }
  T* mutable_row(std::vector<T>& arena, const CacheHandle& h,
                 std::size_t layer, std::size_t pos) {
    return arena.data() + offset(h.blocks_[pos / block_size_], layer,
                                 pos % block_size_);
  }

  std::size_t n_layers_;
  std::size_t dim_;
  std::size_t block_size_;
  std::size_t capacity_;
  std::uint32_t pool_id_;
  std::vector<T> keys_;
  std::vector<T> values_;
  std::vector<std::uint32_t> refcount_;
  std::vector<std::uint32_t> free_;
  std::unordered_set<std::uint64_t> live_;
  std::uint64_t next_handle_ = 1;
  mutable std::mutex mu_;
};

}  // namespace arvis
