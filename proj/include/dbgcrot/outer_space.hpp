#pragma once

#include <vector>

#include "dbgcrot/sparse.hpp"

namespace dbgcrot {

// Paired outer bases with A U_i = C_i and [C_1 .. C_k] orthonormal. Blocks
// are ordered oldest first; widths may differ after rank drops.
template <typename Scalar>
struct OuterSpace {
  std::vector<BlockVector<Scalar>> u_blocks;
  std::vector<BlockVector<Scalar>> c_blocks;
  Index capacity = 0;

  Index block_count() const { return static_cast<Index>(c_blocks.size()); }

  Index width() const {
    Index w = 0;
    for (const auto& c : c_blocks) w += c.cols();
    return w;
  }

  BlockVector<Scalar> c_matrix(Index n) const { return concat(c_blocks, n); }
  BlockVector<Scalar> u_matrix(Index n) const { return concat(u_blocks, n); }

 private:
  static BlockVector<Scalar> concat(const std::vector<BlockVector<Scalar>>& blocks, Index n) {
    Index w = 0;
    for (const auto& b : blocks) w += b.cols();
    BlockVector<Scalar> out(n, w);
    Index at = 0;
    for (const auto& b : blocks) {
      out.middleCols(at, b.cols()) = b;
      at += b.cols();
    }
    return out;
  }
};

/// Drops the oldest (U, C) pairs until at most `capacity` remain.
template <typename Scalar>
OuterSpace<Scalar> truncate_outer(OuterSpace<Scalar> outer, Index capacity) {
  if (capacity < 0) throw UsageError("truncate_outer: capacity must be non-negative");
  const auto excess = outer.block_count() - capacity;
  if (excess > 0) {
    outer.u_blocks.erase(outer.u_blocks.begin(), outer.u_blocks.begin() + excess);
    outer.c_blocks.erase(outer.c_blocks.begin(), outer.c_blocks.begin() + excess);
  }
  outer.capacity = capacity;
  return outer;
}

}  // namespace dbgcrot
