#pragma once

#include <vector>

#include "voxbox/partition.hpp"
#include "voxbox/tape.hpp"
#include "voxbox/tensor.hpp"

namespace voxbox {

// Elementwise. Binary ops broadcast extents of 1 (ranks are right-aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

/// Shape that `a` and `b` broadcast to; throws naming both shapes otherwise.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Scalar (shape [1]) reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Copies the block [offsets, offsets+extents) of `t`.
Tensor slice_view(const Tensor& t, const std::vector<std::int64_t>& offsets,
                  const std::vector<std::int64_t>& extents);

/// Writes each 5-D block (N,C,d,h,w) at its partition offset of a full
/// (N,C,D,H,W) tensor. `blocks[i]` belongs at `partition.offsets[i]`.
Tensor assemble(const std::vector<Tensor>& blocks, const Partition& partition);

/// Inverse of `assemble`: one slice_view per partition offset.
std::vector<Tensor> disassemble(const Tensor& full, const Partition& partition);

} // namespace voxbox
