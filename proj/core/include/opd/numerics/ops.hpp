#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "opd/numerics/autodiff.hpp"

namespace opd {

// Differentiable primitives. Every operation validates shapes and throws
// DimensionError naming the offending shapes. No broadcasting happens except
// in add_row, which adds a length-n vector to every row of an m x n matrix.

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_bt(Var a, Var b);  // [m x k] * [n x k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var matrix, Var row);
Var sigmoid(Var x);
Var tanh(Var x);
/// Max-shifted softmax along `axis`.
Var softmax(Var x, std::size_t axis);
Var sum(Var x);
Var row_sum(Var x);
Var mean_rows(Var x);
Var rowwise_dot(Var a, Var b);
/// Rows of `table` at `indices`; an empty index list throws EmptySourceError.
Var gather_rows(Var table, std::span<const std::int32_t> indices);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
/// Clamp into [lo, hi]; the gradient is zero where the input was clipped.
Var clamp(Var x, double lo, double hi);

/// Same-length 1-D convolution over token positions. kernels is
/// [channels x width x embed_dim], bias is [channels]; width must be odd.
Var conv1d(Var embedded, Var kernels, Var bias);

inline constexpr double kProbabilityEpsilon = 1e-12;

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
Var bce_loss(Var probs, Var targets);

struct AttentionWeights {
  std::vector<Var> query;  // per head [d_query x d_head]
  std::vector<Var> key;    // per head [d_source x d_head]
  std::vector<Var> value;  // per head [d_source x d_head]
  Var output;              // [heads * d_head x d_out]
};

/// Scaled dot-product attention per head, heads concatenated and projected by
/// the shared output matrix. A tensor cannot have zero rows, so an empty source
/// surfaces earlier as EmptySourceError from gather_rows.
Var multi_head_attention(Var queries, Var keys, Var values, const AttentionWeights& w);

}  // namespace opd
