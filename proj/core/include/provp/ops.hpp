#pragma once

#include <cstddef>
#include <span>

#include "provp/graph.hpp"

namespace provp {

/// Counts log() inputs that fell below the clamp floor.
struct ClampCounter {
  std::size_t count = 0;
};

// Linear algebra. Rank-1 operands are treated as a single row.
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// Adds a length-cols row vector to every row of a.
Var add_row(Var a, Var row);
/// Exact (erf) GELU.
Var gelu(Var a);
/// log(max(x, floor)); clamped entries get zero gradient and bump `counter`.
Var log(Var a, double floor = 1e-12, ClampCounter* counter = nullptr);

/// Row-wise layer normalization over the last axis with affine gamma/beta.
Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Softmax along `axis`, computed with max-subtraction.
Var softmax(Var x, std::size_t axis);
/// log(softmax(x)) without forming the probabilities first; finite for any
/// finite input.
Var log_softmax(Var x, std::size_t axis);
/// Scales each row (each vector, for rank 1) to unit Euclidean norm.
/// Throws DegenerateInputError on a zero-norm row.
Var l2_normalize(Var x);

// Structural.
Var concat(std::span<const Var> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);

// Reductions; results have shape {1}.
Var sum(Var a);
Var mean(Var a);

/// Copy of a's value with no gradient path back to a.
Var detach(Var a);

/// (1 - alpha) * a + alpha * b.
Var lerp(Var a, Var b, double alpha);

/// Multi-head scaled dot-product self-attention over `batch` stacked
/// sequences. `qkv` is (batch*tokens) x (3*width) laid out as [Q | K | V];
/// the result is (batch*tokens) x width with heads concatenated. Every token
/// attends to every token of its own sequence.
Var attention(Var qkv, std::size_t batch, std::size_t heads);

}  // namespace provp
