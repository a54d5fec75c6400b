#pragma once

#include <span>

#include "ebt/autodiff/tape.hpp"

/// Differentiable primitives. Every op checks shapes (ShapeError naming both
/// operands) and rejects non-finite results (NumericalError). Matrices are
/// rank 2; scalars are shape {1}.
namespace ebt::ad {

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// X + 1·bᵀ, b has cols(X) elements.
Var add_bias(Var x, Var b);
/// X · diag(g), g has cols(X) elements.
Var mul_cols(Var x, Var g);
Var relu(Var x);
/// Row-wise softmax with max subtraction.
Var softmax_rows(Var x);
/// Subtracts each row's mean.
Var center_rows(Var x);
/// Rows with norm above radius are scaled back onto the sphere.
Var clip_rows_to_ball(Var x, double radius);
Var sum_sq(Var x);
Var sum(Var x);
Var dot(Var x, Var y);
Var scale(Var x, double c);
Var concat_cols(std::span<const Var> parts);

}  // namespace ebt::ad
