// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor primitives. Every op checks shapes eagerly and
// throws DimensionError naming the offending shapes. Broadcasting is limited
// to leading batch dimensions of matmul; everything else must match exactly.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mravff/tensor.hpp"

namespace mravff::inline MRAVFF_ABI {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
/// Elementwise max; on ties the gradient goes to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Sum / mean over all elements, shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// [.., m, n] -> [.., n, m]
Tensor transpose_last2(const Tensor& x);

/// Concatenation along dimension 0 (the channel dimension for [C, T]).
Tensor concat(std::span<const Tensor> parts);

/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

/// [C, T] scaled per column by w[T].
Tensor mul_columns(const Tensor& x, const Tensor& w);

/// [.., m, k] x [.., k, n]. Batch dims must be equal, or one operand rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax over the last dimension. When `valid` is given, only the first
/// `valid` entries of each row take part (the rest behave as -inf logits
/// and receive probability exactly 0).
Tensor softmax_lastdim(const Tensor& x, std::optional<std::size_t> valid = std::nullopt);

/// x[C_in, T], w[C_out, C_in, k], bias[C_out] -> [C_out, T_out]; zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);

std::size_t conv1d_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                           std::size_t padding);

/// x[C, T]; padding behaves as -inf. Gradient goes to the first maximal element.
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Normalizes the last dimension, then applies gamma/beta of shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps = real(1e-5));

}  // namespace mravff
