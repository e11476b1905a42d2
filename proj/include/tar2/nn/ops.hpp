#pragma once

// Differentiable primitives over 2-D tensors. Each function records one node
// (or a short fixed chain) on the tape of its inputs.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tar2/nn/autograd.hpp"

namespace tar2::nn {

inline constexpr double kMaskedLogit = -1e30;

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// a [m,n] + b [1,n]
Var add_row(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);

Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// Normalizes each row to zero mean / unit variance, then gain * x + bias with
// gain, bias of shape [1,n].
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-10);

// Rows of `table` selected by `indices` (embedding lookup / gather).
Var gather_rows(const Var& table, std::span<const std::size_t> indices);
inline Var embed_lookup(const Var& table, std::span<const std::size_t> indices) {
  return gather_rows(table, indices);
}
// out[r] = a[r, cols[r]] as an [m,1] column.
Var pick(const Var& a, std::span<const std::size_t> cols);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

Var sum(const Var& a);       // [1,1]
Var mean(const Var& a);      // [1,1]
Var sum_rows(const Var& a);  // [m,1], sum over columns of each row
Var sum_cols(const Var& a);  // [1,n], sum over rows of each column

Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// Per-row cross-entropy [m,1] of `logits` against class indices, or against
// target distributions given as an [m,k] tensor.
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);
Var cross_entropy(const Var& logits, const Tensor& target_probs);
// Elementwise (a - b)^2.
Var squared_error(const Var& a, const Var& b);

// Inverted dropout. Identity when rate == 0.
Var dropout(const Var& a, double rate, std::mt19937_64& rng);

// softmax(Q K^T / sqrt(d) + mask) V for one sequence. `mask` is additive,
// shape [q,k]; pass an empty tensor for no mask.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const Tensor& mask = {});

// Multi-head attention restricted to groups of rows. Row r attends to the rows
// of its own group whose `key_active` flag is set; rows in no group, and rows
// whose group has no active key, produce zeros. Q, K, V are [M,d] with d
// divisible by `heads`; heads use contiguous column slices.
struct AttentionGroups {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::uint8_t> key_active;  // length M
};
Var grouped_attention(const Var& q, const Var& k, const Var& v, const AttentionGroups& groups, std::size_t heads);

}  // namespace tar2::nn
