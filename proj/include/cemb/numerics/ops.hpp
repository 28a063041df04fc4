#ifndef CEMB_NUMERICS_OPS_HPP_
#define CEMB_NUMERICS_OPS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cemb/numerics/tensor.hpp"

// Differentiable kernels. Row-wise ops treat a tensor as rows() x cols(),
// flattening every leading axis. Each output row depends only on the matching
// input rows and a fixed accumulation order, so a row computes bit-identically
// no matter how many other rows share the call.
namespace cemb::numerics {

// a: [..., k], b: [k, n] -> [..., n]. dA = dC * B^T, dB = A^T * dC.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);
// Exact (erf) form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Softmax over the last axis with max subtraction. NaN input is rejected.
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& x);

// x / sqrt(mean(x^2) + eps) * gain over the last axis. eps == 0 is accepted
// for exact checks; training uses eps > 0.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps);

// Rotary position embedding. Each row r is rotated by positions[r]; within a
// chunk of head_dim columns, pair (2i, 2i+1) turns by position * base^(-2i/head_dim).
// head_dim == 0 treats the whole row as one chunk. Positions are real so a
// single rotation can be probed at an arbitrary angle; the encoder passes
// token indices.
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const double> positions,
                     std::size_t head_dim = 0, double base = 10000.0);

// Row lookup: out[r] = table[ids[r]].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids);

// Which key rows each query row may attend to: the half-open range
// [key_begin[r], key_end[r]) minus every key whose key_masked flag is set.
struct AttentionPattern {
  std::vector<std::size_t> key_begin;
  std::vector<std::size_t> key_end;
  std::vector<std::uint8_t> key_masked;  // one flag per key row, or empty

  // Sequences of `length` rows packed back to back; pad rows are masked as
  // keys. causal restricts row i of a sequence to keys j <= i.
  static AttentionPattern self(std::size_t batch, std::size_t length,
                               std::span<const std::uint8_t> pad, bool causal);
  // Every query row sees all key rows.
  static AttentionPattern dense(std::size_t n_queries, std::size_t n_keys);
};

// Multi-head scaled dot-product attention. q: [Nq, d], k and v: [Nk, d],
// d split into n_heads chunks. A query row with no visible key yields zeros.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionPattern& pattern, std::size_t n_heads);

// x viewed as [groups * group_size, d]; averages the rows of each group whose
// keep flag is set. Returns [groups, d]. A group with nothing kept is an error.
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, std::size_t groups, std::span<const std::uint8_t> keep);

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x);

// Entry (i, j) = <q_i, d_j> / (|q_i| |d_j|). Zero-norm rows are rejected.
template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& q, const Tensor<T>& d);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// max(x) + log(sum(exp(x - max(x)))).
template <typename T>
T stable_logsumexp(std::span<const T> x);

}  // namespace cemb::numerics

#endif  // CEMB_NUMERICS_OPS_HPP_
