#pragma once

#include <vector>

#include "nav/tensor.hpp"

namespace nav {

// ---- elementwise ----
template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> gelu(const Tensor<T>& x);
template <class T> Tensor<T> tanh_op(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid_op(const Tensor<T>& x);
template <class T> Tensor<T> exp_op(const Tensor<T>& x);
template <class T> Tensor<T> square(const Tensor<T>& x);
template <class T> Tensor<T> neg(const Tensor<T>& x);
template <class T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);
template <class T> Tensor<T> clamp_op(const Tensor<T>& x, T lo, T hi);
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise minimum; gradient follows the selected branch (ties -> a).
template <class T> Tensor<T> min_elem(const Tensor<T>& a, const Tensor<T>& b);
/// y[i] = x[i] + b[i % b.numel()]; broadcast over leading dims.
template <class T> Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& b);

// ---- reductions ----
template <class T> Tensor<T> sum_all(const Tensor<T>& x);
template <class T> Tensor<T> mean_all(const Tensor<T>& x);
/// [..., D] -> [...]: sum over the last dimension.
template <class T> Tensor<T> sum_lastdim(const Tensor<T>& x);

// ---- linear algebra ----
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x [N,K] * w[M,K]^T + b[M] -> [N,M]. Bias optional (pass undefined tensor).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
/// Cross-correlation, stride 1, square odd kernel, zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int padding);

// ---- normalization / softmax ----
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int num_groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);
template <class T> Tensor<T> softmax_lastdim(const Tensor<T>& x);
template <class T> Tensor<T> log_softmax_lastdim(const Tensor<T>& x);

// ---- attention / recurrence ----
/// Multi-head self-attention over packed projections qkv [B,L,3D] -> [B,L,D].
template <class T> Tensor<T> multihead_attention(const Tensor<T>& qkv, int num_heads);
/// One LSTM step. hc packs (h, c) as [N,2H]; gate order (i, f, g, o).
template <class T>
Tensor<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& hc,
                    const Tensor<T>& w_ih, const Tensor<T>& w_hh,
                    const Tensor<T>& b);

// ---- shape / indexing ----
template <class T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
/// Slice part `index` of `parts` equal chunks of the last dimension.
template <class T> Tensor<T> chunk_lastdim(const Tensor<T>& x, int parts, int index);
template <class T> Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& xs);
/// Row gather: out[i] = table[idx[i]]; also serves as embedding lookup.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& idx);
/// [N,3,H,W] -> [N,L,P] with P = 3*p*p, pixel-major/channel-last patch layout.
template <class T> Tensor<T> patchify(const Tensor<T>& x, int patch);
template <class T> Tensor<T> unpatchify(const Tensor<T>& x, int patch, int image);
/// [N,L,D] row-major tokens -> [N,D,s,s] grid, s = sqrt(L).
template <class T> Tensor<T> tokens_to_grid(const Tensor<T>& x);
template <class T> Tensor<T> grid_to_tokens(const Tensor<T>& x);
/// Select a subset of tokens per sample: [N,L,D] -> [N,K,D].
template <class T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<int>& idx);
/// Place `visible` tokens at their indices and `mask_token` elsewhere.
template <class T>
Tensor<T> assemble_tokens(const Tensor<T>& visible, const Tensor<T>& mask_token,
                          const std::vector<int>& visible_idx, int total);

// ---- losses ----
/// Mean squared error over masked patches only. Targets are constants.
/// When normalize, each target patch is standardized before the comparison.
template <class T>
Tensor<T> masked_patch_mse(const Tensor<T>& pred, const Tensor<T>& target,
                           const std::vector<int>& masked_idx, bool normalize,
                           T eps = T(1e-6));
/// Mean cross-entropy over rows of logits.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);
/// Per-row log-probability of the chosen action: [N,A] -> [N].
template <class T>
Tensor<T> logp_actions(const Tensor<T>& logits, const std::vector<int>& actions);

// ---- non-differentiable helpers ----
template <class T> std::vector<T> softmax_row(const T* logits, int n);
template <class T> int argmax_row(const T* v, int n);

}  // namespace nav
