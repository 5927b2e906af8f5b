#pragma once

#include <cstddef>
#include <random>

#include "telme/numerics.hpp"

namespace telme {

/// Multi-head self-attention over a short token sequence (T×d). Projections
/// follow the affine convention y = x·Wᵀ + b; no causal mask. Keys carry no
/// bias: it would shift every score of a query equally and cancel in softmax.
struct AttentionParams {
  std::size_t heads = 1;
  Matrix wq, bq, wk, wv, bv, wo, bo;

  static AttentionParams zeros(std::size_t dim, std::size_t heads);
  static AttentionParams identity(std::size_t dim, std::size_t heads);
  static AttentionParams glorot(std::size_t dim, std::size_t heads, std::mt19937_64& rng);

  std::size_t dim() const noexcept { return wq.rows(); }

  template <class F>
  void for_each_tensor(F&& f) {
    f("attn.wq", wq); f("attn.bq", bq);
    f("attn.wk", wk);
    f("attn.wv", wv); f("attn.bv", bv);
    f("attn.wo", wo); f("attn.bo", bo);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("attn.wq", wq); f("attn.bq", bq);
    f("attn.wk", wk);
    f("attn.wv", wv); f("attn.bv", bv);
    f("attn.wo", wo); f("attn.bo", bo);
  }
};

struct AttentionCache {
  Matrix tokens, q, k, v;
  std::vector<Matrix> weights;  // per head, T×T
  Matrix concat;                // T×d, before output projection
};

Matrix multi_head_self_attention(const Matrix& tokens, const AttentionParams& params,
                                 AttentionCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/dtokens.
Matrix multi_head_self_attention_backward(const AttentionCache& cache, const AttentionParams& params,
                                          const Matrix& dout, AttentionParams& grads);

}  // namespace telme
