#include "telme/attention.hpp"

#include <cmath>

#include "telme/error.hpp"
#include "telme/init.hpp"

namespace telme {

namespace {

void check_heads(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    fail(ErrorKind::Configuration, "attention dim " + std::to_string(dim) +
                                       " is not divisible by heads " + std::to_string(heads));
  }
}

}  // namespace

AttentionParams AttentionParams::zeros(std::size_t dim, std::size_t heads) {
  check_heads(dim, heads);
  AttentionParams p;
  p.heads = heads;
  for (Matrix* w : {&p.wq, &p.wk, &p.wv, &p.wo}) *w = Matrix(dim, dim);
  for (Matrix* b : {&p.bq, &p.bv, &p.bo}) *b = Matrix(1, dim);
  return p;
}

AttentionParams AttentionParams::identity(std::size_t dim, std::size_t heads) {
  AttentionParams p = zeros(dim, heads);
  for (Matrix* w : {&p.wq, &p.wk, &p.wv, &p.wo})
    for (std::size_t i = 0; i < dim; ++i) (*w)(i, i) = 1.0;
  return p;
}

AttentionParams AttentionParams::glorot(std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
  AttentionParams p = zeros(dim, heads);
  for (Matrix* w : {&p.wq, &p.wk, &p.wv, &p.wo}) glorot_uniform(*w, rng);
  return p;
}

Matrix multi_head_self_attention(const Matrix& tokens, const AttentionParams& params, AttentionCache* cache) {
  const std::size_t d = params.dim();
  check_heads(d, params.heads);
  if (tokens.rows() == 0) fail(ErrorKind::InvalidInput, "attention over an empty sequence");
  if (tokens.cols() != d)
    fail(ErrorKind::InvalidInput, "attention token dim " + std::to_string(tokens.cols()) + " != " + std::to_string(d));

  const std::size_t t = tokens.rows();
  const std::size_t dh = d / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix q = linear_forward(tokens, params.wq, params.bq);
  Matrix k = matmul_transposed(tokens, params.wk);
  Matrix v = linear_forward(tokens, params.wv, params.bv);
  Matrix concat(t, d);
  std::vector<Matrix> weights;
  weights.reserve(params.heads);

  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t lo = h * dh;
    Matrix a(t, t);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> scores(t);
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = lo; c < lo + dh; ++c) s += q(i, c) * k(j, c);
        scores[j] = s * scale;
      }
      auto p = softmax_temp(scores, 1.0);
      for (std::size_t j = 0; j < t; ++j) a(i, j) = p[j];
      for (std::size_t c = lo; c < lo + dh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < t; ++j) s += p[j] * v(j, c);
        concat(i, c) = s;
      }
    }
    weights.push_back(std::move(a));
  }

  Matrix out = linear_forward(concat, params.wo, params.bo);
  if (cache) {
    cache->tokens = tokens;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
    cache->concat = std::move(concat);
  }
  return out;
}

Matrix multi_head_self_attention_backward(const AttentionCache& cache, const AttentionParams& params,
                                          const Matrix& dout, AttentionParams& grads) {
  const std::size_t d = params.dim();
  const std::size_t t = cache.tokens.rows();
  const std::size_t dh = d / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dconcat = linear_backward(cache.concat, params.wo, dout, grads.wo, grads.bo);
  Matrix dq(t, d), dk(t, d), dv(t, d);

  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t lo = h * dh;
    const Matrix& a = cache.weights[h];
    // dA = dO_h · V_hᵀ, dV_h = Aᵀ · dO_h
    Matrix da(t, t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = lo; c < lo + dh; ++c) s += dconcat(i, c) * cache.v(j, c);
        da(i, j) = s;
      }
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t c = lo; c < lo + dh; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < t; ++i) s += a(i, j) * dconcat(i, c);
        dv(j, c) += s;
      }
    // softmax backward per row, then the scaled score products.
    for (std::size_t i = 0; i < t; ++i) {
      auto ds = softmax_temp_backward(a.row(i), da.row(i), 1.0);
      for (std::size_t j = 0; j < t; ++j) {
        const double g = ds[j] * scale;
        for (std::size_t c = lo; c < lo + dh; ++c) {
          dq(i, c) += g * cache.k(j, c);
          dk(j, c) += g * cache.q(i, c);
        }
      }
    }
  }

  Matrix dx = linear_backward(cache.tokens, params.wq, dq, grads.wq, grads.bq);
  add_inplace(grads.wk, transposed_matmul(dk, cache.tokens));
  add_inplace(dx, matmul(dk, params.wk));
  add_inplace(dx, linear_backward(cache.tokens, params.wv, dv, grads.wv, grads.bv));
  return dx;
}

}  // namespace telme
