#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "telme/attention.hpp"
#include "telme/error.hpp"
#include "telme/gradcheck.hpp"
#include "telme/numerics.hpp"

using namespace telme;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <class F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected telme::Error";
  return ErrorKind::CheckFailure;
}

}  // namespace

TEST(Matrix, RejectsWrongLengthAndNonFinite) {
  EXPECT_EQ(error_kind_of([] { Matrix(2, 2, std::vector<double>{1, 2, 3}); }), ErrorKind::InvalidInput);
  EXPECT_EQ(error_kind_of([] { Matrix(1, 2, std::vector<double>{1, NAN}); }), ErrorKind::InvalidInput);
  EXPECT_EQ(error_kind_of([] { Matrix(1, 1, std::vector<double>{INFINITY}); }), ErrorKind::InvalidInput);
}

TEST(Matrix, MatmulVariantsAgree) {
  std::mt19937_64 rng(3);
  Matrix a(3, 4, random_vector(rng, 12));
  Matrix b(4, 2, random_vector(rng, 8));
  const Matrix ab = matmul(a, b);
  const Matrix ab2 = matmul_transposed(a, b.transposed());
  const Matrix ab3 = transposed_matmul(a.transposed(), b);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    EXPECT_NEAR(ab.flat()[i], ab2.flat()[i], 1e-12);
    EXPECT_NEAR(ab.flat()[i], ab3.flat()[i], 1e-12);
  }
}

TEST(SoftmaxTemp, Examples) {
  auto u = softmax_temp(std::vector<double>{0, 0, 0}, 1.0);
  for (double p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  // Frozen from tests/oracles/oracle.py
  auto a = softmax_temp(std::vector<double>{1, 0}, 1.0);
  EXPECT_NEAR(a[0], 0.73105857863000488, 1e-6);
  EXPECT_NEAR(a[1], 0.26894142136999512, 1e-6);
  auto b = softmax_temp(std::vector<double>{1, 0}, 2.0);
  EXPECT_NEAR(b[0], 0.62245933120185456, 1e-6);
  EXPECT_NEAR(b[1], 0.37754066879814544, 1e-6);
}

TEST(SoftmaxTemp, Errors) {
  EXPECT_EQ(error_kind_of([] { softmax_temp(std::vector<double>{1, 2}, 0.0); }), ErrorKind::InvalidParameter);
  EXPECT_EQ(error_kind_of([] { softmax_temp(std::vector<double>{1, 2}, -1.0); }), ErrorKind::InvalidParameter);
  EXPECT_EQ(error_kind_of([] { softmax_temp(std::vector<double>{1, NAN}, 1.0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(error_kind_of([] { softmax_temp(std::vector<double>{}, 1.0); }), ErrorKind::InvalidInput);
}

TEST(SoftmaxTemp, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> tau(0.1, 5.0), shift(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    auto z = random_vector(rng, 1 + trial % 9, 10.0);
    const double t = tau(rng);
    auto p = softmax_temp(z, t);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    const double c = shift(rng);
    for (double& v : z) v += c;
    auto q = softmax_temp(z, t);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(SoftmaxTemp, LargeLogitsStayFinite) {
  auto p = softmax_temp(std::vector<double>{1e6, 0.0, -1e6}, 1.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[2], 0.0);
}

TEST(PearsonDistance, Examples) {
  const std::vector<double> u = {0.2, 0.5, 0.3};
  EXPECT_NEAR(pearson_distance(u, u), 0.0, 1e-15);
  EXPECT_NEAR(pearson_distance(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), 2.0, 1e-15);
  EXPECT_NEAR(pearson_distance(std::vector<double>{0.5, 0.3, 0.2}, std::vector<double>{0.4, 0.4, 0.2}),
              0.24407105398154559, 1e-9);
}

TEST(PearsonDistance, ConstantVectorConvention) {
  EXPECT_DOUBLE_EQ(pearson_distance(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), 1.0);
  auto g = pearson_distance_grad(std::vector<double>{0.25, 0.25}, std::vector<double>{0.1, 0.9});
  EXPECT_DOUBLE_EQ(g.value, 1.0);
  for (double v : g.du) EXPECT_EQ(v, 0.0);
}

TEST(PearsonDistance, Errors) {
  EXPECT_EQ(error_kind_of([] { pearson_distance(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}); }),
            ErrorKind::InvalidInput);
  EXPECT_EQ(error_kind_of([] { pearson_distance(std::vector<double>{1}, std::vector<double>{1}); }),
            ErrorKind::InvalidInput);
}

TEST(PearsonDistance, SymmetryAffineAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.1, 10.0), offset(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7;
    auto u = random_vector(rng, n);
    auto v = random_vector(rng, n);
    const double d = pearson_distance(u, v);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    EXPECT_NEAR(pearson_distance(v, u), d, 1e-12);

    const double a = scale(rng), b = offset(rng);
    std::vector<double> pos(u), neg(u);
    for (double& x : pos) x = a * x + b;
    for (double& x : neg) x = -a * x + b;
    EXPECT_NEAR(pearson_distance(pos, v), d, 1e-9);
    EXPECT_NEAR(pearson_distance(neg, v), 2.0 - d, 1e-9);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pu(n), pv(n);
    for (std::size_t i = 0; i < n; ++i) {
      pu[i] = u[perm[i]];
      pv[i] = v[perm[i]];
    }
    EXPECT_NEAR(pearson_distance(pu, pv), d, 1e-12);
  }
}

TEST(KlDivergence, Examples) {
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}), 0.0, 1e-15);
  EXPECT_NEAR(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), 0.69314718055994531, 1e-9);
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.7, 0.3}, std::vector<double>{0.4, 0.6}), 0.18378689738681219, 1e-9);
  EXPECT_EQ(error_kind_of([] { kl_divergence(std::vector<double>{1}, std::vector<double>{0.5, 0.5}); }),
            ErrorKind::InvalidInput);
}

TEST(KlDivergence, SelfIsZeroAndFloorKeepsFinite) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = softmax_temp(random_vector(rng, 2 + trial % 6, 3.0), 1.0);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  }
  const double big = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_GT(big, 10.0);
}

TEST(L2Norm, Examples) {
  EXPECT_EQ(l2_norm(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_EQ(l2_norm(std::vector<double>{3, 4}), 5.0);
  EXPECT_EQ(l2_norm(std::vector<double>{1, 1, 1, 1}), 2.0);
}

// Finite-difference checks of the primitive backward functions.
TEST(PrimitiveGradients, PearsonSoftmaxKlGelu) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 3 + seed % 5;
    const auto v = random_vector(rng, n);
    const auto w = random_vector(rng, n);
    const double tau = 0.5 + static_cast<double>(seed % 4);
    const auto p = softmax_temp(random_vector(rng, n), 1.0);

    auto pearson = [&](std::span<const double> u) {
      auto g = pearson_distance_grad(u, v);
      return DualValue(g.value, g.du, u.size());
    };
    EXPECT_LE(check_gradient(pearson, random_vector(rng, n)).max_rel_error, 1e-4) << "seed " << seed;

    // L = w · softmax(z/τ)
    auto soft = [&](std::span<const double> z) {
      auto s = softmax_temp(z, tau);
      return DualValue(dot(w, s), softmax_temp_backward(s, w, tau), z.size());
    };
    EXPECT_LE(check_gradient(soft, random_vector(rng, n, 2.0)).max_rel_error, 1e-4) << "seed " << seed;

    // L = KL(p ‖ softmax(z))
    auto kl = [&](std::span<const double> z) {
      auto q = softmax_temp(z, 1.0);
      return DualValue(kl_divergence(p, q), softmax_temp_backward(q, kl_divergence_grad_q(p, q), 1.0), z.size());
    };
    EXPECT_LE(check_gradient(kl, random_vector(rng, n)).max_rel_error, 1e-4) << "seed " << seed;

    auto act = [&](std::span<const double> x) {
      Matrix m(1, x.size(), std::vector<double>(x.begin(), x.end()));
      Matrix ones(1, x.size(), 1.0);
      const Matrix y = gelu(m);
      const Matrix dx = gelu_backward(m, ones);
      return DualValue(std::accumulate(y.flat().begin(), y.flat().end(), 0.0),
                       std::vector<double>(dx.flat().begin(), dx.flat().end()), x.size());
    };
    EXPECT_LE(check_gradient(act, random_vector(rng, n, 2.0)).max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Attention, IdenticalTokensAverageToInput) {
  const auto params = AttentionParams::identity(3, 1);
  Matrix tokens = Matrix::from_rows({{0.3, -1.2, 2.0}, {0.3, -1.2, 2.0}});
  Matrix out = multi_head_self_attention(tokens, params);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, c), tokens(0, c), 1e-15);
}

TEST(Attention, ShapeContract) {
  std::mt19937_64 rng(1);
  const auto params = AttentionParams::glorot(8, 4, rng);
  Matrix out = multi_head_self_attention(Matrix(2, 8, random_vector(rng, 16)), params);
  EXPECT_EQ(out.rows(), 2u);
  EXPECT_EQ(out.cols(), 8u);
  EXPECT_EQ(error_kind_of([] { AttentionParams::zeros(8, 3); }), ErrorKind::Configuration);
}

TEST(Attention, MatchesStepByStepOracle) {
  auto params = AttentionParams::zeros(2, 1);
  params.wq = Matrix::from_rows({{0.5, -0.2}, {0.1, 0.3}});
  params.wk = Matrix::from_rows({{0.4, 0.1}, {-0.3, 0.2}});
  params.wv = Matrix::from_rows({{1.0, 0.5}, {-0.5, 0.25}});
  params.wo = Matrix::from_rows({{0.2, -0.1}, {0.3, 0.7}});
  Matrix out = multi_head_self_attention(Matrix::from_rows({{1.0, 2.0}, {-1.0, 0.5}}), params);
  EXPECT_NEAR(out(0, 0), 0.081305148401160391, 1e-9);
  EXPECT_NEAR(out(0, 1), 0.39837672653950961, 1e-9);
  EXPECT_NEAR(out(1, 0), 0.031296715747242416, 1e-9);
  EXPECT_NEAR(out(1, 1), 0.36673873853396967, 1e-9);
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t t = 1 + seed % 3, d = 4, heads = seed % 2 ? 2 : 1;
    const auto params = AttentionParams::glorot(d, heads, rng);
    const Matrix probe(t, d, random_vector(rng, t * d));
    auto fn = [&](std::span<const double> x) {
      AttentionCache cache;
      Matrix tokens(t, d, std::vector<double>(x.begin(), x.end()));
      Matrix out = multi_head_self_attention(tokens, params, &cache);
      double value = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) value += out.flat()[i] * probe.flat()[i];
      AttentionParams grads = AttentionParams::zeros(d, heads);
      Matrix dx = multi_head_self_attention_backward(cache, params, probe, grads);
      return DualValue(value, std::vector<double>(dx.flat().begin(), dx.flat().end()), x.size());
    };
    EXPECT_LE(check_gradient(fn, random_vector(rng, t * d)).max_rel_error, 1e-4) << "seed " << seed;
  }
}
