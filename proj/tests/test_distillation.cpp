#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "telme/distillation.hpp"
#include "telme/error.hpp"
#include "telme/gradcheck.hpp"

using namespace telme;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.flat()) v = d(rng);
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
  return out;
}

Matrix permute_cols(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j) out(i, j) = m(i, perm[j]);
  return out;
}

std::vector<std::size_t> random_perm(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::CheckFailure;
}

}  // namespace

TEST(ResponseLoss, IdenticalInputsGiveZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    Matrix z = random_matrix(rng, 4, 5, 2.0);
    EXPECT_NEAR(response_loss(z, z, 2.0), 0.0, 1e-9);
  }
}

TEST(ResponseLoss, FrozenOracleValues) {
  const Matrix zs = Matrix::from_rows({{1, 0, -1}, {0, 1, 0}});
  const Matrix zt = Matrix::from_rows({{2, 0, -2}, {0, 2, 0}});
  EXPECT_NEAR(response_loss(zs, zt, 2.0), 0.014444460189662888, 1e-9);

  // Positive affine map of the teacher logits is not a zero-loss point.
  const Matrix t3 = Matrix::from_rows({{0.3, -0.5, 1.2}, {1.0, 0.4, -0.8}, {-0.6, 0.9, 0.1}});
  Matrix s3 = t3;
  for (double& v : s3.flat()) v = 2.0 * v + 0.5;
  EXPECT_NEAR(response_loss(s3, t3, 1.0), 0.026375137653573246, 1e-9);
}

TEST(ResponseLoss, Errors) {
  EXPECT_EQ(kind_of([] { response_loss(Matrix(1, 3), Matrix(1, 3), 1.0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([] { response_loss(Matrix(3, 1), Matrix(3, 1), 1.0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([] { response_loss(Matrix(2, 3), Matrix(3, 2), 1.0); }), ErrorKind::InvalidInput);
}

TEST(ResponseLoss, StationaryAtTeacher) {
  std::mt19937_64 rng(2);
  Matrix z = random_matrix(rng, 5, 4, 2.0);
  auto g = response_loss_grad(z, z, 4.0);
  EXPECT_LE(l2_norm(g.grad.flat()), 1e-6);
}

TEST(FeatureLoss, ZeroCases) {
  std::mt19937_64 rng(3);
  Matrix f = random_matrix(rng, 5, 6);
  EXPECT_NEAR(feature_loss(f, f, 1.0), 0.0, 1e-9);
  Matrix scaled = f;
  for (double& v : scaled.flat()) v *= 3.7;
  EXPECT_NEAR(feature_loss(scaled, f, 1.0), 0.0, 1e-9);
}

TEST(FeatureLoss, FrozenOracleValue) {
  const double s = 1.0 / std::sqrt(2.0);
  const Matrix fs = Matrix::from_rows({{s, s}, {0, 1}});
  const Matrix ft = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(feature_loss(fs, ft, 1.0), 0.055472035835863677, 1e-9);
}

TEST(FeatureLoss, ZeroRowIsDegenerate) {
  const Matrix ok = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix bad = Matrix::from_rows({{0, 0}, {0, 1}});
  EXPECT_EQ(kind_of([&] { feature_loss(bad, ok, 1.0); }), ErrorKind::DegenerateRepresentation);
  EXPECT_EQ(kind_of([&] { feature_loss(ok, bad, 1.0); }), ErrorKind::DegenerateRepresentation);
}

TEST(DistillationLosses, PermutationRotationAndScaleInvariance) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0.2, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 3 + trial % 4, c = 3 + trial % 3, d = 4;
    Matrix zs = random_matrix(rng, b, c, 2.0), zt = random_matrix(rng, b, c, 2.0);
    Matrix fs = random_matrix(rng, b, d), ft = random_matrix(rng, b, d);
    const double r = response_loss(zs, zt, 2.0);
    const double f = feature_loss(fs, ft, 1.0);

    auto rp = random_perm(rng, b);
    EXPECT_NEAR(response_loss(permute_rows(zs, rp), permute_rows(zt, rp), 2.0), r, 1e-9);
    EXPECT_NEAR(feature_loss(permute_rows(fs, rp), permute_rows(ft, rp), 1.0), f, 1e-9);
    auto cp = random_perm(rng, c);
    EXPECT_NEAR(response_loss(permute_cols(zs, cp), permute_cols(zt, cp), 2.0), r, 1e-9);

    Matrix fs2 = fs, ft2 = ft;
    for (std::size_t i = 0; i < b; ++i) {
      const double a = pos(rng), a2 = pos(rng);
      for (double& v : fs2.row(i)) v *= a;
      for (double& v : ft2.row(i)) v *= a2;
    }
    EXPECT_NEAR(feature_loss(fs2, ft, 1.0), f, 1e-9);
    EXPECT_NEAR(feature_loss(fs, ft2, 1.0), f, 1e-9);

    // Same plane rotation applied to every row of both inputs.
    const double angle = pos(rng);
    Matrix rot(d, d);
    for (std::size_t k = 0; k < d; ++k) rot(k, k) = 1.0;
    rot(0, 0) = std::cos(angle); rot(0, 1) = -std::sin(angle);
    rot(1, 0) = std::sin(angle); rot(1, 1) = std::cos(angle);
    EXPECT_NEAR(feature_loss(matmul(fs, rot), matmul(ft, rot), 1.0), f, 1e-9);

    EXPECT_GE(r, -1e-12);
    EXPECT_GE(f, -1e-12);
  }
}

TEST(StudentLoss, Examples) {
  EXPECT_EQ(student_loss(1.25, 2.0, 3.0, KDConfig{0.0, 0.0, 4.0, 1.0}), 1.25);
  EXPECT_EQ(student_loss(1.0, 2.0, 3.0, KDConfig{1.0, 1.0, 4.0, 1.0}), 6.0);
  EXPECT_NEAR(student_loss(1.0, 2.0, 3.0, KDConfig{0.1, 1.0, 4.0, 1.0}), 4.2, 1e-15);
}

TEST(StudentObjective, NoTeacherGradientAndTeacherUntouched) {
  std::mt19937_64 rng(5);
  const Matrix zt = random_matrix(rng, 6, 4, 2.0);
  const Matrix ft = random_matrix(rng, 6, 8);
  const Matrix zt_copy = zt, ft_copy = ft;
  DistillBatch batch{random_matrix(rng, 6, 4), &zt, random_matrix(rng, 6, 8), &ft, {0, 1, 2, 3, 0, 1}};
  auto obj = student_objective(batch, KDConfig{1.0, 1.0, 4.0, 1.0});
  EXPECT_EQ(zt, zt_copy);
  EXPECT_EQ(ft, ft_copy);
  EXPECT_NEAR(obj.total, obj.cls + obj.response + obj.feature, 1e-12);
  EXPECT_GT(obj.response, 0.0);
  EXPECT_GT(obj.feature, 0.0);

  // α = β = 0 is plain cross-entropy.
  auto ce_only = student_objective(batch, KDConfig{0.0, 0.0, 4.0, 1.0});
  EXPECT_EQ(ce_only.total, ce_only.cls);
  for (double v : ce_only.dreprs.flat()) EXPECT_EQ(v, 0.0);
}

class LossGradient : public ::testing::TestWithParam<LossId> {};

TEST_P(LossGradient, MatchesCentralDifferencesOver20Seeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LE(gradient_check(GetParam(), seed), 1e-4) << to_string(GetParam()) << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, LossGradient,
                         ::testing::Values(LossId::CrossEntropy, LossId::ResponseLoss, LossId::FeatureLoss,
                                           LossId::FusedForward),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(GradientCheck, UnknownLossId) {
  EXPECT_EQ(kind_of([] { parse_loss_id("hinge"); }), ErrorKind::Configuration);
}
