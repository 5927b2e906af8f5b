#include "telme/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "telme/error.hpp"

namespace telme {

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, std::string(what) + ": non-finite entry");
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorKind::InvalidInput, "matrix data length " + std::to_string(data_.size()) +
                                      " does not match shape " + shape_string());
  }
  require_finite(data_, "matrix");
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) fail(ErrorKind::InvalidInput, "ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

DualValue::DualValue(double v, std::vector<double> g, std::size_t declared_params)
    : value(v), gradient(std::move(g)) {
  if (gradient.size() != declared_params) {
    fail(ErrorKind::InvalidInput, "gradient length does not match declared parameter count");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    fail(ErrorKind::InvalidInput, "matmul shape mismatch " + a.shape_string() + " * " + b.shape_string());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    fail(ErrorKind::InvalidInput, "matmul_transposed shape mismatch " + a.shape_string() + " * " +
                                      b.shape_string() + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Matrix transposed_matmul(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    fail(ErrorKind::InvalidInput, "transposed_matmul shape mismatch " + a.shape_string() + "^T * " +
                                      b.shape_string());
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

void add_inplace(Matrix& dst, const Matrix& src, double scale) {
  if (!dst.same_shape(src))
    fail(ErrorKind::InvalidInput, "add shape mismatch " + dst.shape_string() + " vs " + src.shape_string());
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != w.rows())
    fail(ErrorKind::InvalidInput, "bias shape " + b.shape_string() + " does not match weight " + w.shape_string());
  Matrix y = matmul_transposed(x, w);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b(0, c);
  }
  return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
  add_inplace(dw, transposed_matmul(dy, x));
  for (std::size_t r = 0; r < dy.rows(); ++r)
    for (std::size_t c = 0; c < dy.cols(); ++c) db(0, c) += dy(r, c);
  return matmul(dy, w);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix gelu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.flat()) v = gelu(v);
  return y;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx = dy;
  auto xs = x.flat();
  auto d = dx.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= gelu_derivative(xs[i]);
  return dx;
}

std::vector<double> softmax_temp(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorKind::InvalidParameter, "softmax temperature must be > 0");
  if (logits.empty()) fail(ErrorKind::InvalidInput, "softmax of empty vector");
  for (double v : logits)
    if (std::isnan(v)) fail(ErrorKind::InvalidInput, "softmax input contains NaN");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> softmax_temp_backward(std::span<const double> probs,
                                          std::span<const double> grad_probs, double tau) {
  const double inner = dot(probs, grad_probs);
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad_probs[i] - inner) / tau;
  return out;
}

Matrix softmax_rows(const Matrix& logits, double tau) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto p = softmax_temp(logits.row(r), tau);
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

namespace {

void check_pearson_args(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) fail(ErrorKind::InvalidInput, "pearson_distance: length mismatch");
  if (u.size() < 2) fail(ErrorKind::InvalidInput, "pearson_distance: need at least 2 entries");
}

std::vector<double> centered(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  std::vector<double> c(x.begin(), x.end());
  for (double& v : c) v -= mean;
  return c;
}

}  // namespace

double pearson_distance(std::span<const double> u, std::span<const double> v) {
  return pearson_distance_grad(u, v).value;
}

PearsonGrad pearson_distance_grad(std::span<const double> u, std::span<const double> v) {
  check_pearson_args(u, v);
  const auto n = static_cast<double>(u.size());
  const auto a = centered(u);
  const auto b = centered(v);
  const double saa = dot(a, a);
  const double sbb = dot(b, b);
  PearsonGrad out{1.0, std::vector<double>(u.size(), 0.0), std::vector<double>(v.size(), 0.0)};
  if (saa / n < kVarianceEpsilon || sbb / n < kVarianceEpsilon) return out;

  const double na = std::sqrt(saa);
  const double nb = std::sqrt(sbb);
  const double rho = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  out.value = 1.0 - rho;
  // dρ/du = b/(|a||b|) − ρ·a/|a|²; both terms are already centered.
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.du[i] = -(b[i] / (na * nb) - rho * a[i] / saa);
    out.dv[i] = -(a[i] / (na * nb) - rho * b[i] / sbb);
  }
  return out;
}

namespace {

void check_kl_args(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) fail(ErrorKind::InvalidInput, "kl_divergence: length mismatch");
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  check_kl_args(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityFloor)));
  }
  return s;
}

std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q) {
  check_kl_args(p, q);
  std::vector<double> g(q.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (p[i] > 0.0 && q[i] >= kProbabilityFloor) g[i] = -p[i] / q[i];
  }
  return g;
}

}  // namespace telme
