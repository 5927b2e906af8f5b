#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace telme {

/// Dense row-major matrix of doubles. Vectors are 1×n or n×1 matrices where a
/// layer needs them; free functions below mostly take spans.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Throws InvalidInput if data.size() != rows*cols or any entry is not finite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> column(std::size_t c) const;

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  void fill(double v);
  Matrix transposed() const;
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Value of a scalar function together with its gradient w.r.t. a declared
/// flat parameter vector.
struct DualValue {
  DualValue(double v, std::vector<double> g, std::size_t declared_params);
  double value;
  std::vector<double> gradient;
};

// ---- dense algebra ---------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_transposed(const Matrix& a, const Matrix& b);  // a · bᵀ
Matrix transposed_matmul(const Matrix& a, const Matrix& b);  // aᵀ · b
void add_inplace(Matrix& dst, const Matrix& src, double scale = 1.0);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);

// ---- affine layer: y = x·Wᵀ + b with W out×in, b 1×out -------------------

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b);
/// Accumulates into dw/db and returns dL/dx.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db);

// ---- activations ------------------------------------------------------------

double gelu(double x);
double gelu_derivative(double x);
Matrix gelu(const Matrix& x);
/// dL/dx given pre-activation x and upstream dL/dy.
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

// ---- probability primitives ---------------------------------------------------

inline constexpr double kVarianceEpsilon = 1e-12;
inline constexpr double kProbabilityFloor = 1e-12;

/// softmax(logits / tau) with max subtraction.
std::vector<double> softmax_temp(std::span<const double> logits, double tau);
/// dL/dlogits from the softmax output and dL/dprobs.
std::vector<double> softmax_temp_backward(std::span<const double> probs,
                                          std::span<const double> grad_probs, double tau);
Matrix softmax_rows(const Matrix& logits, double tau);

/// 1 − Pearson correlation; 1 when either input is (numerically) constant.
double pearson_distance(std::span<const double> u, std::span<const double> v);

struct PearsonGrad {
  double value;
  std::vector<double> du;
  std::vector<double> dv;
};
PearsonGrad pearson_distance_grad(std::span<const double> u, std::span<const double> v);

/// Σ p·ln(p / max(q, floor)), with 0·ln 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
/// Gradient of kl_divergence w.r.t. q.
std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q);

void require_finite(std::span<const double> x, const char* what);

}  // namespace telme
