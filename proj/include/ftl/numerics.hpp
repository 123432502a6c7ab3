#ifndef FTL_NUMERICS_HPP_
#define FTL_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ftl {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Also used as a batch container where each
// row is one sample.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  Vector col(std::size_t c) const;

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T, the common case for batched dense layers (batch x in) * (out x in)^T.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b, used for weight gradients.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> v);
Vector matvec_t(const Matrix& a, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);
double distance(std::span<const double> a, std::span<const double> b);
Vector subtract(std::span<const double> a, std::span<const double> b);
Vector add(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& a);

struct EigenResult {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalues[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvectors are
// sign-normalized so that the largest-magnitude component is nonnegative.
EigenResult sym_eigen(const Matrix& a);

// Minimal leading set of eigenvectors whose eigenvalue mass reaches `energy`
// of the total. `achieved` receives the fraction actually captured.
Matrix pca_truncate(const EigenResult& eig, double energy, double* achieved = nullptr);

// Q * Q^T * v for column-orthonormal Q.
Vector project(const Matrix& q, std::span<const double> v);

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; the floating-point transforms below
// are implemented here rather than via <random> distributions, whose
// algorithms are implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Independent child stream keyed by `stream`; does not advance this one.
  SeededRng fork(std::uint64_t stream) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  // Standard normal via the Marsaglia polar method.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ftl

#endif  // FTL_NUMERICS_HPP_
