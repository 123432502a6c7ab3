#include "ftl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ftl/error.hpp"

namespace ftl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonSymmetric: return "NonSymmetric";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNotPositiveSemidefinite: return "NotPositiveSemidefinite";
    case ErrorCode::kDegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kFormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::kCorruptRecord: return "CorruptRecord";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kEmptyGallery: return "EmptyGallery";
    case ErrorCode::kDiverged: return "Diverged";
  }
  return "Unknown";
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == m.cols(), ErrorCode::kDimensionMismatch,
            "Matrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Vector Matrix::col(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

// The kernels below keep an axpy-shaped inner loop over contiguous memory;
// every output element is accumulated in a fixed order, so vectorized builds
// produce the same bits as scalar ones.
namespace {

// out[j] += sum_t coef[t] * rows[t][j] for t = 0..count-1, added in t order.
// Four rows share one pass over `out`, which keeps the running sum in a
// register without changing the order of additions. The AVX2 clone is
// bit-identical to the baseline one because contraction into FMA is disabled.
__attribute__((target_clones("avx2", "default")))
void accumulate_rows(double* __restrict out, const double* const* rows, const double* coef,
                     std::size_t count, std::size_t m) {
  std::size_t t = 0;
  for (; t + 4 <= count; t += 4) {
    const double c0 = coef[t], c1 = coef[t + 1], c2 = coef[t + 2], c3 = coef[t + 3];
    const double* __restrict r0 = rows[t];
    const double* __restrict r1 = rows[t + 1];
    const double* __restrict r2 = rows[t + 2];
    const double* __restrict r3 = rows[t + 3];
    for (std::size_t j = 0; j < m; ++j) {
      double acc = out[j];
      acc += c0 * r0[j];
      acc += c1 * r1[j];
      acc += c2 * r2[j];
      acc += c3 * r3[j];
      out[j] = acc;
    }
  }
  for (; t < count; ++t) {
    const double c = coef[t];
    const double* __restrict r = rows[t];
    for (std::size_t j = 0; j < m; ++j) out[j] += c * r[j];
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::kDimensionMismatch, "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
  Matrix out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  std::vector<const double*> rows(inner);
  for (std::size_t k = 0; k < inner; ++k) rows[k] = pb + k * m;
  for (std::size_t i = 0; i < n; ++i) accumulate_rows(po + i * m, rows.data(), pa + i * inner, inner, m);
  return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::kDimensionMismatch,
          "matmul_bt: inner dimensions differ");
  return matmul(a, b.transposed());
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorCode::kDimensionMismatch,
          "matmul_at: outer dimensions differ");
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  Matrix out(p, q);
  // out(i, :) = sum_k a(k, i) b(k, :), accumulated in k order.
  const Matrix at = a.transposed();
  const double* pat = at.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  std::vector<const double*> rows(n);
  for (std::size_t k = 0; k < n; ++k) rows[k] = pb + k * q;
  for (std::size_t i = 0; i < p; ++i) accumulate_rows(po + i * q, rows.data(), pat + i * n, n, q);
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> v) {
  require(a.cols() == v.size(), ErrorCode::kDimensionMismatch, "matvec: dimension mismatch");
  Vector out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), v);
  return out;
}

Vector matvec_t(const Matrix& a, std::span<const double> v) {
  require(a.rows() == v.size(), ErrorCode::kDimensionMismatch, "matvec_t: dimension mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) out[c] += row[c] * v[r];
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch, "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch,
          "squared_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch, "subtract: dimension mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::kDimensionMismatch, "add: dimension mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

double frobenius_norm(const Matrix& a) { return norm(a.data()); }

namespace {

double off_diagonal_sq(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return s;
}

// Applies the rotation zeroing a(p, q) to both the working matrix and the
// accumulated eigenvector matrix.
void jacobi_rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const std::size_t n = a.rows();
  const double apq = a(p, q);
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;

  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;

  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

EigenResult sym_eigen(const Matrix& input) {
  require(input.rows() == input.cols() && input.rows() >= 1, ErrorCode::kDimensionMismatch,
          "sym_eigen: matrix must be square and nonempty");
  require(input.all_finite(), ErrorCode::kNonFinite, "sym_eigen: non-finite entry");
  const std::size_t n = input.rows();

  double max_abs = 0.0;
  for (double x : input.data()) max_abs = std::max(max_abs, std::abs(x));
  const double sym_tol = 1e-10 * std::max(1.0, max_abs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(input(i, j) - input(j, i)) <= sym_tol, ErrorCode::kNonSymmetric,
              "sym_eigen: matrix is not symmetric at (" + std::to_string(i) + ", " +
                  std::to_string(j) + ")");

  // Work on the exactly symmetrized copy.
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(n);

  const double scale_sq = std::max(frobenius_norm(a) * frobenius_norm(a),
                                   std::numeric_limits<double>::min());
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double off = off_diagonal_sq(a);
    if (off <= 1e-32 * scale_sq) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Skip rotations that cannot change the diagonal in floating point.
        const double g = 100.0 * std::abs(apq);
        if (sweep > 3 && std::abs(a(p, p)) + g == std::abs(a(p, p)) &&
            std::abs(a(q, q)) + g == std::abs(a(q, q))) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        jacobi_rotate(a, v, p, q);
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenResult result;
  result.eigenvalues.resize(n);
  result.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    result.eigenvalues[j] = a(src, src);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, src)) > std::abs(v(arg, src))) arg = k;
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) result.eigenvectors(k, j) = sign * v(k, src);
  }
  return result;
}

Matrix pca_truncate(const EigenResult& eig, double energy, double* achieved) {
  require(energy > 0.0 && energy <= 1.0, ErrorCode::kConfigInvalid,
          "pca_truncate: energy must lie in (0, 1]");
  const std::size_t n = eig.eigenvalues.size();
  require(n >= 1 && eig.eigenvectors.cols() == n, ErrorCode::kDimensionMismatch,
          "pca_truncate: eigenvector count does not match eigenvalues");

  double mass = 0.0;
  for (double lambda : eig.eigenvalues) mass += std::abs(lambda);
  // Negative eigenvalues within rounding of zero are clamped; anything
  // larger means the input was not PSD.
  const double clamp_tol = 1e-10 * std::max(1.0, mass);
  Vector lambdas(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double lambda = eig.eigenvalues[j];
    require(std::isfinite(lambda), ErrorCode::kNonFinite, "pca_truncate: non-finite eigenvalue");
    require(lambda >= -clamp_tol, ErrorCode::kNotPositiveSemidefinite,
            "pca_truncate: eigenvalue " + std::to_string(lambda) + " is negative");
    lambdas[j] = std::max(lambda, 0.0);
    total += lambdas[j];
  }
  require(total > 0.0, ErrorCode::kDegenerateSpectrum, "pca_truncate: zero spectral mass");

  std::size_t k = 0;
  double captured = 0.0;
  while (k < n) {
    captured += lambdas[k];
    ++k;
    if (captured >= energy * total) break;
  }
  if (achieved != nullptr) *achieved = captured / total;

  Matrix q(eig.eigenvectors.rows(), k);
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c) q(r, c) = eig.eigenvectors(r, c);
  return q;
}

Vector project(const Matrix& q, std::span<const double> v) {
  require(q.rows() == v.size(), ErrorCode::kDimensionMismatch,
          "project: basis has " + std::to_string(q.rows()) + " rows, vector has " +
              std::to_string(v.size()));
  return matvec(q, matvec_t(q, v));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // SplitMix64 finalizer over the combined key.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SeededRng SeededRng::fork(std::uint64_t stream) const { return SeededRng(mix_seed(seed_, stream)); }

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t SeededRng::index(std::size_t n) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

}  // namespace ftl
