#include "imood/kernels.hpp"

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imood::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

void check_mm(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul: a.cols != b.rows");
}
void check_tn(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn: a.rows != b.rows");
}
void check_nt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt: a.cols != b.cols");
}
void check_row(const Matrix& m, const Matrix& row) {
  require_shape(row.size() == m.cols(), "add_row_vector: length != cols");
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_mm(a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_tn(a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_nt(a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

void add_row_vector(Matrix& m, const Matrix& row) {
  check_row(m, row);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += row[j];
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, j);
    out[j] = s;
  }
  return out;
}

}  // namespace serial

namespace parallel {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_mm(a, b);
  Matrix out(a.rows(), b.cols());
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t inner = a.cols(), m = b.cols();
#pragma omp parallel for schedule(static) if (a.rows() * inner * m > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_tn(a, b);
  Matrix out(a.cols(), b.cols());
  const auto n = static_cast<std::ptrdiff_t>(a.cols());
  const std::size_t inner = a.rows(), m = b.cols();
#pragma omp parallel for schedule(static) if (a.cols() * inner * m > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_nt(a, b);
  Matrix out(a.rows(), b.rows());
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t inner = a.cols(), m = b.rows();
#pragma omp parallel for schedule(static) if (a.rows() * inner * m > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

void add_row_vector(Matrix& m, const Matrix& row) {
  check_row(m, row);
  const auto n = static_cast<std::ptrdiff_t>(m.rows());
  const std::size_t cols = m.cols();
#pragma omp parallel for schedule(static) if (m.size() > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < cols; ++j) m(i, j) += row[j];
  }
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  const auto cols = static_cast<std::ptrdiff_t>(m.cols());
  const std::size_t rows = m.rows();
#pragma omp parallel for schedule(static) if (m.size() > kParallelWork)
  for (std::ptrdiff_t jj = 0; jj < cols; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += m(i, j);
    out[j] = s;
  }
  return out;
}

}  // namespace parallel

}  // namespace imood::kernels
