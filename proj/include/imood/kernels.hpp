#pragma once

// Dense kernels used by the forward and backward passes.
//
// Two implementations share one contract. `serial` is the plain reference
// loop nest kept for testing and benchmarking. `parallel` distributes output
// rows over OpenMP threads. Every output element is accumulated by exactly
// one thread in the same order as the serial loop, so both produce
// bit-identical results regardless of thread count.

#include <span>

#include "imood/matrix.hpp"

namespace imood::kernels {

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
void add_row_vector(Matrix& m, const Matrix& row);   // m[i,:] += row
Matrix column_sums(const Matrix& m);                 // 1 x cols
}  // namespace serial

namespace parallel {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
void add_row_vector(Matrix& m, const Matrix& row);
Matrix column_sums(const Matrix& m);
}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace imood::kernels

namespace imood {

using kernels::parallel::matmul;

}  // namespace imood
