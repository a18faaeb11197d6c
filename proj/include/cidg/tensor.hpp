#pragma once

#include <cstddef>
#include <vector>

namespace cidg {

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

  T* row(std::size_t i) { return data.data() + i * cols; }
  const T* row(std::size_t i) const { return data.data() + i * cols; }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// All kernels below sum over the shared dimension in a fixed order and treat
// rows independently, so a row's result does not depend on how many
// other rows are in the matrix. Incremental decoding relies on this.

/// out = a * w, with w given as (a.cols x n) row-major.
template <typename T>
void matmul(const Matrix<T>& a, const T* w, std::size_t n, Matrix<T>& out) {
  out = Matrix<T>(a.rows, n);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ar = a.row(i);
    T* o = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T x = ar[k];
      const T* wr = w + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * wr[j];
    }
  }
}

/// Eight interleaved partial sums combined in a fixed tree, so the result is
/// a deterministic function of (a, b, n) that the compiler can vectorize.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[k + l] * b[k + l];
  for (std::size_t l = 0; k < n; ++k, ++l) acc[l] += a[k] * b[k];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

/// out(i, r) = dot(a.row(i), w.row(r)) for w given as (n x a.cols).
template <typename T>
void matmul_bt(const Matrix<T>& a, const T* w, std::size_t n, Matrix<T>& out) {
  out = Matrix<T>(a.rows, n);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t r = 0; r < n; ++r) out(i, r) = dot(a.row(i), w + r * a.cols, a.cols);
}

/// dx += dy * w^T, with w given as (dx.cols x dy.cols).
template <typename T>
void accum_matmul_bt(const Matrix<T>& dy, const T* w, Matrix<T>& dx) {
  for (std::size_t i = 0; i < dy.rows; ++i) {
    T* d = dx.row(i);
    const T* g = dy.row(i);
    for (std::size_t k = 0; k < dx.cols; ++k) d[k] += dot(g, w + k * dy.cols, dy.cols);
  }
}

/// dw += x^T * dy, dw given as (x.cols x dy.cols).
template <typename T>
void accum_at_b(const Matrix<T>& x, const Matrix<T>& dy, T* dw) {
  for (std::size_t i = 0; i < x.rows; ++i) {
    const T* xr = x.row(i);
    const T* g = dy.row(i);
    for (std::size_t k = 0; k < x.cols; ++k) {
      const T v = xr[k];
      if (v == T(0)) continue;
      T* wr = dw + k * dy.cols;
      for (std::size_t j = 0; j < dy.cols; ++j) wr[j] += v * g[j];
    }
  }
}

}  // namespace cidg
