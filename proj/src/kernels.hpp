#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

// Low-level numeric routines shared by the tensor ops and the incremental
// decoder. Both paths must call the same kernels in the same order so that
// cached decoding is bit-identical to full recomputation.
namespace ppc::kern {

// c[m×n] += a[m×k] · b[k×n]. Caller zeroes c for a plain product.
inline void matmul_acc(const double* a, const double* b, double* c,
                       int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m×k] += dc[m×n] · b[k×n]^T
inline void matmul_acc_nt(const double* dc, const double* b, double* da,
                          int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const double* brow = b + t * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[t] += s;
    }
  }
}

// db[k×n] += a[m×k]^T · dc[m×n]
inline void matmul_acc_tn(const double* a, const double* dc, double* db,
                          int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (int64_t t = 0; t < k; ++t) {
      const double av = arow[t];
      double* dbrow = db + t * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

inline void softmax_row(double* x, int64_t n) {
  double mx = x[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    total += x[i];
  }
  for (int64_t i = 0; i < n; ++i) x[i] /= total;
}

inline double logsumexp(const double* x, int64_t n) {
  double mx = x[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) total += std::exp(x[i] - mx);
  return mx + std::log(total);
}

inline void layer_norm_row(const double* x, const double* gain, const double* bias,
                           double eps, int64_t d, double* out) {
  double mean = 0.0;
  for (int64_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + eps);
  for (int64_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

inline double gelu(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace ppc::kern
