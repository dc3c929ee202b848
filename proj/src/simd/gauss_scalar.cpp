#include "imvar/simd/gauss.hpp"

#include <cmath>

namespace imvar::simd::scalar {

void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad) {
  const int d = src.dim;
  const int m = src.channels;
  for (int k = 0; k < m; ++k) sum[k] = 0.0;
  if (params.gradient) {
    for (int k = 0; k < m * d; ++k) grad[k] = 0.0;
  }
  double diff[3] = {0.0, 0.0, 0.0};
  for (std::size_t j = 0; j < src.count; ++j) {
    double r2 = 0.0;
    for (int a = 0; a < d; ++a) {
      diff[a] = src.coords[a][j] - q[a];
      r2 += diff[a] * diff[a];
    }
    if (r2 > params.cutoff_r2) continue;
    const double g = std::exp(-r2 * params.inv_two_sigma2);
    for (int k = 0; k < m; ++k) {
      const double gw = g * src.weights[k * src.stride + j];
      sum[k] += gw;
      if (params.gradient) {
        for (int a = 0; a < d; ++a) grad[k * d + a] += gw * diff[a];
      }
    }
  }
}

void exp_array(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
}

}  // namespace imvar::simd::scalar
