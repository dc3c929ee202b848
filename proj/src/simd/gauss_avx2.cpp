#include "imvar/simd/gauss.hpp"

#include <immintrin.h>

#include <cmath>

namespace imvar::simd::avx2 {

namespace {

// exp(x) by Cody-Waite reduction x = n ln2 + r, |r| <= ln2/2, a degree-13
// Taylor polynomial in r (truncation error < 1e-17 relative) and exponent
// insertion. Inputs below -708.39 flush to zero, above 709.78 give +inf.
inline __m256d exp_pd(__m256d x) {
  const __m256d kMax = _mm256_set1_pd(709.78);
  const __m256d kMin = _mm256_set1_pd(-708.39);
  const __m256d kLog2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d kLn2Hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d kLn2Lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d kShift = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52

  const __m256d xc = _mm256_min_pd(_mm256_max_pd(x, kMin), kMax);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, kLog2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, kLn2Hi, xc);
  r = _mm256_fnmadd_pd(n, kLn2Lo, r);

  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);  // 1/13!
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

  // The low mantissa bits of n + 1.5*2^52 hold n in two's complement; shift
  // them into the exponent field and add.
  const __m256i ni = _mm256_castpd_si256(_mm256_add_pd(n, kShift));
  const __m256i e = _mm256_slli_epi64(ni, 52);
  __m256d res = _mm256_castsi256_pd(_mm256_add_epi64(_mm256_castpd_si256(p), e));

  res = _mm256_blendv_pd(res, _mm256_setzero_pd(), _mm256_cmp_pd(x, kMin, _CMP_LT_OQ));
  res = _mm256_blendv_pd(res, _mm256_set1_pd(INFINITY), _mm256_cmp_pd(x, kMax, _CMP_GT_OQ));
  return res;
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

template <int D, bool Grad>
void moments_impl(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                  double* grad) {
  const int m = src.channels;
  __m256d acc_s[kMaxChannelsPerPass];
  __m256d acc_g[kMaxChannelsPerPass][D];
  for (int k = 0; k < m; ++k) {
    acc_s[k] = _mm256_setzero_pd();
    if constexpr (Grad) {
      for (int a = 0; a < D; ++a) acc_g[k][a] = _mm256_setzero_pd();
    }
  }
  const __m256d neg_scale = _mm256_set1_pd(-params.inv_two_sigma2);
  const bool use_cutoff = std::isfinite(params.cutoff_r2);
  const __m256d cutoff = _mm256_set1_pd(params.cutoff_r2);
  __m256d qv[D];
  for (int a = 0; a < D; ++a) qv[a] = _mm256_set1_pd(q[a]);

  const std::size_t n = src.count;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d diff[D];
    __m256d r2 = _mm256_setzero_pd();
    for (int a = 0; a < D; ++a) {
      diff[a] = _mm256_sub_pd(_mm256_loadu_pd(src.coords[a] + j), qv[a]);
      r2 = _mm256_fmadd_pd(diff[a], diff[a], r2);
    }
    __m256d g = exp_pd(_mm256_mul_pd(r2, neg_scale));
    if (use_cutoff) g = _mm256_and_pd(g, _mm256_cmp_pd(r2, cutoff, _CMP_LE_OQ));
    for (int k = 0; k < m; ++k) {
      const __m256d gw = _mm256_mul_pd(g, _mm256_loadu_pd(src.weights + k * src.stride + j));
      acc_s[k] = _mm256_add_pd(acc_s[k], gw);
      if constexpr (Grad) {
        for (int a = 0; a < D; ++a) acc_g[k][a] = _mm256_fmadd_pd(gw, diff[a], acc_g[k][a]);
      }
    }
  }
  for (int k = 0; k < m; ++k) {
    sum[k] = hsum(acc_s[k]);
    if constexpr (Grad) {
      for (int a = 0; a < D; ++a) grad[k * D + a] = hsum(acc_g[k][a]);
    }
  }
  for (; j < n; ++j) {
    double diff[D];
    double r2 = 0.0;
    for (int a = 0; a < D; ++a) {
      diff[a] = src.coords[a][j] - q[a];
      r2 += diff[a] * diff[a];
    }
    if (r2 > params.cutoff_r2) continue;
    const double g = std::exp(-r2 * params.inv_two_sigma2);
    for (int k = 0; k < m; ++k) {
      const double gw = g * src.weights[k * src.stride + j];
      sum[k] += gw;
      if constexpr (Grad) {
        for (int a = 0; a < D; ++a) grad[k * D + a] += gw * diff[a];
      }
    }
  }
}

}  // namespace

void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad) {
  if (src.dim == 1) {
    params.gradient ? moments_impl<1, true>(q, src, params, sum, grad)
                    : moments_impl<1, false>(q, src, params, sum, grad);
  } else if (src.dim == 2) {
    params.gradient ? moments_impl<2, true>(q, src, params, sum, grad)
                    : moments_impl<2, false>(q, src, params, sum, grad);
  } else {
    params.gradient ? moments_impl<3, true>(q, src, params, sum, grad)
                    : moments_impl<3, false>(q, src, params, sum, grad);
  }
}

void exp_array(std::span<const double> in, std::span<double> out) {
  std::size_t i = 0;
  for (; i + 4 <= in.size(); i += 4) _mm256_storeu_pd(out.data() + i, exp_pd(_mm256_loadu_pd(in.data() + i)));
  for (; i < in.size(); ++i) out[i] = std::exp(in[i]);
}

}  // namespace imvar::simd::avx2
