#pragma once

// Gaussian kernel moment sums, the inner loop of every spatial double sum in
// the library (varifold inner products, attachment gradients, flow velocities
// and their adjoints, atlas QP assembly).
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant. The variant is selected once at runtime from CPUID and can be
// overridden with IMVAR_ISA=scalar|avx2 or set_isa(). Tests hold the two to
// agreement within a few ulps of the accumulated magnitude.

#include <array>
#include <cstddef>
#include <limits>
#include <span>

namespace imvar::simd {

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
/// Throws Error(InvalidArgument) when the requested ISA is not available.
void set_isa(Isa isa);

class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

/// Structure-of-arrays source set. coords[a] points at `count` values of
/// coordinate a; channel k's weights start at weights + k * stride.
struct GaussSources {
  int dim = 2;
  std::size_t count = 0;
  std::array<const double*, 3> coords{};
  int channels = 1;
  const double* weights = nullptr;
  std::size_t stride = 0;
};

struct GaussParams {
  double inv_two_sigma2 = 0.5;
  /// Squared radius beyond which a pair contributes nothing.
  double cutoff_r2 = std::numeric_limits<double>::infinity();
  bool gradient = false;
};

/// For query point q with g_j = exp(-|q - y_j|^2 * inv_two_sigma2):
///   sum[k]            = sum_j g_j w_kj
///   grad[k * dim + a] = sum_j g_j w_kj (y_ja - q_a)     (only if params.gradient)
/// Any number of channels is accepted.
void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad);

/// Elementwise exp with the active ISA (exposed for equivalence testing).
void exp_array(std::span<const double> in, std::span<double> out);

inline constexpr int kMaxChannelsPerPass = 16;

namespace scalar {
void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad);
void exp_array(std::span<const double> in, std::span<double> out);
}  // namespace scalar

namespace avx2 {
void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad);
void exp_array(std::span<const double> in, std::span<double> out);
}  // namespace avx2

}  // namespace imvar::simd
