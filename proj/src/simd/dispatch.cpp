#include "imvar/error.hpp"
#include "imvar/simd/gauss.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>

namespace imvar::simd {

namespace {

Isa detect() {
  if (const char* env = std::getenv("IMVAR_ISA")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::Scalar;
    if (std::strcmp(env, "avx2") == 0 && isa_available(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

using MomentsFn = void (*)(const double*, const GaussSources&, const GaussParams&, double*, double*);

MomentsFn moments_fn(Isa isa) {
#if defined(IMVAR_HAVE_AVX2_KERNELS)
  if (isa == Isa::Avx2) return &avx2::gauss_moments;
#else
  (void)isa;
#endif
  return &scalar::gauss_moments;
}

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(IMVAR_HAVE_AVX2_KERNELS)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw Error(ErrorCode::InvalidArgument, std::string("ISA not available on this machine: ") + to_string(isa));
  }
  current().store(isa, std::memory_order_relaxed);
}

void gauss_moments(const double* q, const GaussSources& src, const GaussParams& params, double* sum,
                   double* grad) {
  const MomentsFn fn = moments_fn(active_isa());
  if (src.channels <= kMaxChannelsPerPass) {
    fn(q, src, params, sum, grad);
    return;
  }
  // Wide channel sets are processed in passes; each pass recomputes the
  // kernel values, which is cheap next to the channel work.
  GaussSources part = src;
  for (int first = 0; first < src.channels; first += kMaxChannelsPerPass) {
    part.channels = std::min(kMaxChannelsPerPass, src.channels - first);
    part.weights = src.weights + static_cast<std::size_t>(first) * src.stride;
    fn(q, part, params, sum + first, params.gradient ? grad + static_cast<std::size_t>(first) * src.dim : nullptr);
  }
}

void exp_array(std::span<const double> in, std::span<double> out) {
#if defined(IMVAR_HAVE_AVX2_KERNELS)
  if (active_isa() == Isa::Avx2) {
    avx2::exp_array(in, out);
    return;
  }
#endif
  scalar::exp_array(in, out);
}

}  // namespace imvar::simd
