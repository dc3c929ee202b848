#pragma once

#include "imvar/varifold.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace imvar::kernels {

/// Gaussian spatial kernel K1(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
struct SpatialKernel {
  double sigma = 1.0;
  /// Opt-in truncation: pairs farther apart than 6 sigma contribute nothing.
  bool cutoff = false;

  double inv_two_sigma2() const { return 0.5 / (sigma * sigma); }
  double cutoff_r2() const;
};

/// Feature kernel K2.
///  - Identity: Kronecker delta on labels (categorical laws).
///  - EuclideanDot: f . f'.
///  - CauchyProduct: f . f' / (sigma^2 + |f - f'|^2) on count vectors.
/// With log_scale set, count vectors are mapped through log(1 + .) first.
struct FeatureKernel {
  enum class Kind { Identity, EuclideanDot, CauchyProduct };

  Kind kind = Kind::Identity;
  double sigma = 1.0;
  bool log_scale = false;

  bool bilinear() const { return kind != Kind::CauchyProduct; }
};

struct KernelMetric {
  SpatialKernel k1;
  FeatureKernel k2;
};

double k1_eval(const SpatialKernel& k1, const Eigen::VectorXd& x, const Eigen::VectorXd& y);
/// Derivative of K1 in its first argument: (y - x) / sigma^2 * K1(x, y).
Eigen::VectorXd k1_grad1(const SpatialKernel& k1, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// <zeta, zeta'>_{W2*}. Throws KindMismatch for incompatible laws or kernels.
double k2_inner(const FeatureKernel& k2, const varifold::FeatureDistribution& a,
                const varifold::FeatureDistribution& b);

/// Throws KindMismatch when `k2` cannot act on laws of the given kind.
void check_compatible(const FeatureKernel& k2, varifold::DistributionKind kind);

/// <mu_u, mu_v>_{W*} = sum_{c,c'} m_c m'_{c'} K1(m_c, m'_{c'}) <zeta_c, zeta'_{c'}>,
/// evaluated by brute force over all |C| x |C'| pairs.
double varifold_inner(const KernelMetric& metric, const varifold::MeshVarifold& u,
                      const varifold::MeshVarifold& v);

/// ||mu_u - mu_v||^2_{W*}, clamped at zero.
double varifold_sqdist(const KernelMetric& metric, const varifold::MeshVarifold& u,
                       const varifold::MeshVarifold& v);

struct Attachment {
  double uu = 0.0;
  double uv = 0.0;
  double vv = 0.0;
  /// uu - 2 uv + vv, unclamped.
  double sqdist = 0.0;
  /// d sqdist / d x_j, one row per vertex of u (empty unless requested).
  Eigen::MatrixXd gradient;
};

/// Squared distance from u to the target and its vertex gradient. Passing a
/// precomputed <target, target> skips that double sum.
Attachment attachment(const KernelMetric& metric, const varifold::MeshVarifold& u,
                      const varifold::MeshVarifold& target, bool with_gradient = true,
                      const double* target_self_inner = nullptr);

/// Vertex gradient of ||mu_u - mu_target||^2 (derivative in u's positions).
Eigen::MatrixXd attachment_grad(const KernelMetric& metric, const varifold::MeshVarifold& u,
                                const varifold::MeshVarifold& target);

/// Number of (row, source) kernel pairs evaluated by this library so far.
std::uint64_t kernel_pair_count();

}  // namespace imvar::kernels
