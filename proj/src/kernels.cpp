#include "imvar/kernels.hpp"

#include "imvar/error.hpp"
#include "imvar/simd/gauss.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace imvar::kernels {

using varifold::DistributionKind;
using varifold::FeatureDistribution;
using varifold::MeshVarifold;

namespace {

std::atomic<std::uint64_t> g_pairs{0};

double cauchy(const double* a, const double* b, Eigen::Index n, double sigma) {
  double dot = 0.0, dist2 = 0.0;
  for (Eigen::Index f = 0; f < n; ++f) {
    dot += a[f] * b[f];
    const double t = a[f] - b[f];
    dist2 += t * t;
  }
  return dot / (sigma * sigma + dist2);
}

// One side of a double sum, laid out for the Gaussian moment kernels:
// centers stored coordinate-major, per-simplex masses alpha_c |gamma_c|, and
// feature rows already mapped to log scale when the kernel asks for it.
struct Side {
  int dim = 2;
  Eigen::MatrixXd centers;   // m x dim, column-major
  Eigen::VectorXd mass;      // alpha_c |gamma_c|
  Eigen::VectorXd volume;
  Eigen::MatrixXd features;  // m x F, row c is (possibly transformed) zeta_c
  Eigen::MatrixXd features_t;  // F x m, column c is row c of features

  int size() const { return static_cast<int>(mass.size()); }
};

Side prepare(const MeshVarifold& v, const FeatureKernel& k2) {
  check_compatible(k2, v.kind());
  const mesh::Geometry g = mesh::compute_geometry(v.family);
  Side s;
  s.dim = v.family.dim;
  s.centers = g.centers;
  s.volume = g.volumes;
  s.mass = v.alpha.cwiseProduct(g.volumes);
  s.features = v.zeta;
  if (k2.log_scale) s.features = s.features.array().log1p().matrix();
  s.features_t = s.features.transpose();
  return s;
}

// Weighted sources: for bilinear feature kernels one channel per feature,
// w_{f,j} = sign * mass_j * feature_j(f); for the Cauchy kernel the weights
// depend on the query row and are filled per row.
class Sources {
 public:
  Sources(const Side& side, double sign, const FeatureKernel& k2) : side_(&side), sign_(sign), k2_(k2) {
    src_.dim = side.dim;
    src_.count = static_cast<std::size_t>(side.size());
    for (int a = 0; a < side.dim; ++a) src_.coords[a] = side.centers.col(a).data();
    src_.stride = src_.count;
    if (k2.bilinear()) {
      weights_ = (side.features.array().colwise() * (sign * side.mass.array())).matrix();
      src_.channels = static_cast<int>(side.features.cols());
      src_.weights = weights_.data();
    } else {
      row_weights_.resize(side.size());
      src_.channels = 1;
      src_.weights = row_weights_.data();
    }
    sums_.resize(src_.channels);
    grads_.resize(static_cast<std::size_t>(src_.channels) * side.dim);
  }

  // s = sum_j w_j k2(q, j) K1(q, y_j); g = sum_j w_j k2(q, j) K1(q, y_j) (y_j - q).
  void row(const double* q, const double* qfeat, const simd::GaussParams& params, double& s, double* g) {
    const int d = side_->dim;
    const Eigen::Index nf = side_->features.cols();
    if (!k2_.bilinear()) {
      const double* ft = side_->features_t.data();
      for (int j = 0; j < side_->size(); ++j) {
        row_weights_[j] = sign_ * side_->mass[j] * cauchy(qfeat, ft + static_cast<std::ptrdiff_t>(j) * nf, nf, k2_.sigma);
      }
    }
    simd::gauss_moments(q, src_, params, sums_.data(), params.gradient ? grads_.data() : nullptr);
    g_pairs.fetch_add(src_.count, std::memory_order_relaxed);
    if (k2_.bilinear()) {
      s = 0.0;
      if (params.gradient) std::fill(g, g + d, 0.0);
      for (Eigen::Index f = 0; f < nf; ++f) {
        if (qfeat[f] == 0.0) continue;
        s += qfeat[f] * sums_[f];
        if (params.gradient) {
          for (int a = 0; a < d; ++a) g[a] += qfeat[f] * grads_[f * d + a];
        }
      }
    } else {
      s = sums_[0];
      if (params.gradient) std::copy(grads_.begin(), grads_.begin() + d, g);
    }
  }

 private:
  const Side* side_;
  double sign_;
  FeatureKernel k2_;
  simd::GaussSources src_;
  Eigen::MatrixXd weights_;
  Eigen::VectorXd row_weights_;
  std::vector<double> sums_;
  std::vector<double> grads_;
};

simd::GaussParams params_for(const SpatialKernel& k1, bool gradient) {
  simd::GaussParams p;
  p.inv_two_sigma2 = k1.inv_two_sigma2();
  p.cutoff_r2 = k1.cutoff_r2();
  p.gradient = gradient;
  return p;
}

double cross(const KernelMetric& metric, const Side& rows, const Side& cols) {
  Sources src(cols, 1.0, metric.k2);
  const simd::GaussParams params = params_for(metric.k1, false);
  Eigen::VectorXd q(rows.dim);
  double total = 0.0;
  for (int c = 0; c < rows.size(); ++c) {
    if (rows.mass[c] == 0.0) {
      g_pairs.fetch_add(static_cast<std::uint64_t>(cols.size()), std::memory_order_relaxed);
      continue;
    }
    for (int a = 0; a < rows.dim; ++a) q[a] = rows.centers(c, a);
    double s = 0.0;
    src.row(q.data(), rows.features_t.col(c).data(), params, s, nullptr);
    total += rows.mass[c] * s;
  }
  return total;
}

void check_pair(const MeshVarifold& u, const MeshVarifold& v) {
  if (u.space.kind != v.space.kind || u.space.size() != v.space.size()) {
    throw Error(ErrorCode::KindMismatch, "varifolds live on different feature spaces");
  }
  if (u.family.dim != v.family.dim) throw Error(ErrorCode::InvalidArgument, "varifolds have different dimensions");
}

}  // namespace

double SpatialKernel::cutoff_r2() const {
  return cutoff ? 36.0 * sigma * sigma : std::numeric_limits<double>::infinity();
}

double k1_eval(const SpatialKernel& k1, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double r2 = (x - y).squaredNorm();
  if (r2 > k1.cutoff_r2()) return 0.0;
  return std::exp(-r2 * k1.inv_two_sigma2());
}

Eigen::VectorXd k1_grad1(const SpatialKernel& k1, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return (y - x) * (k1_eval(k1, x, y) / (k1.sigma * k1.sigma));
}

void check_compatible(const FeatureKernel& k2, DistributionKind kind) {
  switch (k2.kind) {
    case FeatureKernel::Kind::Identity:
      if (kind != DistributionKind::Discrete || k2.log_scale) {
        throw Error(ErrorCode::KindMismatch, "identity kernel acts on categorical laws only");
      }
      break;
    case FeatureKernel::Kind::EuclideanDot:
      if (k2.log_scale && kind != DistributionKind::DiracVector) {
        throw Error(ErrorCode::KindMismatch, "log scale applies to count vectors only");
      }
      break;
    case FeatureKernel::Kind::CauchyProduct:
      if (kind != DistributionKind::DiracVector) {
        throw Error(ErrorCode::KindMismatch, "Cauchy kernel acts on count-vector Diracs only");
      }
      break;
  }
}

double k2_inner(const FeatureKernel& k2, const FeatureDistribution& a, const FeatureDistribution& b) {
  if (a.kind != b.kind || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::KindMismatch, "feature laws of different kinds or sizes");
  }
  check_compatible(k2, a.kind);
  Eigen::VectorXd x = a.values, y = b.values;
  if (k2.log_scale) {
    x = x.array().log1p().matrix();
    y = y.array().log1p().matrix();
  }
  if (k2.kind == FeatureKernel::Kind::CauchyProduct) return cauchy(x.data(), y.data(), x.size(), k2.sigma);
  return x.dot(y);
}

double varifold_inner(const KernelMetric& metric, const MeshVarifold& u, const MeshVarifold& v) {
  check_pair(u, v);
  const Side su = prepare(u, metric.k2);
  const Side sv = prepare(v, metric.k2);
  return cross(metric, su, sv);
}

double varifold_sqdist(const KernelMetric& metric, const MeshVarifold& u, const MeshVarifold& v) {
  return std::max(0.0, attachment(metric, u, v, false).sqdist);
}

Attachment attachment(const KernelMetric& metric, const MeshVarifold& u, const MeshVarifold& target,
                      bool with_gradient, const double* target_self_inner) {
  check_pair(u, target);
  const Side su = prepare(u, metric.k2);
  const Side st = prepare(target, metric.k2);
  const int d = su.dim;
  const int m = su.size();

  Attachment out;
  out.vv = target_self_inner ? *target_self_inner : cross(metric, st, st);

  Sources from_u(su, 1.0, metric.k2);
  Sources from_t(st, 1.0, metric.k2);
  const simd::GaussParams params = params_for(metric.k1, with_gradient);
  const double inv_sigma2 = 1.0 / (metric.k1.sigma * metric.k1.sigma);
  const double inv_dp1 = 1.0 / (d + 1);
  const double inv_dfact = d == 3 ? 1.0 / 6.0 : 0.5;

  if (with_gradient) out.gradient.setZero(u.family.num_vertices(), d);
  Eigen::VectorXd q(d);
  double gu[3], gt[3];
  for (int c = 0; c < m; ++c) {
    for (int a = 0; a < d; ++a) q[a] = su.centers(c, a);
    const double* qf = su.features_t.col(c).data();
    double s_u = 0.0, s_t = 0.0;
    from_u.row(q.data(), qf, params, s_u, gu);
    from_t.row(q.data(), qf, params, s_t, gt);
    out.uu += su.mass[c] * s_u;
    out.uv += su.mass[c] * s_t;
    if (!with_gradient || u.alpha[c] == 0.0) continue;
    // d/dx_j of 2 <mu_x, mu_x~ - mu_target> at x~ = x: a center term through
    // grad_1 K1 shared by the d+1 vertices, and a volume term through the
    // face normals.
    auto s = u.family.simplex(c);
    const Eigen::MatrixXd normals = mesh::face_normals(u.family.vertices, s);
    const double alpha2 = 2.0 * u.alpha[c];
    const double diff_s = s_u - s_t;
    for (int k = 0; k <= d; ++k) {
      for (int a = 0; a < d; ++a) {
        const double center_term = su.volume[c] * inv_dp1 * (gu[a] - gt[a]) * inv_sigma2;
        const double volume_term = inv_dfact * diff_s * normals(k, a);
        out.gradient(s[k], a) += alpha2 * (center_term + volume_term);
      }
    }
  }
  out.sqdist = out.uu - 2.0 * out.uv + out.vv;
  return out;
}

Eigen::MatrixXd attachment_grad(const KernelMetric& metric, const MeshVarifold& u, const MeshVarifold& target) {
  return attachment(metric, u, target, true).gradient;
}

std::uint64_t kernel_pair_count() { return g_pairs.load(std::memory_order_relaxed); }

}  // namespace imvar::kernels
