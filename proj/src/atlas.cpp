#include "imvar/atlas.hpp"

#include "imvar/error.hpp"
#include "imvar/simd/gauss.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace imvar::atlas {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Channel sums sum_j K1(q, y_j) W(j, k) over a fixed source set.
class KernelSums {
 public:
  KernelSums(const MatrixXd& centers, const MatrixXd& weights, const kernels::SpatialKernel& k1)
      : y_(centers), w_(weights) {
    src_.dim = static_cast<int>(y_.cols());
    src_.count = static_cast<std::size_t>(y_.rows());
    for (int a = 0; a < src_.dim; ++a) src_.coords[a] = y_.col(a).data();
    src_.channels = static_cast<int>(w_.cols());
    src_.weights = w_.data();
    src_.stride = src_.count;
    params_.inv_two_sigma2 = k1.inv_two_sigma2();
    params_.cutoff_r2 = k1.cutoff_r2();
    out_.resize(static_cast<std::size_t>(src_.channels));
  }

  const std::vector<double>& at(const MatrixXd& q, Eigen::Index i) {
    double p[3];
    for (int a = 0; a < src_.dim; ++a) p[a] = q(i, a);
    simd::gauss_moments(p, src_, params_, out_.data(), nullptr);
    return out_;
  }

 private:
  MatrixXd y_;
  MatrixXd w_;
  simd::GaussSources src_;
  simd::GaussParams params_;
  std::vector<double> out_;
};

VectorXd atlas_weights(const AtlasVarifold& atlas, bool literal) {
  const mesh::Geometry g = mesh::compute_geometry(atlas.family);
  VectorXd w = g.volumes;
  if (literal) w = w.cwiseProduct(atlas.weight);
  return w;
}

void check_mode(Mode mode, const varifold::FeatureSpace& space) {
  const bool ok = mode == Mode::CellType ? space.kind == varifold::FeatureSpace::Kind::Categorical
                                         : space.kind == varifold::FeatureSpace::Kind::CountVector;
  if (!ok) {
    throw Error(ErrorCode::ModeMismatch, std::string("target features do not fit mode ") + to_string(mode));
  }
}

void check_metric(Mode mode, const kernels::FeatureKernel& k2) {
  const bool ok = mode == Mode::CellType ? k2.kind == kernels::FeatureKernel::Kind::Identity
                                         : k2.kind == kernels::FeatureKernel::Kind::EuclideanDot && !k2.log_scale;
  if (!ok) {
    throw Error(ErrorCode::ModeMismatch,
                std::string("mode ") + to_string(mode) + " needs the " +
                    (mode == Mode::CellType ? "identity" : "linear Euclidean") + " feature kernel");
  }
}

// Constraint rows with identical zeta merged into one slab.
struct Slabs {
  MatrixXd z;  // rows
  VectorXd lo, hi, norm2;
  std::vector<std::vector<int>> members;
};

Slabs merge_slabs(const QpProblem& qp) {
  std::map<std::vector<double>, int> index;
  std::vector<VectorXd> rows;
  std::vector<double> lo, hi;
  Slabs s;
  const int L = qp.num_labels();
  for (int c = 0; c < qp.Z.rows(); ++c) {
    std::vector<double> key(L);
    for (int l = 0; l < L; ++l) key[l] = qp.Z(c, l);
    auto [it, fresh] = index.emplace(key, static_cast<int>(rows.size()));
    if (fresh) {
      rows.push_back(qp.Z.row(c).transpose());
      lo.push_back(qp.lo[c]);
      hi.push_back(qp.hi[c]);
      s.members.emplace_back();
    } else {
      lo[it->second] = std::max(lo[it->second], qp.lo[c]);
      hi[it->second] = std::min(hi[it->second], qp.hi[c]);
    }
    s.members[it->second].push_back(c);
  }
  const int m = static_cast<int>(rows.size());
  s.z.resize(m, L);
  s.lo.resize(m);
  s.hi.resize(m);
  s.norm2.resize(m);
  for (int r = 0; r < m; ++r) {
    s.z.row(r) = rows[r].transpose();
    s.lo[r] = lo[r];
    s.hi[r] = hi[r];
    s.norm2[r] = rows[r].squaredNorm();
  }
  return s;
}

[[noreturn]] void throw_infeasible(const Slabs& s, const std::vector<int>& bad) {
  std::ostringstream os;
  os << "density bounds cannot be met; violated simplices:";
  int shown = 0;
  for (int r : bad) {
    for (int c : s.members[r]) {
      if (shown++ < 20) os << ' ' << c;
    }
  }
  if (shown > 20) os << " ... (" << shown << " total)";
  throw Error(ErrorCode::Infeasible, os.str());
}

// Violation of slab r at value val, relative to the bound it breaks.
double slab_violation(const Slabs& s, int r, double val) {
  if (val < s.lo[r]) return (s.lo[r] - val) / std::max(1.0, std::abs(s.lo[r]));
  if (val > s.hi[r]) return (val - s.hi[r]) / std::max(1.0, std::abs(s.hi[r]));
  return 0.0;
}

// Projection of u onto {v : lo <= z v <= hi (all slabs), v >= 0 if nonneg}
// by dual coordinate ascent (Hildreth). Returns the max relative violation.
double project_slabs(const Slabs& s, const VectorXd& u, bool nonneg, int sweeps, double tol, VectorXd& v) {
  const int m = static_cast<int>(s.z.rows());
  const int L = static_cast<int>(u.size());
  VectorXd lam = VectorXd::Zero(m);
  VectorXd lam_pos = VectorXd::Zero(nonneg ? L : 0);
  v = u;
  auto violation = [&]() {
    double worst = 0.0;
    for (int r = 0; r < m; ++r) {
      if (s.norm2[r] == 0.0) continue;
      const double val = s.z.row(r).dot(v);
      worst = std::max(worst, slab_violation(s, r, val));
    }
    if (nonneg) worst = std::max(worst, -v.minCoeff() / std::max(1.0, v.cwiseAbs().maxCoeff()));
    return worst;
  };
  for (int it = 0; it < sweeps; ++it) {
    double moved = 0.0;
    for (int r = 0; r < m; ++r) {
      if (s.norm2[r] == 0.0) continue;
      const double w = s.z.row(r).dot(v) + lam[r] * s.norm2[r];
      double next = 0.0;
      if (w > s.hi[r]) next = (w - s.hi[r]) / s.norm2[r];
      else if (w < s.lo[r]) next = (w - s.lo[r]) / s.norm2[r];
      const double delta = next - lam[r];
      if (delta != 0.0) {
        v -= delta * s.z.row(r).transpose();
        lam[r] = next;
        moved = std::max(moved, std::abs(delta) * std::sqrt(s.norm2[r]));
      }
    }
    if (nonneg) {
      for (int l = 0; l < L; ++l) {
        // Constraint -v_l <= 0 with multiplier >= 0.
        const double w = v[l] - lam_pos[l];
        const double next = std::max(0.0, -w);
        const double delta = next - lam_pos[l];
        if (delta != 0.0) {
          v[l] += delta;
          lam_pos[l] = next;
          moved = std::max(moved, std::abs(delta));
        }
      }
    }
    if (moved <= tol * std::max(1.0, v.cwiseAbs().maxCoeff())) break;
  }
  return violation();
}

class Projector {
 public:
  Projector(const QpProblem& qp, const QpOptions& opt) : slabs_(merge_slabs(qp)), opt_(opt), F_(qp.num_features()) {
    std::vector<int> bad;
    for (int r = 0; r < slabs_.z.rows(); ++r) {
      const bool empty_row = slabs_.norm2[r] == 0.0 && (slabs_.lo[r] > 0.0 || slabs_.hi[r] < 0.0);
      if (slabs_.lo[r] > slabs_.hi[r] || empty_row) bad.push_back(r);
    }
    if (!bad.empty()) throw_infeasible(slabs_, bad);
    // The feasible set is nonempty iff some u >= 0 meets every slab.
    VectorXd v;
    const double viol = project_slabs(slabs_, VectorXd::Zero(qp.num_labels()), true, 50 * opt.projection_sweeps,
                                      opt.projection_tol, v);
    if (viol > 1e-7) {
      for (int r = 0; r < slabs_.z.rows(); ++r) {
        const double val = slabs_.z.row(r).dot(v);
        if (slab_violation(slabs_, r, val) > 1e-7) bad.push_back(r);
      }
      throw_infeasible(slabs_, bad);
    }
  }

  // Dykstra between {theta >= 0} and {theta : theta 1 in P}.
  MatrixXd operator()(const MatrixXd& theta0) const {
    const double scale = std::max(1.0, theta0.cwiseAbs().maxCoeff());
    MatrixXd x = theta0;
    MatrixXd p = MatrixXd::Zero(x.rows(), x.cols());
    MatrixXd q = p;
    VectorXd v;
    for (int it = 0; it < opt_.projection_sweeps; ++it) {
      const MatrixXd y = (x + p).cwiseMax(0.0);
      p = x + p - y;
      const MatrixXd yq = y + q;
      const VectorXd u = yq.rowwise().sum();
      project_slabs(slabs_, u, false, opt_.projection_sweeps, opt_.projection_tol, v);
      MatrixXd xn = yq;
      xn.colwise() += (v - u) / F_;
      q = yq - xn;
      const double change = (xn - x).cwiseAbs().maxCoeff();
      const double gap = (xn - y).cwiseAbs().maxCoeff();
      x = std::move(xn);
      if (change <= opt_.projection_tol * scale && gap <= opt_.projection_tol * scale) break;
    }
    // Remaining negatives are round-off of the alternating scheme.
    return x.cwiseMax(0.0);
  }

 private:
  Slabs slabs_;
  QpOptions opt_;
  int F_;
};

double max_violation(const QpProblem& qp, const MatrixXd& theta) {
  double worst = std::max(0.0, -theta.minCoeff());
  const VectorXd r = qp.Z * theta.rowwise().sum();
  for (int c = 0; c < r.size(); ++c) worst = std::max({worst, qp.lo[c] - r[c], r[c] - qp.hi[c]});
  return worst;
}

double spectral_bound(const MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

}  // namespace

const char* to_string(Mode m) { return m == Mode::CellType ? "celltype" : "genecount"; }

void normalize(AtlasVarifold& atlas) {
  mesh::validate_structure(atlas.family);
  const int m = atlas.num_simplices();
  const int L = atlas.num_labels();
  if (L == 0) throw Error(ErrorCode::InvalidArgument, "atlas has no labels");
  if (atlas.zeta.rows() != m || atlas.zeta.cols() != L) {
    throw Error(ErrorCode::InvalidArgument, "atlas zeta must be num_simplices x num_labels");
  }
  if (!atlas.zeta.allFinite() || atlas.zeta.minCoeff() < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "atlas zeta must be finite and nonnegative");
  }
  if (atlas.alpha_min.size() == 0) atlas.alpha_min = VectorXd::Zero(m);
  if (atlas.alpha_max.size() == 0) atlas.alpha_max = VectorXd::Constant(m, kInf);
  if (atlas.weight.size() == 0) atlas.weight = VectorXd::Ones(m);
  if (atlas.alpha_min.size() != m || atlas.alpha_max.size() != m || atlas.weight.size() != m) {
    throw Error(ErrorCode::InvalidArgument, "atlas bounds and weights need one entry per simplex");
  }
}

double QpProblem::phi(const MatrixXd& theta) const {
  return (theta.transpose() * A * theta).trace() - 2.0 * (b.array() * theta.array()).sum();
}

MatrixXd QpProblem::phi_gradient(const MatrixXd& theta) const {
  return 2.0 * (0.5 * (A + A.transpose()) * theta - b);
}

VectorXd imputed_density(const AtlasVarifold& atlas, const MatrixXd& theta) {
  return atlas.zeta * theta.rowwise().sum();
}

varifold::MeshVarifold imputed_varifold(const AtlasVarifold& atlas, const LabelParameters& theta, Mode mode,
                                        bool literal_weights, bool allow_zero) {
  if (theta.theta.rows() != atlas.num_labels()) {
    throw Error(ErrorCode::InvalidArgument, "theta needs one row per atlas label");
  }
  if (theta.theta.cols() != theta.space.size()) {
    throw Error(ErrorCode::InvalidArgument, "theta columns do not match its feature space");
  }
  check_mode(mode, theta.space);
  const MatrixXd mix = atlas.zeta * theta.theta;  // sum_l zeta_c(l) theta_l
  const VectorXd dens = mix.rowwise().sum();
  varifold::MeshVarifold v;
  v.family = atlas.family;
  v.space = theta.space;
  v.alpha = dens;
  v.zeta = MatrixXd::Zero(mix.rows(), mix.cols());
  for (int c = 0; c < mix.rows(); ++c) {
    if (!(dens[c] > 0.0)) {
      if (allow_zero) {
        v.alpha[c] = 0.0;
        continue;
      }
      throw Error(ErrorCode::ZeroDensity, "simplex " + std::to_string(c) + " has zero imputed density");
    }
    // Categorical: the normalized mixture. Count vectors: a Dirac at the
    // mean, so alpha * zeta = mix in both cases.
    v.zeta.row(c) = mix.row(c) / dens[c];
  }
  if (literal_weights) v.alpha = v.alpha.cwiseProduct(atlas.weight);
  return v;
}

QpProblem assemble_qp(const AtlasVarifold& atlas, const varifold::MeshVarifold& target,
                      const kernels::SpatialKernel& k1, Mode mode, bool literal_weights) {
  check_mode(mode, target.space);
  if (target.family.dim != atlas.family.dim) throw Error(ErrorCode::InvalidArgument, "atlas/target dimension");
  const int L = atlas.num_labels();
  const int F = target.space.size();
  const mesh::Geometry ga = mesh::compute_geometry(atlas.family);
  const mesh::Geometry gt = mesh::compute_geometry(target.family);
  const VectorXd wa = atlas_weights(atlas, literal_weights);

  QpProblem qp;
  qp.A = MatrixXd::Zero(L, L);
  qp.b = MatrixXd::Zero(L, F);

  // Sources weighted by w_c zeta_c(l): A(l0, .) += w_c0 zeta_c0(l0) S(c0, .).
  const MatrixXd za = atlas.zeta.array().colwise() * wa.array();
  KernelSums sa(ga.centers, za, k1);
  for (int c = 0; c < atlas.num_simplices(); ++c) {
    const auto& s = sa.at(ga.centers, c);
    const Eigen::Map<const VectorXd> sv(s.data(), L);
    qp.A += za.row(c).transpose() * sv.transpose();
  }
  qp.A = 0.5 * (qp.A + qp.A.transpose());

  const VectorXd mt = varifold::masses(target);
  const MatrixXd zt = target.zeta.array().colwise() * mt.array();
  KernelSums st(gt.centers, zt, k1);
  for (int c = 0; c < atlas.num_simplices(); ++c) {
    const auto& s = st.at(ga.centers, c);
    const Eigen::Map<const VectorXd> sv(s.data(), F);
    qp.b += za.row(c).transpose() * sv.transpose();
  }

  qp.Z = atlas.zeta;
  qp.lo = atlas.alpha_min;
  qp.hi = atlas.alpha_max;
  kernels::KernelMetric metric;
  metric.k1 = k1;
  metric.k2.kind =
      mode == Mode::CellType ? kernels::FeatureKernel::Kind::Identity : kernels::FeatureKernel::Kind::EuclideanDot;
  qp.constant = kernels::varifold_inner(metric, target, target);
  return qp;
}

MatrixXd project_feasible(const QpProblem& qp, const MatrixXd& theta, const QpOptions& opt) {
  return Projector(qp, opt)(theta);
}

QpSolution solve_qp(const QpProblem& qp, const QpOptions& opt, const MatrixXd* warm) {
  const int L = qp.num_labels();
  const int F = qp.num_features();
  if (qp.A.rows() != qp.A.cols() || qp.b.rows() != L || qp.Z.cols() != L || qp.lo.size() != qp.Z.rows() ||
      qp.hi.size() != qp.Z.rows()) {
    throw Error(ErrorCode::InvalidArgument, "inconsistent QP shapes");
  }
  if (!qp.A.allFinite() || !qp.b.allFinite()) throw Error(ErrorCode::NonFinite, "QP data is not finite");
  const Projector proj(qp, opt);

  const double lip = 2.0 * spectral_bound(qp.A);
  const double step = lip > 0.0 ? 1.0 / lip : 1.0;
  const double scale = 2.0 * qp.b.norm() + 1e-300;

  MatrixXd theta = warm && warm->rows() == L && warm->cols() == F ? *warm : MatrixXd::Zero(L, F);
  theta = proj(theta);
  double f = qp.phi(theta);
  MatrixXd y = theta;
  double t = 1.0;

  QpSolution sol;
  auto residual = [&](const MatrixXd& th) {
    const MatrixXd g = qp.phi_gradient(th);
    return (th - proj(th - step * g)).norm() / step / std::max(scale, 2.0 * spectral_bound(qp.A) * th.norm());
  };
  sol.kkt_residual = residual(theta);
  int it = 0;
  while (sol.kkt_residual > opt.tol && it < opt.max_iters) {
    ++it;
    MatrixXd next = proj(y - step * qp.phi_gradient(y));
    const double fn = qp.phi(next);
    if (fn > f) {
      // Adaptive restart: drop momentum and take a plain projected step.
      y = theta;
      t = 1.0;
      next = proj(theta - step * qp.phi_gradient(theta));
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tn) * (next - theta);
    theta = std::move(next);
    f = qp.phi(theta);
    t = tn;
    if (it % 5 == 0 || it == opt.max_iters) sol.kkt_residual = residual(theta);
  }
  sol.kkt_residual = residual(theta);
  sol.theta = theta;
  sol.objective = qp.phi(theta);
  sol.max_violation = max_violation(qp, theta);
  sol.iterations = it;
  sol.status = sol.kkt_residual <= opt.tol ? QpStatus::Converged : QpStatus::MaxIterations;
  return sol;
}

AtlasResult alternate_minimize(const AtlasVarifold& atlas_in, const varifold::MeshVarifold& target,
                               const kernels::KernelMetric& metric, const AtlasConfig& config) {
  AtlasVarifold atlas = atlas_in;
  normalize(atlas);
  check_mode(config.mode, target.space);
  check_metric(config.mode, metric.k2);
  if (config.rounds < 1) throw Error(ErrorCode::InvalidArgument, "rounds must be >= 1");

  const auto& rc = config.registration;
  const double inv_s2 = 1.0 / (rc.sigma * rc.sigma);
  AtlasResult out;
  out.theta.labels = atlas.labels;
  out.theta.space = target.space;

  lddmm::ControlTrajectory a = lddmm::ControlTrajectory::zeros(rc.nt, atlas.family.num_vertices(), atlas.family.dim);
  double kinetic = 0.0;
  AtlasVarifold moved = atlas;
  MatrixXd theta_prev;

  for (int round = 0; round < config.rounds; ++round) {
    const QpProblem qp = assemble_qp(moved, target, metric.k1, config.mode, config.literal_weights);
    QpSolution sol = solve_qp(qp, config.qp, theta_prev.size() ? &theta_prev : nullptr);
    theta_prev = sol.theta;
    out.theta.theta = sol.theta;
    out.objective_trace.push_back(kinetic + inv_s2 * std::max(0.0, sol.objective + qp.constant));
    out.qp.push_back(std::move(sol));

    const varifold::MeshVarifold templ =
        imputed_varifold(atlas, out.theta, config.mode, config.literal_weights, /*allow_zero=*/true);
    out.registration = lddmm::register_varifolds(templ, target, metric, rc, round == 0 ? nullptr : &a);
    a = out.registration.a;
    kinetic = out.registration.diagnostics.kinetic.back();
    out.objective_trace.push_back(out.registration.diagnostics.objective.back());
    moved.family.vertices = out.registration.traj.final();
  }
  return out;
}

}  // namespace imvar::atlas
