#include "imvar/lddmm.hpp"

#include "imvar/error.hpp"
#include "imvar/simd/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

namespace imvar::lddmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Gaussian moments of the channels of `w` over sources `z`, queried one row
// at a time.
class FlowSum {
 public:
  FlowSum(const MatrixXd& z, const MatrixXd& w, const FlowKernel& kv, bool gradient) : w_(w) {
    src_.dim = static_cast<int>(z.cols());
    src_.count = static_cast<std::size_t>(z.rows());
    for (int a = 0; a < src_.dim; ++a) src_.coords[a] = z.col(a).data();
    src_.channels = static_cast<int>(w_.cols());
    src_.weights = w_.data();
    src_.stride = src_.count;
    params_.inv_two_sigma2 = 0.5 / (kv.sigma * kv.sigma);
    params_.gradient = gradient;
    sums_.resize(src_.channels);
    grads_.resize(static_cast<std::size_t>(src_.channels) * src_.dim);
  }

  void at(const MatrixXd& queries, Eigen::Index i) {
    double q[3];
    for (int a = 0; a < src_.dim; ++a) q[a] = queries(i, a);
    simd::gauss_moments(q, src_, params_, sums_.data(), params_.gradient ? grads_.data() : nullptr);
  }

  double sum(int k) const { return sums_[k]; }
  double grad(int k, int a) const { return grads_[static_cast<std::size_t>(k) * src_.dim + a]; }

 private:
  MatrixXd w_;
  simd::GaussSources src_;
  simd::GaussParams params_;
  std::vector<double> sums_;
  std::vector<double> grads_;
};

void check_shapes(const MatrixXd& z, const MatrixXd& a) {
  if (z.rows() != a.rows() || z.cols() != a.cols()) {
    throw Error(ErrorCode::InvalidArgument, "momentum and state shapes differ");
  }
  if (z.cols() < 1 || z.cols() > 3) throw Error(ErrorCode::InvalidArgument, "flow dimension must be 1, 2 or 3");
}

void check_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFinite, std::string(what) + " is not finite");
}

struct Vjp {
  MatrixXd k_mu;  // K(Z) mu
  MatrixXd dz;    // d/dZ of sum_i mu_i . (K(Z) a)_i
};

// Vector-Jacobian product of Z -> K(Z) a with cotangent mu.
Vjp flow_vjp(const MatrixXd& z, const MatrixXd& a, const MatrixXd& mu, const FlowKernel& kv) {
  const Eigen::Index n = z.rows();
  const int d = static_cast<int>(z.cols());
  MatrixXd w(n, 2 * d);
  w << a, mu;
  FlowSum fs(z, w, kv, true);
  const double inv_s2 = 1.0 / (kv.sigma * kv.sigma);
  Vjp out{MatrixXd(n, d), MatrixXd(n, d)};
  for (Eigen::Index l = 0; l < n; ++l) {
    fs.at(z, l);
    for (int b = 0; b < d; ++b) {
      out.k_mu(l, b) = fs.sum(d + b);
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += mu(l, c) * fs.grad(c, b) + a(l, c) * fs.grad(d + c, b);
      out.dz(l, b) = inv_s2 * acc;
    }
  }
  return out;
}

struct Adjoint {
  CoStateTrajectory costate;
  ControlTrajectory grad;
};

// Reverse pass through the RK4 steps. lambda is the derivative of the
// objective with respect to z_k; the kinetic term h a_k^T K(z_k) a_k enters
// at stage 1 by shifting its cotangent by h a_k.
Adjoint reverse(const ControlTrajectory& a, const StateTrajectory& traj, const MatrixXd& terminal_grad,
                const FlowKernel& kv, bool kinetic) {
  const int nt = a.nt();
  if (static_cast<int>(traj.stages.size()) != nt) {
    throw Error(ErrorCode::InvalidArgument, "trajectory does not match the control grid");
  }
  const double h = a.step();
  Adjoint out;
  out.costate.p.resize(nt + 1);
  out.grad.a.resize(nt);
  MatrixXd lambda = terminal_grad;
  out.costate.p[nt] = -lambda;
  for (int k = nt - 1; k >= 0; --k) {
    const MatrixXd& ak = a.a[k];
    const auto& st = traj.stages[k];
    MatrixXd kb1 = (h / 6.0) * lambda;
    MatrixXd kb2 = (h / 3.0) * lambda;
    MatrixXd kb3 = kb2;
    const MatrixXd kb4 = kb1;
    MatrixXd zb = lambda;

    Vjp v = flow_vjp(st[3], ak, kb4, kv);
    MatrixXd abar = v.k_mu;
    zb += v.dz;
    kb3 += h * v.dz;

    v = flow_vjp(st[2], ak, kb3, kv);
    abar += v.k_mu;
    zb += v.dz;
    kb2 += (h / 2.0) * v.dz;

    v = flow_vjp(st[1], ak, kb2, kv);
    abar += v.k_mu;
    zb += v.dz;
    kb1 += (h / 2.0) * v.dz;

    if (kinetic) {
      v = flow_vjp(st[0], ak, kb1 + h * ak, kv);
      // K(kb1 + h a) plus the second h K a from differentiating a^T K a in a.
      abar += v.k_mu + h * kernel_apply(st[0], ak, kv);
    } else {
      v = flow_vjp(st[0], ak, kb1, kv);
      abar += v.k_mu;
    }
    zb += v.dz;

    out.grad.a[k] = std::move(abar);
    lambda = std::move(zb);
    out.costate.p[k] = -lambda;
  }
  return out;
}

double kinetic_energy(const ControlTrajectory& a, const StateTrajectory& traj, const FlowKernel& kv) {
  double e = 0.0;
  for (int k = 0; k < a.nt(); ++k) {
    e += a.step() * (a.a[k].array() * kernel_apply(traj.z[k], a.a[k], kv).array()).sum();
  }
  return e;
}

double min_volume(const mesh::SimplicialFamily& family, const MatrixXd& x) {
  double v = std::numeric_limits<double>::infinity();
  for (int c = 0; c < family.num_simplices(); ++c) v = std::min(v, mesh::signed_volume(x, family.simplex(c)));
  return v;
}

}  // namespace

ControlTrajectory ControlTrajectory::zeros(int nt, int n, int dim) {
  if (nt < 1) throw Error(ErrorCode::InvalidArgument, "nt must be positive");
  ControlTrajectory c;
  c.a.assign(nt, MatrixXd::Zero(n, dim));
  return c;
}

VectorXd ControlTrajectory::flatten() const {
  const Eigen::Index block = static_cast<Eigen::Index>(n()) * dim();
  VectorXd x(block * nt());
  for (int k = 0; k < nt(); ++k) x.segment(k * block, block) = Eigen::Map<const VectorXd>(a[k].data(), block);
  return x;
}

ControlTrajectory ControlTrajectory::unflatten(const VectorXd& x, int nt, int n, int dim) {
  const Eigen::Index block = static_cast<Eigen::Index>(n) * dim;
  if (x.size() != block * nt) throw Error(ErrorCode::InvalidArgument, "flat control has the wrong length");
  ControlTrajectory c;
  c.a.resize(nt);
  for (int k = 0; k < nt; ++k) c.a[k] = Eigen::Map<const MatrixXd>(x.data() + k * block, n, dim);
  return c;
}

MatrixXd kernel_apply(const MatrixXd& z, const MatrixXd& a, const FlowKernel& kv) {
  return kernel_apply_at(z, z, a, kv);
}

MatrixXd kernel_apply_at(const MatrixXd& y, const MatrixXd& z, const MatrixXd& a, const FlowKernel& kv) {
  check_shapes(z, a);
  if (y.cols() != z.cols()) throw Error(ErrorCode::InvalidArgument, "query and source dimensions differ");
  const int d = static_cast<int>(z.cols());
  FlowSum fs(z, a, kv, false);
  MatrixXd out(y.rows(), d);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    fs.at(y, i);
    for (int b = 0; b < d; ++b) out(i, b) = fs.sum(b);
  }
  return out;
}

StateTrajectory flow_forward(const ControlTrajectory& a, const MatrixXd& z0, const FlowKernel& kv) {
  const int nt = a.nt();
  if (nt < 1) throw Error(ErrorCode::InvalidArgument, "control trajectory is empty");
  check_shapes(z0, a.a[0]);
  const double h = a.step();
  StateTrajectory t;
  t.z.reserve(nt + 1);
  t.stages.reserve(nt);
  t.z.push_back(z0);
  for (int k = 0; k < nt; ++k) {
    const MatrixXd& z = t.z.back();
    const MatrixXd& ak = a.a[k];
    std::array<MatrixXd, 4> st;
    st[0] = z;
    const MatrixXd k1 = kernel_apply(st[0], ak, kv);
    st[1] = z + (h / 2.0) * k1;
    const MatrixXd k2 = kernel_apply(st[1], ak, kv);
    st[2] = z + (h / 2.0) * k2;
    const MatrixXd k3 = kernel_apply(st[2], ak, kv);
    st[3] = z + h * k3;
    const MatrixXd k4 = kernel_apply(st[3], ak, kv);
    MatrixXd next = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_finite(next, "flow state");
    t.stages.push_back(std::move(st));
    t.z.push_back(std::move(next));
  }
  return t;
}

double hamiltonian(const MatrixXd& p, const MatrixXd& z, const MatrixXd& a, const FlowKernel& kv) {
  check_shapes(z, p);
  const MatrixXd ka = kernel_apply(z, a, kv);
  return (p.array() * ka.array()).sum() - (a.array() * ka.array()).sum();
}

MatrixXd hamiltonian_dz(const MatrixXd& p, const MatrixXd& z, const MatrixXd& a, const FlowKernel& kv) {
  // d/dz [p . K a] - d/dz [a . K a] = vjp with cotangent p - a.
  check_shapes(z, p);
  return flow_vjp(z, a, p - a, kv).dz;
}

CoStateTrajectory adjoint_backward(const ControlTrajectory& a, const StateTrajectory& traj,
                                   const MatrixXd& terminal_grad, const FlowKernel& kv) {
  return reverse(a, traj, terminal_grad, kv, true).costate;
}

RegistrationProblem::RegistrationProblem(varifold::MeshVarifold templ, varifold::MeshVarifold target,
                                         kernels::KernelMetric metric, RegistrationConfig config)
    : templ_(std::move(templ)), target_(std::move(target)), metric_(metric), config_(config) {
  if (!(config_.sigma > 0.0) || !(config_.kv.sigma > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "sigma and the flow kernel width must be positive");
  }
  if (config_.nt < 1) throw Error(ErrorCode::InvalidArgument, "nt must be positive");
  varifold::validate(templ_);
  varifold::validate(target_);
  if (templ_.space.kind != target_.space.kind || templ_.space.size() != target_.space.size()) {
    throw Error(ErrorCode::KindMismatch, "template and target live on different feature spaces");
  }
  target_self_ = kernels::varifold_inner(metric_, target_, target_);
}

RegistrationProblem::Evaluation RegistrationProblem::evaluate(const ControlTrajectory& a) const {
  Evaluation e;
  e.traj = flow_forward(a, templ_.family.vertices, config_.kv);
  e.kinetic = kinetic_energy(a, e.traj, config_.kv);
  const varifold::MeshVarifold moved = varifold::deform(templ_, e.traj.final());
  e.sqdist = kernels::attachment(metric_, moved, target_, false, &target_self_).sqdist;
  e.attachment = e.sqdist / (config_.sigma * config_.sigma);
  e.objective = e.kinetic + e.attachment;
  return e;
}

ControlTrajectory RegistrationProblem::gradient(const ControlTrajectory& a, Evaluation* eval) const {
  Evaluation e;
  e.traj = flow_forward(a, templ_.family.vertices, config_.kv);
  e.kinetic = kinetic_energy(a, e.traj, config_.kv);
  const varifold::MeshVarifold moved = varifold::deform(templ_, e.traj.final());
  const kernels::Attachment att = kernels::attachment(metric_, moved, target_, true, &target_self_);
  const double w = 1.0 / (config_.sigma * config_.sigma);
  e.sqdist = att.sqdist;
  e.attachment = w * att.sqdist;
  e.objective = e.kinetic + e.attachment;
  Adjoint adj = reverse(a, e.traj, w * att.gradient, config_.kv, true);
  if (eval) *eval = std::move(e);
  return std::move(adj.grad);
}

CoStateTrajectory RegistrationProblem::costate(const ControlTrajectory& a) const {
  const StateTrajectory traj = flow_forward(a, templ_.family.vertices, config_.kv);
  const varifold::MeshVarifold moved = varifold::deform(templ_, traj.final());
  const MatrixXd g = kernels::attachment(metric_, moved, target_, true, &target_self_).gradient /
                     (config_.sigma * config_.sigma);
  return adjoint_backward(a, traj, g, config_.kv);
}

double objective(const ControlTrajectory& a, const varifold::MeshVarifold& templ,
                 const varifold::MeshVarifold& target, const kernels::KernelMetric& metric,
                 const RegistrationConfig& config) {
  return RegistrationProblem(templ, target, metric, config).evaluate(a).objective;
}

ControlTrajectory gradient(const ControlTrajectory& a, const varifold::MeshVarifold& templ,
                           const varifold::MeshVarifold& target, const kernels::KernelMetric& metric,
                           const RegistrationConfig& config) {
  return RegistrationProblem(templ, target, metric, config).gradient(a);
}

const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::MaxIterations: return "max_iterations";
    case Status::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

namespace {

struct Iterate {
  VectorXd x;
  VectorXd g;
  RegistrationProblem::Evaluation eval;
};

// L-BFGS two-loop recursion; falls back to -g with no curvature pairs.
VectorXd lbfgs_direction(const VectorXd& g, const std::deque<std::pair<VectorXd, VectorXd>>& mem) {
  VectorXd q = -g;
  std::vector<double> alpha(mem.size());
  for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
    const auto& [s, y] = mem[i];
    alpha[i] = s.dot(q) / y.dot(s);
    q -= alpha[i] * y;
  }
  if (!mem.empty()) {
    const auto& [s, y] = mem.back();
    q *= s.dot(y) / y.dot(y);
  }
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const auto& [s, y] = mem[i];
    const double beta = y.dot(q) / y.dot(s);
    q += (alpha[i] - beta) * s;
  }
  return q;
}

}  // namespace

RegistrationResult register_varifolds(const varifold::MeshVarifold& templ, const varifold::MeshVarifold& target,
                                      const kernels::KernelMetric& metric, const RegistrationConfig& config,
                                      const ControlTrajectory* initial) {
  const RegistrationProblem problem(templ, target, metric, config);
  const int n = templ.family.num_vertices();
  const int d = templ.family.dim;
  const int nt = config.nt;

  ControlTrajectory a0 = ControlTrajectory::zeros(nt, n, d);
  if (initial) {
    if (initial->nt() != nt || initial->n() != n || initial->dim() != d) {
      throw Error(ErrorCode::InvalidArgument, "warm start does not match the problem shape");
    }
    a0 = *initial;
  }

  RegistrationResult result;
  Diagnostics& diag = result.diagnostics;
  const double vv = problem.target_self_inner();
  diag.initial_sqdist = kernels::attachment(metric, templ, target, false, &vv).sqdist;

  auto grad_at = [&](const VectorXd& x) {
    Iterate it;
    it.x = x;
    it.g = problem.gradient(ControlTrajectory::unflatten(x, nt, n, d), &it.eval).flatten();
    return it;
  };
  auto record = [&](const Iterate& it) {
    diag.objective.push_back(it.eval.objective);
    diag.kinetic.push_back(it.eval.kinetic);
    diag.attachment.push_back(it.eval.attachment);
  };

  Iterate cur = grad_at(a0.flatten());
  record(cur);
  std::deque<std::pair<VectorXd, VectorXd>> memory;
  double step_scale = 0.0;
  diag.status = Status::MaxIterations;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    const double gnorm = cur.g.norm();
    if (gnorm <= config.grad_tol) {
      diag.status = Status::Converged;
      break;
    }
    VectorXd dir = config.optimizer == Optimizer::Lbfgs ? lbfgs_direction(cur.g, memory) : VectorXd(-cur.g);
    double slope = cur.g.dot(dir);
    if (!(slope < 0.0)) {
      memory.clear();
      dir = -cur.g;
      slope = -gnorm * gnorm;
    }
    double t;
    if (config.optimizer == Optimizer::Lbfgs && !memory.empty()) {
      t = 1.0;
    } else if (step_scale > 0.0) {
      t = 2.0 * step_scale;
    } else {
      // First trial step: the linear model predicts a 10% decrease.
      t = 0.1 * std::max(cur.eval.objective, 1e-300) / (gnorm * gnorm);
    }

    bool accepted = false;
    RegistrationProblem::Evaluation trial;
    VectorXd x_new;
    for (int b = 0; b <= config.max_backtracks; ++b) {
      x_new = cur.x + t * dir;
      bool finite = true;
      try {
        trial = problem.evaluate(ControlTrajectory::unflatten(x_new, nt, n, d));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        finite = false;
      }
      if (finite && std::isfinite(trial.objective) &&
          trial.objective <= cur.eval.objective + config.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= config.backtrack;
    }
    if (!accepted) {
      diag.status = Status::LineSearchFailed;
      break;
    }
    if (config.optimizer == Optimizer::GradientDescent) step_scale = t;
    else if (memory.empty()) step_scale = t;

    const double f_prev = cur.eval.objective;
    Iterate next = grad_at(x_new);
    if (config.optimizer == Optimizer::Lbfgs) {
      VectorXd s = next.x - cur.x;
      VectorXd y = next.g - cur.g;
      if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
        memory.emplace_back(std::move(s), std::move(y));
        if (static_cast<int>(memory.size()) > config.lbfgs_memory) memory.pop_front();
      }
    }
    cur = std::move(next);
    record(cur);
    diag.iterations = iter + 1;
    if (config.verbose) {
      std::fprintf(stderr, "iter %d  E=%.6e  kin=%.4e  att=%.4e  step=%.3e\n", iter + 1, cur.eval.objective,
                   cur.eval.kinetic, cur.eval.attachment, t);
    }
    if ((f_prev - cur.eval.objective) <= config.tol * std::max(std::abs(f_prev), 1e-300)) {
      diag.status = Status::Converged;
      break;
    }
  }

  result.a = ControlTrajectory::unflatten(cur.x, nt, n, d);
  result.traj = std::move(cur.eval.traj);
  diag.final_sqdist = cur.eval.sqdist;
  diag.min_deformed_volume = min_volume(templ.family, result.traj.final());

  const CoStateTrajectory p = problem.costate(result.a);
  double h0 = 0.0, drift = 0.0;
  for (int k = 0; k < nt; ++k) {
    const double hk = hamiltonian(p.p[k], result.traj.z[k], result.a.a[k], config.kv);
    if (k == 0) h0 = hk;
    drift = std::max(drift, std::abs(hk - h0));
  }
  diag.hamiltonian_drift = std::abs(h0) > 0.0 ? drift / std::abs(h0) : drift;
  return result;
}

MatrixXd transport_points(const ControlTrajectory& a, const StateTrajectory& traj, const FlowKernel& kv,
                          const MatrixXd& points) {
  if (static_cast<int>(traj.stages.size()) != a.nt()) {
    throw Error(ErrorCode::InvalidArgument, "trajectory does not match the control grid");
  }
  if (points.rows() == 0) return points;
  const double h = a.step();
  MatrixXd y = points;
  for (int k = 0; k < a.nt(); ++k) {
    const auto& st = traj.stages[k];
    const MatrixXd& ak = a.a[k];
    const MatrixXd l1 = kernel_apply_at(y, st[0], ak, kv);
    const MatrixXd l2 = kernel_apply_at(y + (h / 2.0) * l1, st[1], ak, kv);
    const MatrixXd l3 = kernel_apply_at(y + (h / 2.0) * l2, st[2], ak, kv);
    const MatrixXd l4 = kernel_apply_at(y + h * l3, st[3], ak, kv);
    y += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
  }
  check_finite(y, "transported points");
  return y;
}

GeodesicPath shoot(const MatrixXd& z0, const MatrixXd& p0, const FlowKernel& kv, int nt) {
  check_shapes(z0, p0);
  if (nt < 1) throw Error(ErrorCode::InvalidArgument, "nt must be positive");
  const double h = 1.0 / nt;
  const int d = static_cast<int>(z0.cols());
  const double inv_s2 = 1.0 / (kv.sigma * kv.sigma);

  // (dz, dp) at (z, p): dz = K(z) p / 2, dp = -dH/dz with a = p / 2.
  auto field = [&](const MatrixXd& z, const MatrixXd& p, MatrixXd& dz, MatrixXd& dp) {
    FlowSum fs(z, p, kv, true);
    dz.resize(z.rows(), d);
    dp.resize(z.rows(), d);
    for (Eigen::Index l = 0; l < z.rows(); ++l) {
      fs.at(z, l);
      for (int b = 0; b < d; ++b) {
        dz(l, b) = 0.5 * fs.sum(b);
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += p(l, c) * fs.grad(c, b);
        dp(l, b) = -0.5 * inv_s2 * acc;
      }
    }
  };
  auto energy = [&](const MatrixXd& z, const MatrixXd& p) {
    return 0.25 * (p.array() * kernel_apply(z, p, kv).array()).sum();
  };

  GeodesicPath path;
  path.z.push_back(z0);
  path.p.push_back(p0);
  path.hamiltonian.push_back(energy(z0, p0));
  MatrixXd dz1, dp1, dz2, dp2, dz3, dp3, dz4, dp4;
  for (int k = 0; k < nt; ++k) {
    const MatrixXd& z = path.z.back();
    const MatrixXd& p = path.p.back();
    field(z, p, dz1, dp1);
    field(z + (h / 2) * dz1, p + (h / 2) * dp1, dz2, dp2);
    field(z + (h / 2) * dz2, p + (h / 2) * dp2, dz3, dp3);
    field(z + h * dz3, p + h * dp3, dz4, dp4);
    MatrixXd zn = z + (h / 6) * (dz1 + 2 * dz2 + 2 * dz3 + dz4);
    MatrixXd pn = p + (h / 6) * (dp1 + 2 * dp2 + 2 * dp3 + dp4);
    check_finite(zn, "geodesic state");
    path.hamiltonian.push_back(energy(zn, pn));
    path.z.push_back(std::move(zn));
    path.p.push_back(std::move(pn));
  }
  return path;
}

}  // namespace imvar::lddmm
