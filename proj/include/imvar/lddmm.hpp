#pragma once

#include "imvar/kernels.hpp"
#include "imvar/varifold.hpp"

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

namespace imvar::lddmm {

/// Scalar Gaussian flow kernel K_V(x, y) = exp(-|x - y|^2 / (2 sigma^2)) Id.
struct FlowKernel {
  double sigma = 1.0;
};

/// Piecewise-constant momenta: a[k] (n x dim) drives the flow on
/// [k/nt, (k+1)/nt).
struct ControlTrajectory {
  std::vector<Eigen::MatrixXd> a;

  static ControlTrajectory zeros(int nt, int n, int dim);
  int nt() const { return static_cast<int>(a.size()); }
  int n() const { return a.empty() ? 0 : static_cast<int>(a[0].rows()); }
  int dim() const { return a.empty() ? 0 : static_cast<int>(a[0].cols()); }
  double step() const { return 1.0 / nt(); }

  Eigen::VectorXd flatten() const;
  static ControlTrajectory unflatten(const Eigen::VectorXd& x, int nt, int n, int dim);
};

/// Vertex positions z[k] at t = k/nt (nt + 1 entries) plus the four RK4
/// stage states of every step, kept for the adjoint pass and for transport.
struct StateTrajectory {
  std::vector<Eigen::MatrixXd> z;
  std::vector<std::array<Eigen::MatrixXd, 4>> stages;

  const Eigen::MatrixXd& final() const { return z.back(); }
};

struct CoStateTrajectory {
  std::vector<Eigen::MatrixXd> p;  // nt + 1 entries, p[nt] = -grad U(z(1))
};

/// K(z) a: row i is sum_j K_V(z_i, z_j) a_j.
Eigen::MatrixXd kernel_apply(const Eigen::MatrixXd& z, const Eigen::MatrixXd& a, const FlowKernel& kv);
/// Row i is sum_j K_V(y_i, z_j) a_j.
Eigen::MatrixXd kernel_apply_at(const Eigen::MatrixXd& y, const Eigen::MatrixXd& z, const Eigen::MatrixXd& a,
                                const FlowKernel& kv);

/// RK4 integration of dz_i/dt = sum_j K_V(z_i, z_j) a_j(t), step 1/nt.
/// Throws NonFinite if the state blows up.
StateTrajectory flow_forward(const ControlTrajectory& a, const Eigen::MatrixXd& z0, const FlowKernel& kv);

/// H(p, z, a) = sum_ij p_i^T K(z_i, z_j) a_j - sum_ij a_i^T K(z_i, z_j) a_j.
double hamiltonian(const Eigen::MatrixXd& p, const Eigen::MatrixXd& z, const Eigen::MatrixXd& a,
                   const FlowKernel& kv);
/// Partial derivative of H in z.
Eigen::MatrixXd hamiltonian_dz(const Eigen::MatrixXd& p, const Eigen::MatrixXd& z, const Eigen::MatrixXd& a,
                               const FlowKernel& kv);

/// Backward co-state pass from p(1) = -terminal_grad. The recursion is the
/// exact adjoint of the forward RK4 scheme (including the kinetic term's
/// dependence on z), so the control gradient it yields is the true gradient
/// of the discretized objective.
CoStateTrajectory adjoint_backward(const ControlTrajectory& a, const StateTrajectory& traj,
                                   const Eigen::MatrixXd& terminal_grad, const FlowKernel& kv);

enum class Optimizer { GradientDescent, Lbfgs };

struct RegistrationConfig {
  double sigma = 1.0;  ///< data-attachment weight 1/sigma^2
  FlowKernel kv;
  int nt = 10;
  int max_iters = 100;
  double tol = 1e-6;        ///< stop when the relative objective decrease falls below
  double grad_tol = 1e-12;  ///< stop when the gradient norm falls below
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 40;
  Optimizer optimizer = Optimizer::GradientDescent;
  int lbfgs_memory = 8;
  bool verbose = false;
};

/// Objective of the reduced problem with cached target self-inner product.
class RegistrationProblem {
 public:
  RegistrationProblem(varifold::MeshVarifold templ, varifold::MeshVarifold target, kernels::KernelMetric metric,
                      RegistrationConfig config);

  struct Evaluation {
    double objective = 0.0;
    double kinetic = 0.0;
    double attachment = 0.0;  ///< sqdist / sigma^2
    double sqdist = 0.0;
    StateTrajectory traj;
  };

  Evaluation evaluate(const ControlTrajectory& a) const;
  /// Gradient with respect to the control array (same shape as a).
  ControlTrajectory gradient(const ControlTrajectory& a, Evaluation* eval = nullptr) const;
  /// Co-state along the trajectory of `a`.
  CoStateTrajectory costate(const ControlTrajectory& a) const;

  const varifold::MeshVarifold& templ() const { return templ_; }
  const varifold::MeshVarifold& target() const { return target_; }
  const kernels::KernelMetric& metric() const { return metric_; }
  const RegistrationConfig& config() const { return config_; }
  double target_self_inner() const { return target_self_; }

 private:
  varifold::MeshVarifold templ_;
  varifold::MeshVarifold target_;
  kernels::KernelMetric metric_;
  RegistrationConfig config_;
  double target_self_ = 0.0;
};

double objective(const ControlTrajectory& a, const varifold::MeshVarifold& templ,
                 const varifold::MeshVarifold& target, const kernels::KernelMetric& metric,
                 const RegistrationConfig& config);

ControlTrajectory gradient(const ControlTrajectory& a, const varifold::MeshVarifold& templ,
                           const varifold::MeshVarifold& target, const kernels::KernelMetric& metric,
                           const RegistrationConfig& config);

enum class Status { Converged, MaxIterations, LineSearchFailed };
const char* to_string(Status s);

struct Diagnostics {
  std::vector<double> objective;   ///< per accepted iterate, starting at a = initial
  std::vector<double> kinetic;
  std::vector<double> attachment;
  double initial_sqdist = 0.0;
  double final_sqdist = 0.0;
  double hamiltonian_drift = 0.0;  ///< max_k |H_k - H_0| / |H_0| along the final trajectory
  double min_deformed_volume = 0.0;
  int iterations = 0;
  Status status = Status::MaxIterations;
};

struct RegistrationResult {
  ControlTrajectory a;
  StateTrajectory traj;
  Diagnostics diagnostics;
};

/// Minimizes the reduced objective from `initial` (zero momenta when null)
/// by gradient descent or L-BFGS with Armijo backtracking.
RegistrationResult register_varifolds(const varifold::MeshVarifold& templ, const varifold::MeshVarifold& target,
                                      const kernels::KernelMetric& metric, const RegistrationConfig& config,
                                      const ControlTrajectory* initial = nullptr);

/// Carries arbitrary points along the flow: dy/dt = sum_i K_V(y, z_i(t)) a_i(t),
/// on the same RK4 grid and stage states as `traj`.
Eigen::MatrixXd transport_points(const ControlTrajectory& a, const StateTrajectory& traj, const FlowKernel& kv,
                                 const Eigen::MatrixXd& points);

struct GeodesicPath {
  std::vector<Eigen::MatrixXd> z;
  std::vector<Eigen::MatrixXd> p;
  std::vector<double> hamiltonian;
};

/// Integrates the Hamiltonian system with the optimality substitution
/// a = p / 2 (geodesic shooting from z0 with initial co-state p0).
GeodesicPath shoot(const Eigen::MatrixXd& z0, const Eigen::MatrixXd& p0, const FlowKernel& kv, int nt);

}  // namespace imvar::lddmm
