#pragma once

#include "imvar/kernels.hpp"
#include "imvar/lddmm.hpp"
#include "imvar/varifold.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace imvar::atlas {

/// Coarse labelled atlas: a mesh with per-simplex label laws and density
/// bounds alpha_min <= alpha_c <= alpha_max on the imputed density.
struct AtlasVarifold {
  mesh::SimplicialFamily family;
  std::vector<std::string> labels;
  Eigen::MatrixXd zeta;       ///< num_simplices x labels
  Eigen::VectorXd alpha_min;  ///< defaults to 0
  Eigen::VectorXd alpha_max;  ///< defaults to +inf
  /// Fixed per-simplex weights used only by the literal weighting mode.
  Eigen::VectorXd weight;

  int num_labels() const { return static_cast<int>(labels.size()); }
  int num_simplices() const { return family.num_simplices(); }
};

/// Fills missing bounds/weights with defaults and checks shapes.
void normalize(AtlasVarifold& atlas);

/// One nonnegative vector over the feature space per label (rows).
struct LabelParameters {
  std::vector<std::string> labels;
  varifold::FeatureSpace space;
  Eigen::MatrixXd theta;  ///< labels x features
};

/// CellType: categorical target laws, identity feature kernel, pi_theta = theta.
/// GeneCount: count-vector target, Euclidean feature kernel, pi_theta a
/// weighted Dirac with total expression sum_g theta(g).
enum class Mode { CellType, GeneCount };
const char* to_string(Mode m);

/// Phi(theta) = sum_f theta(f)^T A theta(f) - 2 <b, theta>, subject to
/// theta >= 0 and lo_c <= sum_l Z(c, l) sum_f theta_l(f) <= hi_c.
struct QpProblem {
  Eigen::MatrixXd A;  ///< labels x labels, symmetric PSD
  Eigen::MatrixXd b;  ///< labels x features
  Eigen::MatrixXd Z;  ///< constraint rows, one per atlas simplex
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  /// ||mu_target||^2, so that Phi + constant is the squared distance.
  double constant = 0.0;

  int num_labels() const { return static_cast<int>(A.rows()); }
  int num_features() const { return static_cast<int>(b.cols()); }
  double phi(const Eigen::MatrixXd& theta) const;
  Eigen::MatrixXd phi_gradient(const Eigen::MatrixXd& theta) const;
};

/// Per-simplex density sum_l zeta_c(l) pi_{theta_l}(F).
Eigen::VectorXd imputed_density(const AtlasVarifold& atlas, const Eigen::MatrixXd& theta);

/// The atlas varifold with imputed features. In GeneCount mode each simplex
/// law is represented by its mean, which the Euclidean kernel cannot tell
/// apart from the mixture. Throws ZeroDensity when a simplex has zero
/// imputed density, unless allow_zero is set (the law row is then zero).
varifold::MeshVarifold imputed_varifold(const AtlasVarifold& atlas, const LabelParameters& theta, Mode mode,
                                        bool literal_weights = false, bool allow_zero = false);

/// A and b at the atlas's current vertex positions. With literal_weights the
/// atlas weights multiply every atlas-side mass; otherwise they are 1.
/// Throws ModeMismatch when the target features do not fit the mode.
QpProblem assemble_qp(const AtlasVarifold& atlas, const varifold::MeshVarifold& target,
                      const kernels::SpatialKernel& k1, Mode mode, bool literal_weights = false);

struct QpOptions {
  int max_iters = 20000;
  double tol = 1e-9;  ///< on the relative KKT residual
  int projection_sweeps = 20000;
  double projection_tol = 1e-14;
};

enum class QpStatus { Converged, MaxIterations };

struct QpSolution {
  Eigen::MatrixXd theta;
  double objective = 0.0;        ///< Phi(theta)
  double kkt_residual = 0.0;     ///< ||theta - P(theta - grad/L)|| L / scale
  double max_violation = 0.0;    ///< constraint violation (absolute)
  int iterations = 0;
  QpStatus status = QpStatus::MaxIterations;
};

/// Euclidean projection onto the feasible set. Throws Infeasible when empty.
Eigen::MatrixXd project_feasible(const QpProblem& qp, const Eigen::MatrixXd& theta, const QpOptions& opt = {});

/// Accelerated projected gradient with adaptive restart; projections by
/// Dykstra's alternating scheme between theta >= 0 and the density slabs.
/// Throws Infeasible (listing violated simplices) when no theta satisfies
/// the bounds.
QpSolution solve_qp(const QpProblem& qp, const QpOptions& opt = {}, const Eigen::MatrixXd* warm = nullptr);

struct AtlasConfig {
  Mode mode = Mode::CellType;
  bool literal_weights = false;
  int rounds = 3;
  QpOptions qp;
  lddmm::RegistrationConfig registration;
};

struct AtlasResult {
  LabelParameters theta;
  lddmm::RegistrationResult registration;
  /// Full objective (kinetic + attachment) after each QP and each
  /// registration phase, starting with the identity map and initial theta.
  std::vector<double> objective_trace;
  std::vector<QpSolution> qp;
};

/// Alternates theta-estimation (QP at the current deformation) and
/// registration of the imputed atlas to the target (warm-started).
AtlasResult alternate_minimize(const AtlasVarifold& atlas, const varifold::MeshVarifold& target,
                               const kernels::KernelMetric& metric, const AtlasConfig& config);

}  // namespace imvar::atlas
