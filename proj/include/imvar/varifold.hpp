#pragma once

#include "imvar/mesh.hpp"

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace imvar::varifold {

/// The feature space F: either a finite label set (cell types, or genes when
/// features are gene identities) or the space of nonnegative count vectors
/// indexed by a gene panel.
struct FeatureSpace {
  enum class Kind { Categorical, CountVector };

  Kind kind = Kind::Categorical;
  std::vector<std::string> names;

  static FeatureSpace categorical(std::vector<std::string> labels) { return {Kind::Categorical, std::move(labels)}; }
  static FeatureSpace count_vector(std::vector<std::string> genes) { return {Kind::CountVector, std::move(genes)}; }

  int size() const { return static_cast<int>(names.size()); }
  /// Index of a name, or -1.
  int index_of(const std::string& name) const;
  /// Throws InvalidArgument if names are empty or repeated.
  void validate() const;

  bool operator==(const FeatureSpace&) const = default;
};

enum class DistributionKind { Discrete, DiracVector };

/// A feature law: weights over the labels of a categorical space, or a
/// Dirac mass at a nonnegative count vector.
struct FeatureDistribution {
  DistributionKind kind = DistributionKind::Discrete;
  Eigen::VectorXd values;

  static FeatureDistribution discrete(Eigen::VectorXd w) { return {DistributionKind::Discrete, std::move(w)}; }
  static FeatureDistribution dirac(Eigen::VectorXd v) { return {DistributionKind::DiracVector, std::move(v)}; }

  bool is_probability(double tol = 1e-9) const;
};

inline DistributionKind distribution_kind(const FeatureSpace& space) {
  return space.kind == FeatureSpace::Kind::Categorical ? DistributionKind::Discrete : DistributionKind::DiracVector;
}

/// Mesh varifold T = (S, x, alpha, zeta), standing for the measure
/// sum_c alpha_c |gamma_c(x)| delta_{m_c(x)} (x) zeta_c.
struct MeshVarifold {
  mesh::SimplicialFamily family;
  Eigen::VectorXd alpha;  ///< density per simplex (per unit volume)
  Eigen::MatrixXd zeta;   ///< one feature law per row, num_simplices x space.size()
  FeatureSpace space;

  int num_simplices() const { return family.num_simplices(); }
  DistributionKind kind() const { return distribution_kind(space); }
  FeatureDistribution distribution(int c) const { return {kind(), zeta.row(c).transpose()}; }
};

/// Shape, nonnegativity and (for categorical spaces) normalization checks.
void validate(const MeshVarifold& v);

/// alpha_c |gamma_c| per simplex, with volumes taken at the current positions.
Eigen::VectorXd masses(const MeshVarifold& v);
double total_mass(const MeshVarifold& v);

/// Point-feature data: positions plus either per-point gene counts
/// (CountVector space) or per-point label indices (Categorical space).
struct PointSet {
  int dim = 2;
  Eigen::MatrixXd positions;  ///< n x dim
  FeatureSpace space;
  Eigen::MatrixXd counts;     ///< n x genes, CountVector only
  std::vector<int> labels;    ///< CountVector: unused

  int size() const { return static_cast<int>(positions.rows()); }
};

enum class WeightMode { CountDensity, PointDensity };

/// zeta_c(g) = share of gene g among all detections in simplex c; alpha is the
/// detection density (CountDensity) or the point density (PointDensity).
/// Points outside the family are ignored. Throws EmptySimplex when a simplex
/// has no detections.
MeshVarifold from_gene_counts(const PointSet& points, const mesh::SimplicialFamily& family, WeightMode mode);

/// zeta_c = Dirac at the mean count vector of the points in c; alpha is the
/// point density. Throws EmptySimplex when a simplex holds no point.
MeshVarifold from_rna_counts(const PointSet& points, const mesh::SimplicialFamily& family);

/// zeta_c = label frequencies of the points in c; alpha is the point density.
MeshVarifold from_cell_labels(const PointSet& points, const mesh::SimplicialFamily& family);

/// Indices of the k genes with the largest standard deviation of per-point
/// counts (ties broken toward the lower index), in decreasing order.
std::vector<int> select_genes(const PointSet& points, int k);

/// Restricts a count point set to the given gene columns.
PointSet subset_genes(const PointSet& points, const std::vector<int>& genes);

/// Action on meshes: (S, x, alpha, zeta) -> (S, phi(x), alpha, zeta).
MeshVarifold deform(const MeshVarifold& v, const mesh::Points& new_positions);

/// A space-feature function F(x, f). The label form is used for categorical
/// spaces (f is a label index), the vector form for count-vector spaces.
struct SpaceFeatureFunction {
  std::function<double(const Eigen::VectorXd&, int)> on_label;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> on_vector;
};

/// (mu_T | F) = sum_c alpha_c |gamma_c| E_{zeta_c}[F(m_c, .)].
double pair(const MeshVarifold& v, const SpaceFeatureFunction& F);

}  // namespace imvar::varifold
