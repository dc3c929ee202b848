#pragma once

#include "imvar/mesh.hpp"
#include "imvar/varifold.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace imvar::pointprocess {

/// Compound Poisson process with intensity and mark law constant on each
/// simplex of a partition. Marks live in a categorical space.
struct CppModel {
  mesh::SimplicialFamily regions;
  Eigen::VectorXd lambda;  ///< points per unit volume, one per region
  Eigen::MatrixXd zeta;    ///< mark law per region (rows sum to 1)
  varifold::FeatureSpace space;

  int num_regions() const { return regions.num_simplices(); }
};

/// Throws InvalidArgument on shape errors, negative intensities or laws
/// that are not probabilities; NonPositiveOrientation on bad regions.
void validate(const CppModel& model);

/// Points with one categorical mark each (PointSet with labels).
using Realization = varifold::PointSet;

/// Seed for region c: splitmix64 of (seed, c), so regions are independent
/// streams and results do not depend on evaluation order.
std::uint64_t region_seed(std::uint64_t seed, int region);

/// Per region: Poisson(lambda_c |Omega_c|) points, uniform in the simplex,
/// marks i.i.d. from zeta_c. Points are emitted region by region.
Realization sample(const CppModel& model, std::uint64_t seed);

/// Expected number of points per region, lambda_c |Omega_c|.
Eigen::VectorXd expected_counts(const CppModel& model);

/// Regions moved to phi(Omega_c) (given as the images of the region
/// vertices); intensity values and mark laws are kept. Throws FoldedRegion
/// when a mapped region has non-positive volume.
CppModel push_forward_model(const CppModel& model, const mesh::Points& mapped_vertices);

struct TestResult {
  double T = 0.0;
  double p_hat = 0.0;
  double p = 0.5;
  long n1 = 0;
  long n2 = 0;
  double chi1 = 1.0;
  double chi2 = 1.0;
};

/// T = (n1 + n2) KL(Bernoulli(p_hat) || Bernoulli(p)) with
/// p_hat = n1 / (n1 + n2), p = chi1 / (chi1 + chi2). Throws InvalidRatio
/// unless both ratios are positive and finite.
TestResult lrt_statistic(long n1, long n2, double chi1, double chi2);

/// Feature sets A_1..A_m as lists of label indices.
using FeaturePartition = std::vector<std::vector<int>>;

/// T(Omega_c, A_j) for every region of `partition` and every feature set.
/// Column 0 is the whole feature space, column j the set A_j. Counts are
/// N_i(phi_i(Omega_c) x A_j) with phi_i given as images of the partition
/// vertices; chi_i = |phi_i(Omega_c)| / |Omega_c|. Points outside every
/// mapped region are ignored.
struct StatisticField {
  std::vector<std::vector<TestResult>> cells;  ///< [region][feature set]
  int num_regions() const { return static_cast<int>(cells.size()); }
  int num_sets() const { return cells.empty() ? 0 : static_cast<int>(cells.front().size()); }
};

StatisticField statistic_field(const Realization& n1, const Realization& n2, const mesh::Points& phi1,
                               const mesh::Points& phi2, const mesh::SimplicialFamily& partition,
                               const FeaturePartition& features);

}  // namespace imvar::pointprocess
