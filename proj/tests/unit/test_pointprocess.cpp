#include "imvar/error.hpp"
#include "imvar/pointprocess.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace imvar;
using namespace imvar::pointprocess;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

CppModel grid_model(double lambda, int labels = 2) {
  CppModel m;
  mesh::BBox box{Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 2)};
  m.regions = mesh::build_regular_mesh(box, 1.0, 2);
  m.lambda = VectorXd::Constant(m.num_regions(), lambda);
  m.space = varifold::FeatureSpace::categorical(testing_support::names("t", labels));
  m.zeta = MatrixXd::Constant(m.num_regions(), labels, 1.0 / labels);
  return m;
}

// Two-Poisson log-likelihood ratio: separate rates vs one shared rate.
double poisson_lrt(long n1, long n2, double chi1, double chi2) {
  auto ll = [](long n, double mean) { return n > 0 ? n * std::log(mean) - mean : -mean; };
  const double sep = ll(n1, static_cast<double>(n1)) + ll(n2, static_cast<double>(n2));
  const double rate = static_cast<double>(n1 + n2) / (chi1 + chi2);
  const double tied = ll(n1, rate * chi1) + ll(n2, rate * chi2);
  return sep - tied;
}

}  // namespace

TEST_CASE("sampling basics") {
  CppModel zero = grid_model(0.0);
  CHECK(sample(zero, 1).size() == 0);

  CppModel m = grid_model(30.0, 3);
  m.zeta.row(0) << 0.7, 0.2, 0.1;
  const Realization a = sample(m, 42);
  const Realization b = sample(m, 42);
  CHECK(a.positions == b.positions);
  CHECK(a.labels == b.labels);
  CHECK(sample(m, 43).positions != a.positions);
  CHECK(region_seed(1, 0) != region_seed(1, 1));
  CHECK(region_seed(1, 0) != region_seed(2, 0));

  // Every point lies in the mapped domain.
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.positions.row(i).minCoeff() >= 0.0);
    CHECK(a.positions.row(i).maxCoeff() <= 2.0);
  }

  CppModel bad = grid_model(1.0);
  bad.lambda[0] = -1.0;
  CHECK_THROWS_AS(sample(bad, 0), Error);
  bad = grid_model(1.0);
  bad.zeta(0, 0) = 0.9;
  CHECK_THROWS_AS(sample(bad, 0), Error);
}

TEST_CASE("count mean and mark frequencies") {
  CppModel m;
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 2, 0, 0, 2;  // volume 2
  m.regions = testing_support::single_simplex(x);
  m.lambda = VectorXd::Constant(1, 3.0);
  m.space = varifold::FeatureSpace::categorical({"a", "b", "c"});
  m.zeta.resize(1, 3);
  m.zeta << 0.5, 0.3, 0.2;
  const int reps = 1000;
  double total = 0.0;
  VectorXd freq = VectorXd::Zero(3);
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (int s = 0; s < reps; ++s) {
    const Realization r = sample(m, static_cast<std::uint64_t>(s));
    total += r.size();
    for (int i = 0; i < r.size(); ++i) {
      freq[r.labels[i]] += 1.0;
      centroid += r.positions.row(i).transpose();
    }
  }
  CHECK(std::abs(total / reps - 6.0) < 3.0 * std::sqrt(6.0) / std::sqrt(reps));
  for (int f = 0; f < 3; ++f) {
    const double p = m.zeta(0, f);
    CHECK(std::abs(freq[f] / total - p) < 3.0 * std::sqrt(p * (1 - p) / total));
  }
  // Uniform on the triangle: centroid (2/3, 2/3), coordinate variance 2/9.
  centroid /= total;
  CHECK((centroid - Eigen::Vector2d(2.0 / 3.0, 2.0 / 3.0)).cwiseAbs().maxCoeff() < 3.0 * std::sqrt(2.0 / 9.0 / total));
}

TEST_CASE("push-forward of model parameters") {
  CppModel m = grid_model(5.0);
  const CppModel same = push_forward_model(m, m.regions.vertices);
  CHECK(same.regions.vertices == m.regions.vertices);
  CHECK(same.lambda == m.lambda);

  const double s = 1.5;
  const CppModel big = push_forward_model(m, s * m.regions.vertices);
  CHECK(big.lambda == m.lambda);
  CHECK(big.zeta == m.zeta);
  CHECK((expected_counts(big) - s * s * expected_counts(m)).cwiseAbs().maxCoeff() < 1e-12);

  mesh::Points flipped = m.regions.vertices;
  flipped.col(0) *= -1.0;
  try {
    push_forward_model(m, flipped);
    FAIL("expected FoldedRegion");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FoldedRegion);
  }
}

TEST_CASE("expected pairing of the pushed process") {
  std::mt19937_64 rng(3);
  CppModel m = grid_model(20.0);
  for (int c = 0; c < m.num_regions(); ++c) {
    m.lambda[c] = testing_support::uniform(rng, 5.0, 40.0);
    const double p = testing_support::uniform(rng, 0.1, 0.9);
    m.zeta.row(c) << p, 1 - p;
  }
  Eigen::Matrix2d A;
  A << 1.2, 0.3, -0.2, 0.9;
  const MatrixXd y = (m.regions.vertices * A.transpose()).rowwise() + Eigen::RowVector2d(0.5, -1.0);
  const CppModel pushed = push_forward_model(m, y);
  // F(x, f) = x0 + 2 x1 + 3 f is affine in x, so region means are exact.
  auto F = [](const Eigen::RowVectorXd& x, int f) { return x[0] + 2.0 * x[1] + 3.0 * f; };
  const mesh::Geometry g = mesh::compute_geometry(pushed.regions);
  double exact = 0.0;
  for (int c = 0; c < m.num_regions(); ++c) {
    for (int f = 0; f < 2; ++f) exact += m.lambda[c] * g.volumes[c] * m.zeta(c, f) * F(g.centers.row(c), f);
  }
  const int reps = 400;
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < reps; ++s) {
    const Realization r = sample(pushed, static_cast<std::uint64_t>(1000 + s));
    double v = 0.0;
    for (int i = 0; i < r.size(); ++i) v += F(r.positions.row(i), r.labels[i]);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / reps;
  const double sd = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - exact) < 3.0 * sd);
}

TEST_CASE("push then sample matches sample then transport for volume-preserving maps") {
  CppModel m = grid_model(25.0);
  // Shear (x, y) -> (x + 0.4 y, y), det 1.
  auto shear = [](const MatrixXd& p) {
    MatrixXd q = p;
    q.col(0) += 0.4 * p.col(1);
    return q;
  };
  const CppModel pushed = push_forward_model(m, shear(m.regions.vertices));
  mesh::SimplicialFamily mapped = pushed.regions;
  const int reps = 300;
  const int R = m.num_regions();
  VectorXd a = VectorXd::Zero(R), b = VectorXd::Zero(R);
  const mesh::PointLocator loc(mapped);
  for (int s = 0; s < reps; ++s) {
    const Realization direct = sample(pushed, static_cast<std::uint64_t>(s));
    const Realization moved = sample(m, static_cast<std::uint64_t>(50000 + s));
    const MatrixXd mp = shear(moved.positions);
    for (int i = 0; i < direct.size(); ++i) a[*loc.locate(direct.positions.row(i).transpose())] += 1.0;
    for (int i = 0; i < moved.size(); ++i) b[*loc.locate(mp.row(i).transpose())] += 1.0;
  }
  const VectorXd lam = expected_counts(m);
  for (int c = 0; c < R; ++c) {
    // Difference of two Poisson means over reps replicates.
    CHECK(std::abs(a[c] - b[c]) / reps < 3.0 * std::sqrt(2.0 * lam[c] / reps));
  }
}

TEST_CASE("likelihood-ratio statistic") {
  const TestResult even = lrt_statistic(10, 10, 1.0, 1.0);
  CHECK(even.p_hat == 0.5);
  CHECK(even.p == 0.5);
  CHECK(even.T == 0.0);
  CHECK(lrt_statistic(20, 0, 2.0, 2.0).T == doctest::Approx(20.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(lrt_statistic(0, 0, 1.0, 3.0).T == 0.0);
  CHECK_THROWS_AS(lrt_statistic(1, 1, 0.0, 1.0), Error);
  CHECK_THROWS_AS(lrt_statistic(1, 1, 1.0, -2.0), Error);

  std::mt19937_64 rng(8);
  for (int k = 0; k < 50; ++k) {
    const long n1 = static_cast<long>(rng() % 60);
    const long n2 = static_cast<long>(rng() % 60);
    const double c1 = testing_support::uniform(rng, 0.2, 3.0);
    const double c2 = testing_support::uniform(rng, 0.2, 3.0);
    const TestResult r = lrt_statistic(n1, n2, c1, c2);
    CHECK(std::abs(r.T - poisson_lrt(n1, n2, c1, c2)) <= 1e-10 * std::max(1.0, r.T));
    CHECK(r.T >= 0.0);
    CHECK(std::abs(lrt_statistic(n2, n1, c2, c1).T - r.T) <= 1e-12 * std::max(1.0, r.T));
  }
  // T = 0 exactly when the count share equals the volume share.
  CHECK(lrt_statistic(3, 9, 1.0, 3.0).T < 1e-15);
  CHECK(lrt_statistic(4, 9, 1.0, 3.0).T > 0.0);
}

TEST_CASE("statistic field") {
  CppModel m = grid_model(40.0, 3);
  const Realization n = sample(m, 5);
  const FeaturePartition sets{{0}, {1, 2}};
  const StatisticField same =
      statistic_field(n, n, m.regions.vertices, m.regions.vertices, m.regions, sets);
  REQUIRE(same.num_regions() == m.num_regions());
  REQUIRE(same.num_sets() == 3);
  for (const auto& row : same.cells) {
    for (const auto& t : row) CHECK(t.T == 0.0);
    CHECK(row[0].n1 == row[1].n1 + row[2].n1);
  }

  // Counts and ratios from a dilated second deformation.
  const MatrixXd big = 2.0 * m.regions.vertices;
  Realization n2 = n;
  n2.positions *= 2.0;
  const StatisticField dil = statistic_field(n, n2, m.regions.vertices, big, m.regions, sets);
  for (const auto& row : dil.cells) {
    CHECK(row[0].chi2 == doctest::Approx(4.0));
    CHECK(row[0].n1 == row[0].n2);
    CHECK(row[0].p == doctest::Approx(0.2));
  }
  CHECK_THROWS_AS(statistic_field(n, n, big.topRows(3), big, m.regions, sets), Error);
  CHECK_THROWS_AS(statistic_field(n, n, big, big, m.regions, {{7}}), Error);
}

TEST_CASE("planted intensity bump is found") {
  CppModel base = grid_model(30.0);
  CppModel bump = base;
  const int planted = 5;
  bump.lambda[planted] *= 3.0;
  int hits = 0;
  const int reps = 60;
  for (int s = 0; s < reps; ++s) {
    const Realization a = sample(base, static_cast<std::uint64_t>(2 * s));
    const Realization b = sample(bump, static_cast<std::uint64_t>(2 * s + 1));
    const StatisticField f = statistic_field(a, b, base.regions.vertices, base.regions.vertices, base.regions, {});
    int best = 0;
    for (int c = 1; c < f.num_regions(); ++c) {
      if (f.cells[c][0].T > f.cells[best][0].T) best = c;
    }
    hits += best == planted;
  }
  CHECK(hits >= 0.95 * reps);
}
