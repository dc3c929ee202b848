#include "imvar/pointprocess.hpp"

#include "imvar/error.hpp"

#include <cmath>
#include <random>
#include <string>

namespace imvar::pointprocess {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// x log(x / y) with 0 log 0 = 0.
double xlogx_over(double x, double y) { return x > 0.0 ? x * std::log(x / y) : 0.0; }

std::vector<int> locate_all(const mesh::SimplicialFamily& fam, const Eigen::MatrixXd& pts) {
  const mesh::PointLocator loc(fam);
  std::vector<int> out(static_cast<std::size_t>(pts.rows()), -1);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (auto c = loc.locate(pts.row(i).transpose())) out[static_cast<std::size_t>(i)] = *c;
  }
  return out;
}

}  // namespace

void validate(const CppModel& model) {
  mesh::validate_structure(model.regions);
  mesh::validate_orientation(model.regions);
  model.space.validate();
  const int m = model.num_regions();
  if (model.lambda.size() != m) throw Error(ErrorCode::InvalidArgument, "lambda needs one value per region");
  if (model.zeta.rows() != m || model.zeta.cols() != model.space.size()) {
    throw Error(ErrorCode::InvalidArgument, "zeta must be regions x features");
  }
  for (int c = 0; c < m; ++c) {
    if (!std::isfinite(model.lambda[c]) || model.lambda[c] < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "region " + std::to_string(c) + ": intensity must be >= 0");
    }
    if (!varifold::FeatureDistribution::discrete(model.zeta.row(c).transpose()).is_probability()) {
      throw Error(ErrorCode::InvalidArgument, "region " + std::to_string(c) + ": mark law is not a probability");
    }
  }
}

std::uint64_t region_seed(std::uint64_t seed, int region) {
  return splitmix64(splitmix64(seed) ^ (0xd1b54a32d192ed03ULL * (static_cast<std::uint64_t>(region) + 1)));
}

VectorXd expected_counts(const CppModel& model) {
  return model.lambda.cwiseProduct(mesh::compute_geometry(model.regions).volumes);
}

Realization sample(const CppModel& model, std::uint64_t seed) {
  validate(model);
  const int d = model.regions.dim;
  const VectorXd mean = expected_counts(model);
  std::vector<std::vector<double>> pos;
  std::vector<int> marks;
  for (int c = 0; c < model.num_regions(); ++c) {
    if (mean[c] <= 0.0) continue;
    std::mt19937_64 rng(region_seed(seed, c));
    const long n = std::poisson_distribution<long>(mean[c])(rng);
    const VectorXd w = model.zeta.row(c).transpose();
    std::discrete_distribution<int> mark(w.data(), w.data() + w.size());
    std::exponential_distribution<double> expo(1.0);
    const auto s = model.regions.simplex(c);
    for (long k = 0; k < n; ++k) {
      // Uniform barycentric weights: normalized i.i.d. exponentials.
      double bary[4];
      double total = 0.0;
      for (int j = 0; j <= d; ++j) total += bary[j] = expo(rng);
      std::vector<double> x(static_cast<std::size_t>(d), 0.0);
      for (int j = 0; j <= d; ++j) {
        for (int a = 0; a < d; ++a) x[a] += bary[j] / total * model.regions.vertices(s[j], a);
      }
      pos.push_back(std::move(x));
      marks.push_back(mark(rng));
    }
  }
  Realization r;
  r.dim = d;
  r.space = model.space;
  r.positions.resize(static_cast<Eigen::Index>(pos.size()), d);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (int a = 0; a < d; ++a) r.positions(static_cast<Eigen::Index>(i), a) = pos[i][a];
  }
  r.labels = std::move(marks);
  return r;
}

CppModel push_forward_model(const CppModel& model, const mesh::Points& mapped_vertices) {
  if (mapped_vertices.rows() != model.regions.num_vertices() || mapped_vertices.cols() != model.regions.dim) {
    throw Error(ErrorCode::InvalidArgument, "mapped vertices do not match the region mesh");
  }
  if (!mapped_vertices.allFinite()) throw Error(ErrorCode::NonFinite, "mapped vertices are not finite");
  CppModel out = model;
  out.regions.vertices = mapped_vertices;
  const mesh::Geometry g = mesh::compute_geometry(out.regions);
  for (int c = 0; c < out.num_regions(); ++c) {
    if (!(g.volumes[c] > 0.0)) {
      throw Error(ErrorCode::FoldedRegion, "mapped region " + std::to_string(c) + " has non-positive volume");
    }
  }
  return out;
}

TestResult lrt_statistic(long n1, long n2, double chi1, double chi2) {
  if (!(chi1 > 0.0) || !(chi2 > 0.0) || !std::isfinite(chi1) || !std::isfinite(chi2)) {
    throw Error(ErrorCode::InvalidRatio, "volume ratios must be positive and finite");
  }
  if (n1 < 0 || n2 < 0) throw Error(ErrorCode::InvalidArgument, "counts must be nonnegative");
  TestResult r;
  r.n1 = n1;
  r.n2 = n2;
  r.chi1 = chi1;
  r.chi2 = chi2;
  r.p = chi1 / (chi1 + chi2);
  const long n = n1 + n2;
  if (n == 0) {
    r.p_hat = r.p;
    return r;
  }
  r.p_hat = static_cast<double>(n1) / static_cast<double>(n);
  const double kl = xlogx_over(r.p_hat, r.p) + xlogx_over(1.0 - r.p_hat, 1.0 - r.p);
  r.T = std::max(0.0, static_cast<double>(n) * kl);
  return r;
}

StatisticField statistic_field(const Realization& n1, const Realization& n2, const mesh::Points& phi1,
                               const mesh::Points& phi2, const mesh::SimplicialFamily& partition,
                               const FeaturePartition& features) {
  mesh::validate_structure(partition);
  if (phi1.rows() != partition.num_vertices() || phi2.rows() != partition.num_vertices() ||
      phi1.cols() != partition.dim || phi2.cols() != partition.dim) {
    throw Error(ErrorCode::InvalidArgument, "deformations do not match the partition");
  }
  if (n1.dim != partition.dim || n2.dim != partition.dim) {
    throw Error(ErrorCode::InvalidArgument, "realization dimension does not match the partition");
  }
  const int nf = std::max(n1.space.size(), n2.space.size());
  for (const auto& set : features) {
    for (int f : set) {
      if (f < 0 || f >= nf) throw Error(ErrorCode::InvalidArgument, "feature set refers to an unknown label");
    }
  }
  const int m = partition.num_simplices();
  const int sets = static_cast<int>(features.size()) + 1;
  // membership[f] lists the feature sets containing label f.
  std::vector<std::vector<int>> membership(static_cast<std::size_t>(nf));
  for (int j = 0; j < static_cast<int>(features.size()); ++j) {
    for (int f : features[j]) membership[f].push_back(j + 1);
  }

  const VectorXd v0 = mesh::compute_geometry(partition).volumes;
  auto count = [&](const Realization& r, const mesh::Points& phi, VectorXd& chi) {
    mesh::SimplicialFamily mapped = partition;
    mapped.vertices = phi;
    chi = mesh::compute_geometry(mapped).volumes.cwiseQuotient(v0);
    std::vector<std::vector<long>> out(static_cast<std::size_t>(m), std::vector<long>(sets, 0));
    const std::vector<int> where = locate_all(mapped, r.positions);
    for (std::size_t i = 0; i < where.size(); ++i) {
      const int c = where[i];
      if (c < 0) continue;
      ++out[c][0];
      if (!r.labels.empty()) {
        const int f = r.labels[i];
        if (f >= 0 && f < nf) {
          for (int j : membership[f]) ++out[c][j];
        }
      }
    }
    return out;
  };
  VectorXd chi1, chi2;
  const auto c1 = count(n1, phi1, chi1);
  const auto c2 = count(n2, phi2, chi2);

  StatisticField field;
  field.cells.assign(static_cast<std::size_t>(m), std::vector<TestResult>(sets));
  for (int c = 0; c < m; ++c) {
    for (int j = 0; j < sets; ++j) field.cells[c][j] = lrt_statistic(c1[c][j], c2[c][j], chi1[c], chi2[c]);
  }
  return field;
}

}  // namespace imvar::pointprocess
