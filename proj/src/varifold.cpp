#include "imvar/varifold.hpp"

#include "imvar/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace imvar::varifold {

int FeatureSpace::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void FeatureSpace::validate() const {
  if (names.empty()) throw Error(ErrorCode::InvalidArgument, "feature space has no labels");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw Error(ErrorCode::InvalidArgument, "feature space labels are not unique");
}

bool FeatureDistribution::is_probability(double tol) const {
  return kind == DistributionKind::Discrete && values.minCoeff() >= 0.0 && std::abs(values.sum() - 1.0) <= tol;
}

void validate(const MeshVarifold& v) {
  mesh::validate_structure(v.family);
  v.space.validate();
  const int m = v.num_simplices();
  if (v.alpha.size() != m) throw Error(ErrorCode::InvalidArgument, "alpha must have one entry per simplex");
  if (v.zeta.rows() != m || v.zeta.cols() != v.space.size()) {
    throw Error(ErrorCode::InvalidArgument, "zeta must be num_simplices x feature-space size");
  }
  if (m > 0 && (v.alpha.minCoeff() < 0.0 || !v.alpha.allFinite())) {
    throw Error(ErrorCode::InvalidArgument, "alpha must be finite and nonnegative");
  }
  if (m > 0 && (v.zeta.minCoeff() < 0.0 || !v.zeta.allFinite())) {
    throw Error(ErrorCode::InvalidArgument, "feature laws must be finite and nonnegative");
  }
}

Eigen::VectorXd masses(const MeshVarifold& v) {
  const mesh::Geometry g = mesh::compute_geometry(v.family);
  return v.alpha.cwiseProduct(g.volumes);
}

double total_mass(const MeshVarifold& v) { return masses(v).sum(); }

namespace {

struct Binned {
  std::vector<int> point_count;
  Eigen::MatrixXd sums;  // per simplex, accumulated payload
};

// Assigns every point to its (lowest-index) containing simplex.
std::vector<int> assign_points(const PointSet& points, const mesh::SimplicialFamily& family) {
  if (points.dim != family.dim) throw Error(ErrorCode::InvalidArgument, "point and mesh dimensions differ");
  mesh::PointLocator locator(family);
  std::vector<int> owner(points.size(), -1);
  for (int j = 0; j < points.size(); ++j) {
    if (auto c = locator.locate(points.positions.row(j).transpose())) owner[j] = *c;
  }
  return owner;
}

Binned bin(const PointSet& points, const mesh::SimplicialFamily& family, int width) {
  const std::vector<int> owner = assign_points(points, family);
  Binned b;
  b.point_count.assign(family.num_simplices(), 0);
  b.sums.setZero(family.num_simplices(), width);
  const bool labelled = points.space.kind == FeatureSpace::Kind::Categorical;
  for (int j = 0; j < points.size(); ++j) {
    const int c = owner[j];
    if (c < 0) continue;
    ++b.point_count[c];
    if (labelled) {
      b.sums(c, points.labels[j]) += 1.0;
    } else {
      b.sums.row(c) += points.counts.row(j);
    }
  }
  return b;
}

void require_counts(const PointSet& points) {
  if (points.space.kind != FeatureSpace::Kind::CountVector) {
    throw Error(ErrorCode::KindMismatch, "count-based construction needs count-vector points");
  }
  if (points.counts.rows() != points.size() || points.counts.cols() != points.space.size()) {
    throw Error(ErrorCode::InvalidArgument, "count matrix shape does not match the point set");
  }
  if (points.size() > 0 && points.counts.minCoeff() < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "counts must be nonnegative");
  }
}

Eigen::VectorXd positive_volumes(const mesh::SimplicialFamily& family) {
  const mesh::Geometry g = mesh::compute_geometry(family);
  for (int c = 0; c < family.num_simplices(); ++c) {
    if (!(g.volumes[c] > 0.0)) {
      throw Error(ErrorCode::NonPositiveOrientation, "simplex " + std::to_string(c) + " has non-positive volume");
    }
  }
  return g.volumes;
}

}  // namespace

MeshVarifold from_gene_counts(const PointSet& points, const mesh::SimplicialFamily& family, WeightMode mode) {
  require_counts(points);
  const Eigen::VectorXd vol = positive_volumes(family);
  const Binned b = bin(points, family, points.space.size());
  MeshVarifold v;
  v.family = family;
  v.space = FeatureSpace::categorical(points.space.names);
  v.alpha.resize(family.num_simplices());
  v.zeta.resize(family.num_simplices(), points.space.size());
  for (int c = 0; c < family.num_simplices(); ++c) {
    const double total = b.sums.row(c).sum();
    if (!(total > 0.0)) {
      throw Error(ErrorCode::EmptySimplex, "simplex " + std::to_string(c) + " has no detections");
    }
    v.zeta.row(c) = b.sums.row(c) / total;
    v.alpha[c] = (mode == WeightMode::CountDensity ? total : static_cast<double>(b.point_count[c])) / vol[c];
  }
  return v;
}

MeshVarifold from_rna_counts(const PointSet& points, const mesh::SimplicialFamily& family) {
  require_counts(points);
  const Eigen::VectorXd vol = positive_volumes(family);
  const Binned b = bin(points, family, points.space.size());
  MeshVarifold v;
  v.family = family;
  v.space = FeatureSpace::count_vector(points.space.names);
  v.alpha.resize(family.num_simplices());
  v.zeta.resize(family.num_simplices(), points.space.size());
  for (int c = 0; c < family.num_simplices(); ++c) {
    const int n = b.point_count[c];
    if (n == 0) throw Error(ErrorCode::EmptySimplex, "simplex " + std::to_string(c) + " holds no point");
    v.zeta.row(c) = b.sums.row(c) / static_cast<double>(n);
    v.alpha[c] = static_cast<double>(n) / vol[c];
  }
  return v;
}

MeshVarifold from_cell_labels(const PointSet& points, const mesh::SimplicialFamily& family) {
  if (points.space.kind != FeatureSpace::Kind::Categorical) {
    throw Error(ErrorCode::KindMismatch, "label construction needs labelled points");
  }
  if (static_cast<int>(points.labels.size()) != points.size()) {
    throw Error(ErrorCode::InvalidArgument, "one label per point is required");
  }
  for (int l : points.labels) {
    if (l < 0 || l >= points.space.size()) throw Error(ErrorCode::InvalidArgument, "label outside feature space");
  }
  const Eigen::VectorXd vol = positive_volumes(family);
  const Binned b = bin(points, family, points.space.size());
  MeshVarifold v;
  v.family = family;
  v.space = points.space;
  v.alpha.resize(family.num_simplices());
  v.zeta.resize(family.num_simplices(), points.space.size());
  for (int c = 0; c < family.num_simplices(); ++c) {
    const int n = b.point_count[c];
    if (n == 0) throw Error(ErrorCode::EmptySimplex, "simplex " + std::to_string(c) + " holds no point");
    v.zeta.row(c) = b.sums.row(c) / static_cast<double>(n);
    v.alpha[c] = static_cast<double>(n) / vol[c];
  }
  return v;
}

std::vector<int> select_genes(const PointSet& points, int k) {
  require_counts(points);
  const int g = points.space.size();
  k = std::clamp(k, 0, g);
  Eigen::VectorXd sd = Eigen::VectorXd::Zero(g);
  if (points.size() > 0) {
    const Eigen::RowVectorXd mean = points.counts.colwise().mean();
    sd = ((points.counts.rowwise() - mean).array().square().colwise().sum() / points.size()).sqrt().transpose();
  }
  std::vector<int> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sd[a] > sd[b]; });
  order.resize(k);
  return order;
}

PointSet subset_genes(const PointSet& points, const std::vector<int>& genes) {
  require_counts(points);
  PointSet out;
  out.dim = points.dim;
  out.positions = points.positions;
  std::vector<std::string> names;
  out.counts.resize(points.size(), static_cast<Eigen::Index>(genes.size()));
  for (std::size_t i = 0; i < genes.size(); ++i) {
    names.push_back(points.space.names.at(genes[i]));
    out.counts.col(static_cast<Eigen::Index>(i)) = points.counts.col(genes[i]);
  }
  out.space = FeatureSpace::count_vector(std::move(names));
  return out;
}

MeshVarifold deform(const MeshVarifold& v, const mesh::Points& new_positions) {
  if (new_positions.rows() != v.family.num_vertices() || new_positions.cols() != v.family.dim) {
    throw Error(ErrorCode::InvalidArgument, "new positions must cover every vertex");
  }
  MeshVarifold out = v;
  out.family.vertices = new_positions;
  return out;
}

double pair(const MeshVarifold& v, const SpaceFeatureFunction& F) {
  const mesh::Geometry g = mesh::compute_geometry(v.family);
  const bool discrete = v.kind() == DistributionKind::Discrete;
  if (discrete ? !F.on_label : !F.on_vector) {
    throw Error(ErrorCode::KindMismatch, "function has no form for this feature space");
  }
  double total = 0.0;
  for (int c = 0; c < v.num_simplices(); ++c) {
    const Eigen::VectorXd m = g.centers.row(c).transpose();
    double e = 0.0;
    if (discrete) {
      for (int f = 0; f < v.zeta.cols(); ++f) {
        if (v.zeta(c, f) != 0.0) e += v.zeta(c, f) * F.on_label(m, f);
      }
    } else {
      e = F.on_vector(m, v.zeta.row(c).transpose());
    }
    total += v.alpha[c] * g.volumes[c] * e;
  }
  return total;
}

}  // namespace imvar::varifold
