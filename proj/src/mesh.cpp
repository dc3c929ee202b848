#include "imvar/mesh.hpp"

#include "imvar/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace imvar::mesh {

void validate_structure(const SimplicialFamily& family) {
  const int d = family.dim;
  if (d != 2 && d != 3) {
    throw Error(ErrorCode::InvalidStructure, "dimension must be 2 or 3, got " + std::to_string(d));
  }
  if (family.vertices.cols() != d && family.vertices.rows() > 0) {
    throw Error(ErrorCode::InvalidStructure, "vertex array has wrong column count");
  }
  if (family.simplices.rows() > 0 && family.simplices.cols() != d + 1) {
    throw Error(ErrorCode::InvalidStructure, "simplex tuples must have dim+1 entries");
  }
  if (!family.vertices.allFinite()) {
    throw Error(ErrorCode::InvalidStructure, "non-finite vertex position");
  }
  const int n = family.num_vertices();
  for (int c = 0; c < family.num_simplices(); ++c) {
    auto s = family.simplex(c);
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (s[a] < 0 || s[a] >= n) {
        throw Error(ErrorCode::InvalidStructure,
                    "simplex " + std::to_string(c) + " references missing vertex " + std::to_string(s[a]));
      }
      for (std::size_t b = a + 1; b < s.size(); ++b) {
        if (s[a] == s[b]) {
          throw Error(ErrorCode::InvalidStructure, "simplex " + std::to_string(c) + " repeats a vertex");
        }
      }
    }
  }
}

double signed_volume(const Points& x, std::span<const int> c) {
  if (c.size() == 3) {
    const double ax = x(c[1], 0) - x(c[0], 0), ay = x(c[1], 1) - x(c[0], 1);
    const double bx = x(c[2], 0) - x(c[0], 0), by = x(c[2], 1) - x(c[0], 1);
    return 0.5 * (ax * by - ay * bx);
  }
  const Eigen::Vector3d a = x.row(c[1]).transpose() - x.row(c[0]).transpose();
  const Eigen::Vector3d b = x.row(c[2]).transpose() - x.row(c[0]).transpose();
  const Eigen::Vector3d e = x.row(c[3]).transpose() - x.row(c[0]).transpose();
  return a.dot(b.cross(e)) / 6.0;
}

double simplex_volume(const SimplicialFamily& family, int c, bool strict) {
  const double v = signed_volume(family.vertices, family.simplex(c));
  if (strict && !(v > 0.0)) {
    std::ostringstream msg;
    msg << "simplex " << c << " has volume " << v;
    throw Error(ErrorCode::NonPositiveOrientation, msg.str());
  }
  return v;
}

void validate_orientation(const SimplicialFamily& family) {
  for (int c = 0; c < family.num_simplices(); ++c) simplex_volume(family, c, true);
}

Eigen::VectorXd simplex_center(const SimplicialFamily& family, int c) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(family.dim);
  for (int i : family.simplex(c)) m += family.vertices.row(i).transpose();
  return m / static_cast<double>(family.dim + 1);
}

Eigen::MatrixXd face_normals(const Points& x, std::span<const int> c) {
  if (c.size() == 3) {
    auto J = [](const Eigen::Vector2d& v) { return Eigen::Vector2d(-v.y(), v.x()); };
    const Eigen::Vector2d x0 = x.row(c[0]).transpose(), x1 = x.row(c[1]).transpose(),
                          x2 = x.row(c[2]).transpose();
    Eigen::MatrixXd n(3, 2);
    n.row(0) = J(x2 - x1).transpose();
    n.row(1) = J(x0 - x2).transpose();
    n.row(2) = J(x1 - x0).transpose();
    return n;
  }
  const Eigen::Vector3d x0 = x.row(c[0]).transpose(), x1 = x.row(c[1]).transpose(),
                        x2 = x.row(c[2]).transpose(), x3 = x.row(c[3]).transpose();
  Eigen::MatrixXd n(4, 3);
  n.row(0) = -((x2 - x1).cross(x3 - x1)).transpose();
  n.row(1) = ((x2 - x0).cross(x3 - x0)).transpose();
  n.row(2) = -((x1 - x0).cross(x3 - x0)).transpose();
  n.row(3) = ((x1 - x0).cross(x2 - x0)).transpose();
  return n;
}

Eigen::MatrixXd face_normals(const SimplicialFamily& family, int c) {
  return face_normals(family.vertices, family.simplex(c));
}

Geometry compute_geometry(const Simplices& simplices, const Points& positions) {
  const int m = static_cast<int>(simplices.rows());
  const int d = static_cast<int>(positions.cols());
  Geometry g;
  g.volumes.resize(m);
  g.centers.setZero(m, d);
  const double inv = 1.0 / (d + 1);
  for (int c = 0; c < m; ++c) {
    std::span<const int> s(simplices.data() + static_cast<std::ptrdiff_t>(c) * (d + 1),
                           static_cast<std::size_t>(d + 1));
    g.volumes[c] = signed_volume(positions, s);
    for (int i : s) g.centers.row(c) += positions.row(i);
    g.centers.row(c) *= inv;
  }
  return g;
}

BBox bounding_box(const Points& points) {
  if (points.rows() == 0) throw Error(ErrorCode::EmptyInput, "bounding box of an empty point set");
  return {points.colwise().minCoeff().transpose(), points.colwise().maxCoeff().transpose()};
}

SimplicialFamily build_regular_mesh(const BBox& bbox, double lambda, int dim) {
  if (dim != 2 && dim != 3) throw Error(ErrorCode::InvalidArgument, "dim must be 2 or 3");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::InvalidArgument, "lambda must be positive and finite");
  }
  if (bbox.lo.size() != dim || bbox.hi.size() != dim) {
    throw Error(ErrorCode::DegenerateBBox, "bounding box dimension mismatch");
  }
  std::array<long, 3> cells{1, 1, 1};
  for (int k = 0; k < dim; ++k) {
    const double extent = bbox.hi[k] - bbox.lo[k];
    if (!std::isfinite(extent) || !(extent > 0.0)) {
      throw Error(ErrorCode::DegenerateBBox, "bounding box has empty extent along axis " + std::to_string(k));
    }
    // Tolerate round-off so that an extent of exactly n*lambda gives n cells.
    cells[k] = std::max(1L, static_cast<long>(std::ceil(extent / lambda - 1e-9)));
  }
  const long nx = cells[0] + 1, ny = cells[1] + 1, nz = dim == 3 ? cells[2] + 1 : 1;

  SimplicialFamily family;
  family.dim = dim;
  family.vertices.resize(nx * ny * nz, dim);
  for (long k = 0; k < nz; ++k)
    for (long j = 0; j < ny; ++j)
      for (long i = 0; i < nx; ++i) {
        const long id = i + nx * (j + ny * k);
        family.vertices(id, 0) = bbox.lo[0] + lambda * static_cast<double>(i);
        family.vertices(id, 1) = bbox.lo[1] + lambda * static_cast<double>(j);
        if (dim == 3) family.vertices(id, 2) = bbox.lo[2] + lambda * static_cast<double>(k);
      }
  auto vid = [&](long i, long j, long k) { return static_cast<int>(i + nx * (j + ny * k)); };

  // Kuhn simplices: walk from the cell's low corner adding one unit axis at a
  // time in the order given by a permutation; odd permutations get their last
  // two vertices swapped to restore positive orientation.
  std::vector<std::array<int, 3>> perms;
  std::vector<bool> odd;
  if (dim == 2) {
    perms = {{0, 1, 2}, {1, 0, 2}};
    odd = {false, true};
  } else {
    perms = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    odd = {false, true, true, false, false, true};
  }
  const long ncell = cells[0] * cells[1] * (dim == 3 ? cells[2] : 1);
  family.simplices.resize(ncell * static_cast<long>(perms.size()), dim + 1);
  long row = 0;
  for (long k = 0; k < (dim == 3 ? cells[2] : 1); ++k)
    for (long j = 0; j < cells[1]; ++j)
      for (long i = 0; i < cells[0]; ++i)
        for (std::size_t p = 0; p < perms.size(); ++p) {
          std::array<long, 3> cur{i, j, k};
          std::array<int, 4> verts{};
          verts[0] = vid(cur[0], cur[1], cur[2]);
          for (int s = 0; s < dim; ++s) {
            cur[perms[p][s]] += 1;
            verts[s + 1] = vid(cur[0], cur[1], cur[2]);
          }
          if (odd[p]) std::swap(verts[dim - 1], verts[dim]);
          for (int s = 0; s <= dim; ++s) family.simplices(row, s) = verts[s];
          ++row;
        }
  return family;
}

Eigen::VectorXd barycentric(const Points& x, std::span<const int> c, const Eigen::VectorXd& y) {
  const int d = static_cast<int>(c.size()) - 1;
  Eigen::MatrixXd T(d, d);
  for (int k = 0; k < d; ++k) T.col(k) = (x.row(c[k + 1]) - x.row(c[0])).transpose();
  const Eigen::VectorXd r = y - x.row(c[0]).transpose();
  Eigen::VectorXd lam(d + 1);
  if (d == 2) {
    const double det = T(0, 0) * T(1, 1) - T(0, 1) * T(1, 0);
    lam[1] = (r[0] * T(1, 1) - r[1] * T(0, 1)) / det;
    lam[2] = (T(0, 0) * r[1] - T(1, 0) * r[0]) / det;
  } else {
    lam.tail(d) = T.partialPivLu().solve(r);
  }
  lam[0] = 1.0 - lam.tail(d).sum();
  return lam;
}

PointLocator::PointLocator(const SimplicialFamily& family) : family_(&family) {
  const int d = family.dim;
  const int m = family.num_simplices();
  if (m == 0) return;
  origin_ = family.vertices.colwise().minCoeff().transpose();
  const Eigen::VectorXd top = family.vertices.colwise().maxCoeff().transpose();
  // Bucket side: average simplex bounding-box extent.
  double mean_extent = 0.0;
  for (int c = 0; c < m; ++c) {
    auto s = family.simplex(c);
    Eigen::VectorXd lo = family.vertices.row(s[0]).transpose(), hi = lo;
    for (int i : s) {
      lo = lo.cwiseMin(family.vertices.row(i).transpose());
      hi = hi.cwiseMax(family.vertices.row(i).transpose());
    }
    mean_extent += (hi - lo).maxCoeff();
  }
  mean_extent /= m;
  cell_size_ = mean_extent > 0.0 ? mean_extent : 1.0;
  counts_per_axis_.assign(d, 1);
  long total = 1;
  for (int k = 0; k < d; ++k) {
    counts_per_axis_[k] = std::max(1L, static_cast<long>(std::floor((top[k] - origin_[k]) / cell_size_)) + 1);
    total *= counts_per_axis_[k];
  }
  buckets_.resize(total);
  const double pad = 1e-9 * cell_size_;
  for (int c = 0; c < m; ++c) {
    auto s = family.simplex(c);
    Eigen::VectorXd lo = family.vertices.row(s[0]).transpose(), hi = lo;
    for (int i : s) {
      lo = lo.cwiseMin(family.vertices.row(i).transpose());
      hi = hi.cwiseMax(family.vertices.row(i).transpose());
    }
    std::array<long, 3> a{0, 0, 0}, b{0, 0, 0};
    for (int k = 0; k < d; ++k) {
      a[k] = std::clamp(static_cast<long>(std::floor((lo[k] - pad - origin_[k]) / cell_size_)), 0L,
                        counts_per_axis_[k] - 1);
      b[k] = std::clamp(static_cast<long>(std::floor((hi[k] + pad - origin_[k]) / cell_size_)), 0L,
                        counts_per_axis_[k] - 1);
    }
    for (long k = a[2]; k <= b[2]; ++k)
      for (long j = a[1]; j <= b[1]; ++j)
        for (long i = a[0]; i <= b[0]; ++i) {
          const long flat = i + counts_per_axis_[0] * (j + (d == 3 ? counts_per_axis_[1] * k : 0));
          buckets_[flat].push_back(c);
        }
  }
}

bool PointLocator::cell_of(const Eigen::VectorXd& y, long& flat) const {
  const int d = family_->dim;
  std::array<long, 3> idx{0, 0, 0};
  for (int k = 0; k < d; ++k) {
    const double t = (y[k] - origin_[k]) / cell_size_;
    if (!(t > -1e-6) || t > static_cast<double>(counts_per_axis_[k]) + 1e-6) return false;
    idx[k] = std::clamp(static_cast<long>(std::floor(t)), 0L, counts_per_axis_[k] - 1);
  }
  flat = idx[0] + counts_per_axis_[0] * (idx[1] + (d == 3 ? counts_per_axis_[1] * idx[2] : 0));
  return true;
}

std::optional<int> PointLocator::locate(const Eigen::VectorXd& y) const {
  if (buckets_.empty()) return std::nullopt;
  long flat = 0;
  if (!cell_of(y, flat)) return std::nullopt;
  // Buckets are filled in increasing simplex order, so the first hit is the
  // lowest-index containing simplex.
  for (int c : buckets_[flat]) {
    const Eigen::VectorXd lam = barycentric(family_->vertices, family_->simplex(c), y);
    if (lam.minCoeff() >= -kContainmentTolerance) return c;
  }
  return std::nullopt;
}

std::optional<int> locate_point(const SimplicialFamily& family, const Eigen::VectorXd& y) {
  for (int c = 0; c < family.num_simplices(); ++c) {
    const Eigen::VectorXd lam = barycentric(family.vertices, family.simplex(c), y);
    if (lam.minCoeff() >= -kContainmentTolerance) return c;
  }
  return std::nullopt;
}

PruneResult prune_mesh(const SimplicialFamily& family, const Points& points) {
  PruneResult out;
  out.family.dim = family.dim;
  out.family.vertices.resize(0, family.dim);
  out.family.simplices.resize(0, family.dim + 1);
  out.assignment.assign(points.rows(), -1);
  if (points.rows() == 0 || family.num_simplices() == 0) return out;

  PointLocator locator(family);
  std::vector<int> owner(points.rows(), -1);
  std::vector<char> used(family.num_simplices(), 0);
  for (Eigen::Index j = 0; j < points.rows(); ++j) {
    if (auto c = locator.locate(points.row(j).transpose())) {
      owner[j] = *c;
      used[*c] = 1;
    }
  }
  std::vector<int> simplex_map(family.num_simplices(), -1);
  std::vector<int> vertex_map(family.num_vertices(), -1);
  for (int c = 0; c < family.num_simplices(); ++c) {
    if (!used[c]) continue;
    simplex_map[c] = static_cast<int>(out.kept_simplices.size());
    out.kept_simplices.push_back(c);
    for (int i : family.simplex(c)) vertex_map[i] = 0;
  }
  for (int i = 0; i < family.num_vertices(); ++i) {
    if (vertex_map[i] < 0) continue;
    vertex_map[i] = static_cast<int>(out.kept_vertices.size());
    out.kept_vertices.push_back(i);
  }
  out.family.vertices.resize(static_cast<Eigen::Index>(out.kept_vertices.size()), family.dim);
  for (std::size_t i = 0; i < out.kept_vertices.size(); ++i) {
    out.family.vertices.row(static_cast<Eigen::Index>(i)) = family.vertices.row(out.kept_vertices[i]);
  }
  out.family.simplices.resize(static_cast<Eigen::Index>(out.kept_simplices.size()), family.dim + 1);
  for (std::size_t c = 0; c < out.kept_simplices.size(); ++c) {
    auto s = family.simplex(out.kept_simplices[c]);
    for (int k = 0; k <= family.dim; ++k) out.family.simplices(static_cast<Eigen::Index>(c), k) = vertex_map[s[k]];
  }
  for (std::size_t j = 0; j < owner.size(); ++j) {
    if (owner[j] >= 0) out.assignment[j] = simplex_map[owner[j]];
  }
  return out;
}

}  // namespace imvar::mesh
