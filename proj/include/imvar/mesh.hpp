#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace imvar::mesh {

/// Vertex coordinates, one row per vertex. Column-major storage keeps each
/// coordinate contiguous, which is the layout the SIMD kernels consume.
using Points = Eigen::MatrixXd;

/// Simplex index tuples, one row of (dim+1) vertex ids per simplex.
using Simplices = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A simplicial family (S, x): structure plus vertex positions. Vertex ids
/// are the contiguous range [0, num_vertices()).
struct SimplicialFamily {
  int dim = 2;
  Points vertices;
  Simplices simplices;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_simplices() const { return static_cast<int>(simplices.rows()); }
  std::span<const int> simplex(int c) const {
    return {simplices.data() + static_cast<std::ptrdiff_t>(c) * simplices.cols(),
            static_cast<std::size_t>(simplices.cols())};
  }
};

/// Checks dimensions, index ranges, tuple sizes and duplicate indices.
/// Throws Error(InvalidStructure) on the first violation.
void validate_structure(const SimplicialFamily& family);

/// Throws Error(NonPositiveOrientation) naming the first simplex whose
/// volume is not strictly positive.
void validate_orientation(const SimplicialFamily& family);

/// det(x_{c1}-x_{c0}, ..., x_{cd}-x_{c0}) / d!, signed.
double signed_volume(const Points& x, std::span<const int> c);

/// Volume of simplex `c`. In strict mode a non-positive result raises
/// NonPositiveOrientation; otherwise the signed value is returned.
double simplex_volume(const SimplicialFamily& family, int c, bool strict = false);

Eigen::VectorXd simplex_center(const SimplicialFamily& family, int c);

/// Weighted inward face normals n_{c,0..d}, one per row. Row j is the normal
/// of the face opposite vertex c_j; rows sum to zero and the gradient of the
/// volume with respect to x_{c_j} is row j / d!.
Eigen::MatrixXd face_normals(const Points& x, std::span<const int> c);
Eigen::MatrixXd face_normals(const SimplicialFamily& family, int c);

/// Per-simplex signed volumes and centers for a given vertex placement.
struct Geometry {
  Eigen::VectorXd volumes;
  Eigen::MatrixXd centers;  // num_simplices x dim
};

Geometry compute_geometry(const Simplices& simplices, const Points& positions);
inline Geometry compute_geometry(const SimplicialFamily& family) {
  return compute_geometry(family.simplices, family.vertices);
}

struct BBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

/// Axis-aligned bounding box of a point set (rows are points).
BBox bounding_box(const Points& points);

/// Regular grid of side `lambda` starting at bbox.lo and covering bbox; each
/// square is split into 2 triangles, each cube into the 6 Kuhn tetrahedra.
/// All simplices are positively oriented and vertices are shared.
SimplicialFamily build_regular_mesh(const BBox& bbox, double lambda, int dim);

/// Barycentric coordinates of y in simplex c (d+1 entries, summing to 1).
Eigen::VectorXd barycentric(const Points& x, std::span<const int> c, const Eigen::VectorXd& y);

inline constexpr double kContainmentTolerance = 1e-12;

/// Bucket index over simplex bounding boxes for repeated point location.
/// Queries return the lowest-index simplex whose barycentric coordinates
/// of the point are all >= -kContainmentTolerance.
class PointLocator {
 public:
  explicit PointLocator(const SimplicialFamily& family);

  std::optional<int> locate(const Eigen::VectorXd& y) const;

 private:
  bool cell_of(const Eigen::VectorXd& y, long& flat) const;

  const SimplicialFamily* family_;
  Eigen::VectorXd origin_;
  double cell_size_ = 1.0;
  std::vector<long> counts_per_axis_;
  std::vector<std::vector<int>> buckets_;
};

std::optional<int> locate_point(const SimplicialFamily& family, const Eigen::VectorXd& y);

struct PruneResult {
  SimplicialFamily family;
  /// For each input point, the retained simplex id it was assigned to, or -1.
  std::vector<int> assignment;
  /// New simplex id -> simplex id in the unpruned family.
  std::vector<int> kept_simplices;
  /// New vertex id -> vertex id in the unpruned family.
  std::vector<int> kept_vertices;
};

/// Keeps the simplices that receive at least one point (each point goes to
/// the lowest-index simplex containing it) and drops unused vertices.
PruneResult prune_mesh(const SimplicialFamily& family, const Points& points);

}  // namespace imvar::mesh
