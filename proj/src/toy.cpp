#include "imvar/toy.hpp"

#include "imvar/error.hpp"

#include <cmath>
#include <random>

namespace imvar::toy {

Shape small_shape(int dim) {
  Shape s;
  s.dim = dim;
  s.radius = 1.0;
  s.molecule_radius = 0.6;
  s.edge = dim == 2 ? 0.065 : 0.108;
  return s;
}

Shape large_shape(int dim) {
  Shape s = small_shape(dim);
  s.radius = 1.3;
  s.molecule_radius = 0.45;
  return s;
}

double concentration(const Shape& s, double r) { return 1.0 / (1.0 + std::exp((r - s.molecule_radius) / s.width)); }

varifold::MeshVarifold make_varifold(const Shape& s) {
  if (s.dim != 2 && s.dim != 3) throw Error(ErrorCode::InvalidArgument, "toy shapes are 2D or 3D");
  if (!(s.radius > 0.0) || !(s.edge > 0.0)) throw Error(ErrorCode::InvalidArgument, "toy radius and edge must be positive");
  mesh::BBox box{Eigen::VectorXd::Constant(s.dim, -s.radius), Eigen::VectorXd::Constant(s.dim, s.radius)};
  const mesh::SimplicialFamily grid = mesh::build_regular_mesh(box, s.edge, s.dim);
  const mesh::Geometry g = mesh::compute_geometry(grid);
  std::vector<int> keep;
  for (int c = 0; c < grid.num_simplices(); ++c) {
    if (g.centers.row(c).norm() <= s.radius) keep.push_back(c);
  }
  Eigen::MatrixXd inside(static_cast<Eigen::Index>(keep.size()), s.dim);
  for (std::size_t i = 0; i < keep.size(); ++i) inside.row(static_cast<Eigen::Index>(i)) = g.centers.row(keep[i]);
  mesh::PruneResult pr = mesh::prune_mesh(grid, inside);

  varifold::MeshVarifold v;
  v.family = std::move(pr.family);
  v.space = varifold::FeatureSpace::categorical({"molecule", "substrate"});
  const int m = v.family.num_simplices();
  v.alpha = Eigen::VectorXd::Ones(m);
  v.zeta.resize(m, 2);
  const mesh::Geometry gv = mesh::compute_geometry(v.family);
  for (int c = 0; c < m; ++c) {
    const double conc = concentration(s, gv.centers.row(c).norm());
    v.zeta(c, 0) = conc;
    v.zeta(c, 1) = 1.0 - conc;
  }
  return v;
}

varifold::PointSet make_points(const Shape& s, double density, std::uint64_t seed) {
  if (!(density > 0.0)) throw Error(ErrorCode::InvalidArgument, "toy point density must be positive");
  const double vol = s.dim == 2 ? M_PI * s.radius * s.radius : 4.0 / 3.0 * M_PI * std::pow(s.radius, 3);
  std::mt19937_64 rng(seed);
  const long n = std::poisson_distribution<long>(density * vol)(rng);
  std::uniform_real_distribution<double> u(-s.radius, s.radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  varifold::PointSet p;
  p.dim = s.dim;
  p.space = varifold::FeatureSpace::categorical({"molecule", "substrate"});
  p.positions.resize(n, s.dim);
  p.labels.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    Eigen::VectorXd x(s.dim);
    do {
      for (int a = 0; a < s.dim; ++a) x[a] = u(rng);
    } while (x.norm() > s.radius);
    p.positions.row(i) = x.transpose();
    p.labels[static_cast<std::size_t>(i)] = unit(rng) < concentration(s, x.norm()) ? 0 : 1;
  }
  return p;
}

}  // namespace imvar::toy
