#pragma once

#include "imvar/mesh.hpp"
#include "imvar/varifold.hpp"

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

using imvar::mesh::SimplicialFamily;
using imvar::varifold::FeatureSpace;
using imvar::varifold::MeshVarifold;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, lo, hi);
  return m;
}

/// Positively oriented random simplex (rows are vertices).
inline Eigen::MatrixXd random_simplex(std::mt19937_64& rng, int d, double scale = 1.0) {
  while (true) {
    Eigen::MatrixXd x = random_matrix(rng, d + 1, d, -scale, scale);
    Eigen::MatrixXd e(d, d);
    for (int k = 0; k < d; ++k) e.col(k) = (x.row(k + 1) - x.row(0)).transpose();
    const double det = e.determinant();
    if (std::abs(det) < 1e-3 * std::pow(scale, d)) continue;
    if (det < 0) x.row(1).swap(x.row(2));
    return x;
  }
}

inline SimplicialFamily single_simplex(const Eigen::MatrixXd& x) {
  SimplicialFamily f;
  f.dim = static_cast<int>(x.cols());
  f.vertices = x;
  f.simplices.resize(1, f.dim + 1);
  for (int k = 0; k <= f.dim; ++k) f.simplices(0, k) = k;
  return f;
}

/// Small regular mesh over [0, cells*lambda]^d with jittered vertices.
inline SimplicialFamily jittered_mesh(std::mt19937_64& rng, int d, int cells, double lambda, double jitter,
                                      const Eigen::VectorXd& origin) {
  imvar::mesh::BBox box{origin, origin + Eigen::VectorXd::Constant(d, cells * lambda)};
  SimplicialFamily f = imvar::mesh::build_regular_mesh(box, lambda, d);
  f.vertices += random_matrix(rng, f.num_vertices(), d, -jitter * lambda, jitter * lambda);
  return f;
}

inline Eigen::MatrixXd random_laws(std::mt19937_64& rng, int m, int nf, bool normalize) {
  Eigen::MatrixXd z = random_matrix(rng, m, nf, 0.05, 1.0);
  if (normalize) z = (z.array().colwise() / z.rowwise().sum().array()).matrix();
  else z *= 5.0;
  return z;
}

inline std::vector<std::string> names(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Random varifold on a jittered grid; categorical laws or count vectors.
inline MeshVarifold random_varifold(std::mt19937_64& rng, int d, int cells, int nf, bool categorical,
                                    double lambda = 0.5, const Eigen::VectorXd* origin = nullptr) {
  MeshVarifold v;
  const Eigen::VectorXd o = origin ? *origin : Eigen::VectorXd::Zero(d);
  v.family = jittered_mesh(rng, d, cells, lambda, 0.15, o);
  const int m = v.family.num_simplices();
  v.alpha = random_matrix(rng, m, 1, 0.5, 2.0).col(0);
  v.zeta = random_laws(rng, m, nf, categorical);
  v.space = categorical ? FeatureSpace::categorical(names("l", nf)) : FeatureSpace::count_vector(names("g", nf));
  return v;
}

/// Central-difference gradient of f at x (same shape as x).
inline Eigen::MatrixXd fd_gradient(const std::function<double(const Eigen::MatrixXd&)>& f, const Eigen::MatrixXd& x,
                                   double h) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  Eigen::MatrixXd xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double x0 = xp(i, j);
      xp(i, j) = x0 + h;
      const double fp = f(xp);
      xp(i, j) = x0 - h;
      const double fm = f(xp);
      xp(i, j) = x0;
      g(i, j) = (fp - fm) / (2 * h);
    }
  }
  return g;
}

inline double rel_l2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

}  // namespace testing_support
