#pragma once

#include "imvar/varifold.hpp"

#include <cstdint>

namespace imvar::toy {

/// A disc (2D) or ball (3D) of substrate carrying a molecule concentrated
/// around the center. The concentration at radius r is the logistic
/// profile 1 / (1 + exp((r - molecule_radius) / width)).
struct Shape {
  int dim = 2;
  double radius = 1.0;
  double molecule_radius = 0.6;
  double width = 0.05;
  /// Grid step of the mesh.
  double edge = 0.065;
};

/// Presets: the small shape (large molecule region) and the large shape
/// (small molecule region). The 2D meshes have about 1.5K triangles and
/// the 3D template about 20K tetrahedra.
Shape small_shape(int dim);
Shape large_shape(int dim);

double concentration(const Shape& s, double r);

/// Mesh varifold on the simplices of the regular grid whose centers lie in
/// the disc/ball. alpha = 1; features (molecule, substrate) with laws
/// (c, 1 - c) evaluated at the simplex center.
varifold::MeshVarifold make_varifold(const Shape& s);

/// Point data for the same shape: `density` points per unit volume,
/// uniform in the disc/ball, labelled molecule with probability c(r).
varifold::PointSet make_points(const Shape& s, double density, std::uint64_t seed);

}  // namespace imvar::toy
