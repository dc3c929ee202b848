#pragma once

#include "imvar/atlas.hpp"
#include "imvar/lddmm.hpp"
#include "imvar/mesh.hpp"
#include "imvar/pointprocess.hpp"
#include "imvar/varifold.hpp"

#include <string>
#include <vector>

namespace imvar::io {

/// Provenance stamped into every file written by the tool.
struct Meta {
  std::string version = IMVAR_VERSION;
  std::string config_hash;
};

// Points CSV. Three layouts are recognized from the header:
//   long   x,y[,z],gene,count      one detection record per row; rows with
//                                  identical coordinates form one point
//   labels x,y[,z],label           one categorical mark per row
//   wide   x,y[,z],<gene>...       one count column per gene
// Lines starting with '#' are comments. Errors carry the line number.
enum class CsvLayout { Long, Labels, Wide };

struct PointsCsv {
  varifold::PointSet points;
  CsvLayout layout = CsvLayout::Wide;
};

PointsCsv parse_points_csv(const std::string& text);
PointsCsv read_points_csv(const std::string& path);
/// Label layout for categorical sets, wide layout for count sets.
std::string format_points_csv(const varifold::PointSet& points, const Meta& meta);

// JSON documents. Each writer adds a "meta" object; readers ignore it.
std::string mesh_to_json(const mesh::SimplicialFamily& family, const Meta& meta);
mesh::SimplicialFamily mesh_from_json(const std::string& text);

std::string varifold_to_json(const varifold::MeshVarifold& v, const Meta& meta);
varifold::MeshVarifold varifold_from_json(const std::string& text);

/// Keys: dim, vertices, simplices, labels, zeta, and optional alpha_min,
/// alpha_max (null for unbounded) and weight.
std::string atlas_to_json(const atlas::AtlasVarifold& a, const Meta& meta);
atlas::AtlasVarifold atlas_from_json(const std::string& text);

std::string theta_to_json(const atlas::LabelParameters& theta, const std::vector<double>& trace, const Meta& meta);
atlas::LabelParameters theta_from_json(const std::string& text);

/// Keys: dim, vertices, simplices, features, lambda, zeta.
std::string model_to_json(const pointprocess::CppModel& m, const Meta& meta);
pointprocess::CppModel model_from_json(const std::string& text);

/// Region mesh plus named feature sets for the statistic field.
struct Partition {
  mesh::SimplicialFamily regions;
  std::vector<std::vector<std::string>> feature_sets;
};
Partition partition_from_json(const std::string& text);
std::string partition_to_json(const Partition& p, const Meta& meta);

/// Everything needed to replay a deformation: initial vertices, control
/// trajectory and flow kernel width, plus the run diagnostics.
struct Bundle {
  Eigen::MatrixXd z0;
  lddmm::ControlTrajectory a;
  double sigma_v = 1.0;
  lddmm::Diagnostics diagnostics;
};
std::string bundle_to_json(const Bundle& b, const Meta& meta);
Bundle bundle_from_json(const std::string& text);

/// Images of `points` under the bundle's diffeomorphism.
Eigen::MatrixXd apply_bundle(const Bundle& b, const Eigen::MatrixXd& points);

/// Deformation grid: probe u (first dim columns) and its image x.
std::string format_grid_csv(const Eigen::MatrixXd& probes, const Eigen::MatrixXd& images, const Meta& meta);

/// region_id,feature_set_id,n1,n2,chi1,chi2,p_hat,p,T
std::string format_stats_csv(const pointprocess::StatisticField& field, const Meta& meta);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace imvar::io
