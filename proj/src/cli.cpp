#include "imvar/cli.hpp"

#include "imvar/atlas.hpp"
#include "imvar/config.hpp"
#include "imvar/error.hpp"
#include "imvar/io.hpp"
#include "imvar/kernels.hpp"
#include "imvar/lddmm.hpp"
#include "imvar/mesh.hpp"
#include "imvar/pointprocess.hpp"
#include "imvar/simd/gauss.hpp"
#include "imvar/toy.hpp"
#include "imvar/varifold.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace imvar::cli {

namespace {

using Eigen::MatrixXd;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  config::RunConfig load() const {
    config::RunConfig cfg = config_path.empty() ? config::RunConfig() : config::RunConfig::load(config_path);
    for (const auto& o : overrides) cfg.set(o);
    const std::string& isa = cfg.raw("simd");
    if (isa == "scalar") simd::set_isa(simd::Isa::Scalar);
    else if (isa == "avx2") simd::set_isa(simd::Isa::Avx2);
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key=value run configuration file");
  app->add_option("--set", c.overrides, "override one config entry (key=value), repeatable");
}

io::Meta meta_of(const config::RunConfig& cfg) {
  io::Meta m;
  m.config_hash = cfg.hash();
  return m;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Infeasible: return kInfeasible;
    case ErrorCode::MaxIterations:
    case ErrorCode::NonFinite: return kNotConverged;
    default: return kInputError;
  }
}

// Regular probe lattice over a bounding box.
MatrixXd lattice(const mesh::BBox& box, double step) {
  const int d = static_cast<int>(box.lo.size());
  std::vector<int> n(static_cast<std::size_t>(d));
  long total = 1;
  for (int a = 0; a < d; ++a) {
    n[a] = static_cast<int>(std::floor((box.hi[a] - box.lo[a]) / step + 1e-9)) + 1;
    total *= n[a];
  }
  if (total > 2'000'000) throw Error(ErrorCode::InvalidArgument, "grid.step gives too many probes");
  MatrixXd p(total, d);
  for (long i = 0; i < total; ++i) {
    long r = i;
    for (int a = 0; a < d; ++a) {
      p(i, a) = box.lo[a] + step * static_cast<double>(r % n[a]);
      r /= n[a];
    }
  }
  return p;
}

double grid_step(const config::RunConfig& cfg, const mesh::BBox& box) {
  if (!cfg.is_auto("grid.step")) return cfg.number("grid.step");
  const double extent = (box.hi - box.lo).maxCoeff();
  return extent > 0.0 ? extent / 20.0 : 1.0;
}

int cmd_mesh(const Common& common, const std::string& points_path, double lambda_flag, int dim_flag,
             const std::string& out, std::ostream& os) {
  config::RunConfig cfg = common.load();
  if (lambda_flag > 0.0) cfg.set("lambda", std::to_string(lambda_flag));
  io::PointsCsv csv = io::read_points_csv(points_path);
  varifold::PointSet& pts = csv.points;
  if (dim_flag != 0 && dim_flag != pts.dim) {
    throw Error(ErrorCode::InvalidArgument,
                "--dim " + std::to_string(dim_flag) + " does not match the CSV (" + std::to_string(pts.dim) + "D)");
  }
  std::string features = cfg.raw("features");
  if (features == "auto") features = csv.layout == io::CsvLayout::Labels ? "cell_labels" : "gene_counts";
  const bool labels = pts.space.kind == varifold::FeatureSpace::Kind::Categorical;
  if ((features == "cell_labels") != labels) {
    throw Error(ErrorCode::KindMismatch, "features=" + features + " does not fit the CSV layout");
  }
  if (!labels && pts.space.size() > cfg.integer("genes.k")) {
    pts = varifold::subset_genes(pts, varifold::select_genes(pts, cfg.integer("genes.k")));
  }
  const mesh::SimplicialFamily grid = mesh::build_regular_mesh(mesh::bounding_box(pts.positions), cfg.lambda(), pts.dim);
  const mesh::PruneResult pr = mesh::prune_mesh(grid, pts.positions);
  varifold::MeshVarifold v;
  if (features == "cell_labels") v = varifold::from_cell_labels(pts, pr.family);
  else if (features == "rna_counts") v = varifold::from_rna_counts(pts, pr.family);
  else v = varifold::from_gene_counts(pts, pr.family, cfg.weight_mode());
  const io::Meta meta = meta_of(cfg);
  io::write_file(out + ".mesh.json", io::mesh_to_json(pr.family, meta));
  io::write_file(out + ".varifold.json", io::varifold_to_json(v, meta));
  os << "points " << pts.size() << "\nvertices " << pr.family.num_vertices() << "\nsimplices "
     << pr.family.num_simplices() << "\nfeatures " << v.space.size() << "\nconfig_hash " << meta.config_hash << "\n";
  return kSuccess;
}

void write_registration(const std::string& out, const varifold::MeshVarifold& templ, const lddmm::RegistrationResult& r,
                        double sigma_v, const config::RunConfig& cfg) {
  const io::Meta meta = meta_of(cfg);
  io::Bundle b{templ.family.vertices, r.a, sigma_v, r.diagnostics};
  io::write_file(out + ".bundle.json", io::bundle_to_json(b, meta));
  io::write_file(out + ".deformed.json", io::varifold_to_json(varifold::deform(templ, r.traj.final()), meta));
  const mesh::BBox box = mesh::bounding_box(templ.family.vertices);
  const MatrixXd probes = lattice(box, grid_step(cfg, box));
  const MatrixXd images = lddmm::transport_points(r.a, r.traj, lddmm::FlowKernel{sigma_v}, probes);
  io::write_file(out + ".grid.csv", io::format_grid_csv(probes, images, meta));
}

void print_diagnostics(const lddmm::Diagnostics& d, std::ostream& os) {
  os << "status " << lddmm::to_string(d.status) << "\niterations " << d.iterations << "\ninitial_sqdist "
     << d.initial_sqdist << "\nfinal_sqdist " << d.final_sqdist << "\nratio "
     << (d.initial_sqdist > 0 ? d.final_sqdist / d.initial_sqdist : 0.0) << "\nmin_deformed_volume "
     << d.min_deformed_volume << "\n";
}

int cmd_register(const Common& common, const std::string& templ_path, const std::string& target_path,
                 const std::string& out, std::ostream& os) {
  const config::RunConfig cfg = common.load();
  const varifold::MeshVarifold templ = io::varifold_from_json(io::read_file(templ_path));
  const varifold::MeshVarifold target = io::varifold_from_json(io::read_file(target_path));
  if (!(templ.space == target.space)) throw Error(ErrorCode::KindMismatch, "template and target feature spaces differ");
  if (templ.family.dim != target.family.dim) throw Error(ErrorCode::InvalidArgument, "dimension mismatch");
  const kernels::KernelMetric metric = cfg.metric();
  const double d0 = kernels::varifold_sqdist(metric, templ, target);
  lddmm::RegistrationConfig rc = cfg.registration(d0);
  const lddmm::RegistrationResult r = lddmm::register_varifolds(templ, target, metric, rc);
  write_registration(out, templ, r, rc.kv.sigma, cfg);
  print_diagnostics(r.diagnostics, os);
  os << "sigma " << rc.sigma << "\nconfig_hash " << cfg.hash() << "\n";
  return r.diagnostics.status == lddmm::Status::LineSearchFailed ? kNotConverged : kSuccess;
}

int cmd_atlas(const Common& common, const std::string& atlas_path, const std::string& target_path,
              const std::string& out, std::ostream& os) {
  const config::RunConfig cfg = common.load();
  atlas::AtlasVarifold at = io::atlas_from_json(io::read_file(atlas_path));
  if (cfg.raw("atlas.bounds") == "none") {
    at.alpha_min.setZero();
    at.alpha_max.setConstant(std::numeric_limits<double>::infinity());
  }
  const varifold::MeshVarifold target = io::varifold_from_json(io::read_file(target_path));
  atlas::AtlasConfig ac;
  ac.mode = cfg.raw("atlas.mode") == "genecount" ? atlas::Mode::GeneCount : atlas::Mode::CellType;
  ac.literal_weights = cfg.flag("atlas.literal_weights");
  ac.rounds = cfg.integer("atlas.rounds");
  kernels::KernelMetric metric = cfg.metric();
  // The feature kernel is fixed by the mode.
  metric.k2.kind = ac.mode == atlas::Mode::CellType ? kernels::FeatureKernel::Kind::Identity
                                                    : kernels::FeatureKernel::Kind::EuclideanDot;
  metric.k2.log_scale = false;
  ac.registration = cfg.registration(kernels::varifold_inner(metric, target, target));
  const atlas::AtlasResult res = atlas::alternate_minimize(at, target, metric, ac);
  const io::Meta meta = meta_of(cfg);
  io::write_file(out + ".theta.json", io::theta_to_json(res.theta, res.objective_trace, meta));
  io::Bundle b{at.family.vertices, res.registration.a, ac.registration.kv.sigma, res.registration.diagnostics};
  io::write_file(out + ".bundle.json", io::bundle_to_json(b, meta));
  os << "rounds " << ac.rounds << "\nobjective_trace";
  for (double v : res.objective_trace) os << ' ' << v;
  os << "\nqp_kkt " << res.qp.back().kkt_residual << "\nconfig_hash " << meta.config_hash << "\n";
  bool converged = res.registration.diagnostics.status != lddmm::Status::LineSearchFailed;
  for (const auto& q : res.qp) converged = converged && q.status == atlas::QpStatus::Converged;
  return converged ? kSuccess : kNotConverged;
}

int cmd_simulate(const Common& common, const std::string& model_path, std::uint64_t seed, bool seed_given,
                 int replicates, const std::string& out, std::ostream& os) {
  const config::RunConfig cfg = common.load();
  const pointprocess::CppModel model = io::model_from_json(io::read_file(model_path));
  if (!seed_given) seed = cfg.seed();
  if (replicates < 1) throw Error(ErrorCode::InvalidArgument, "--n-replicates must be >= 1");
  const io::Meta meta = meta_of(cfg);
  for (int k = 0; k < replicates; ++k) {
    const pointprocess::Realization r = pointprocess::sample(model, seed + static_cast<std::uint64_t>(k));
    const std::string path = replicates == 1 ? out + ".csv" : out + "_" + std::to_string(k) + ".csv";
    io::write_file(path, io::format_points_csv(r, meta));
    os << path << ' ' << r.size() << "\n";
  }
  return kSuccess;
}

// Remaps a label realization onto `names` (extending it with unseen labels).
void unify_labels(pointprocess::Realization& r, std::vector<std::string>& names) {
  if (r.space.kind != varifold::FeatureSpace::Kind::Categorical) {
    throw Error(ErrorCode::KindMismatch, "test realizations must use the x,y[,z],label layout");
  }
  std::vector<int> map(static_cast<std::size_t>(r.space.size()));
  for (int i = 0; i < r.space.size(); ++i) {
    const auto it = std::find(names.begin(), names.end(), r.space.names[i]);
    if (it == names.end()) {
      map[i] = static_cast<int>(names.size());
      names.push_back(r.space.names[i]);
    } else {
      map[i] = static_cast<int>(it - names.begin());
    }
  }
  for (int& l : r.labels) l = map[l];
}

MatrixXd deformation(const std::string& spec, const MatrixXd& vertices) {
  if (spec == "identity") return vertices;
  return io::apply_bundle(io::bundle_from_json(io::read_file(spec)), vertices);
}

int cmd_test(const Common& common, const std::string& n1_path, const std::string& n2_path, const std::string& phi1,
             const std::string& phi2, const std::string& partition_path, const std::string& out, std::ostream& os) {
  const config::RunConfig cfg = common.load();
  pointprocess::Realization n1 = io::read_points_csv(n1_path).points;
  pointprocess::Realization n2 = io::read_points_csv(n2_path).points;
  const io::Partition part = io::partition_from_json(io::read_file(partition_path));
  if (n1.dim != part.regions.dim || n2.dim != part.regions.dim) {
    throw Error(ErrorCode::InvalidArgument, "partition dimension does not match the realizations");
  }
  std::vector<std::string> names;
  unify_labels(n1, names);
  unify_labels(n2, names);
  n1.space = n2.space = varifold::FeatureSpace::categorical(names);
  pointprocess::FeaturePartition sets;
  for (const auto& set : part.feature_sets) {
    std::vector<int> ids;
    for (const auto& name : set) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw Error(ErrorCode::InvalidArgument, "feature set names unknown label '" + name + "'");
      ids.push_back(static_cast<int>(it - names.begin()));
    }
    sets.push_back(std::move(ids));
  }
  const MatrixXd y1 = deformation(phi1, part.regions.vertices);
  const MatrixXd y2 = deformation(phi2, part.regions.vertices);
  const pointprocess::StatisticField field = pointprocess::statistic_field(n1, n2, y1, y2, part.regions, sets);
  io::write_file(out, io::format_stats_csv(field, meta_of(cfg)));
  double tmax = 0.0;
  int arg = -1;
  for (int c = 0; c < field.num_regions(); ++c) {
    if (field.cells[c][0].T > tmax) {
      tmax = field.cells[c][0].T;
      arg = c;
    }
  }
  os << "regions " << field.num_regions() << "\nfeature_sets " << field.num_sets() << "\nmax_T " << tmax
     << "\nmax_region " << arg << "\n";
  return kSuccess;
}

int cmd_toy(const Common& common, int dim, const std::string& which, double density, const std::string& out,
            std::ostream& os) {
  const config::RunConfig cfg = common.load();
  if (dim != 2 && dim != 3) throw Error(ErrorCode::InvalidArgument, "--dim must be 2 or 3");
  const toy::Shape s = which == "large" ? toy::large_shape(dim) : toy::small_shape(dim);
  const varifold::PointSet p = toy::make_points(s, density, cfg.seed());
  io::write_file(out, io::format_points_csv(p, meta_of(cfg)));
  os << "points " << p.size() << "\n";
  return kSuccess;
}

std::string key_help() {
  std::ostringstream os;
  os << "\nConfiguration keys (--config file, --set key=value):\n";
  for (const auto& k : config::documented_keys()) {
    os << "  " << k.key << " = " << k.default_value << "\n      " << k.help << "\n";
  }
  os << "\nExit codes: 0 success, 2 input error, 3 optimizer did not converge, 4 infeasible bounds.\n";
  return os.str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"imvar: image-varifold registration, atlas fitting and point-process tests", "imvar"};
  app.footer(key_help());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(IMVAR_VERSION));

  Common common;
  std::string out_prefix = "out";

  auto* mesh_cmd = app.add_subcommand("mesh", "points CSV -> pruned mesh JSON and varifold JSON");
  std::string points_path;
  double lambda_flag = 0.0;
  int dim_flag = 0;
  mesh_cmd->add_option("points", points_path, "points CSV")->required();
  mesh_cmd->add_option("--lambda", lambda_flag, "mesh resolution (overrides config)");
  mesh_cmd->add_option("--dim", dim_flag, "expected dimension (2 or 3)");
  mesh_cmd->add_option("-o,--out", out_prefix, "output prefix");
  add_common(mesh_cmd, common);

  auto* reg_cmd = app.add_subcommand("register", "register a template varifold onto a target");
  std::string templ_path, target_path;
  reg_cmd->add_option("template", templ_path, "template varifold JSON")->required();
  reg_cmd->add_option("target", target_path, "target varifold JSON")->required();
  reg_cmd->add_option("-o,--out", out_prefix, "output prefix");
  add_common(reg_cmd, common);

  auto* atlas_cmd = app.add_subcommand("atlas", "fit label parameters and register an atlas to a target");
  std::string atlas_path;
  atlas_cmd->add_option("atlas", atlas_path, "atlas JSON")->required();
  atlas_cmd->add_option("target", target_path, "target varifold JSON")->required();
  atlas_cmd->add_option("-o,--out", out_prefix, "output prefix");
  add_common(atlas_cmd, common);

  auto* sim_cmd = app.add_subcommand("simulate", "sample a compound Poisson model");
  std::string model_path;
  std::uint64_t seed = 0;
  int replicates = 1;
  sim_cmd->add_option("model", model_path, "model JSON")->required();
  auto* seed_opt = sim_cmd->add_option("--seed", seed, "random seed (default: config seed)");
  sim_cmd->add_option("--n-replicates", replicates, "number of realizations");
  sim_cmd->add_option("-o,--out", out_prefix, "output prefix");
  add_common(sim_cmd, common);

  auto* test_cmd = app.add_subcommand("test", "likelihood-ratio statistic field between two realizations");
  std::string n1_path, n2_path, phi1 = "identity", phi2 = "identity", partition_path, stats_path = "stats.csv";
  test_cmd->add_option("n1", n1_path, "first realization CSV")->required();
  test_cmd->add_option("n2", n2_path, "second realization CSV")->required();
  test_cmd->add_option("phi1", phi1, "bundle JSON of the first deformation, or 'identity'")->required();
  test_cmd->add_option("phi2", phi2, "bundle JSON of the second deformation, or 'identity'")->required();
  test_cmd->add_option("partition", partition_path, "partition JSON")->required();
  test_cmd->add_option("-o,--out", stats_path, "statistics CSV");
  add_common(test_cmd, common);

  auto* toy_cmd = app.add_subcommand("toy", "write toy disc/ball point data");
  int toy_dim = 2;
  std::string which = "small";
  double density = 2000.0;
  std::string toy_out = "toy.csv";
  toy_cmd->add_option("--dim", toy_dim, "2 or 3");
  toy_cmd->add_option("--shape", which, "small or large")->check(CLI::IsMember({"small", "large"}));
  toy_cmd->add_option("--density", density, "points per unit volume");
  toy_cmd->add_option("-o,--out", toy_out, "points CSV");
  add_common(toy_cmd, common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::CallForVersion& e) {
    out << IMVAR_VERSION << "\n";
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (*mesh_cmd) return cmd_mesh(common, points_path, lambda_flag, dim_flag, out_prefix, out);
    if (*reg_cmd) return cmd_register(common, templ_path, target_path, out_prefix, out);
    if (*atlas_cmd) return cmd_atlas(common, atlas_path, target_path, out_prefix, out);
    if (*sim_cmd) return cmd_simulate(common, model_path, seed, seed_opt->count() > 0, replicates, out_prefix, out);
    if (*test_cmd) return cmd_test(common, n1_path, n2_path, phi1, phi2, partition_path, stats_path, out);
    if (*toy_cmd) return cmd_toy(common, toy_dim, which, density, toy_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace imvar::cli
