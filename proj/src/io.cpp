#include "imvar/io.hpp"

#include "imvar/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace imvar::io {

using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

double number(const std::string& s, int line) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) parse_fail(line, "not a number: '" + s + "'");
  if (!std::isfinite(v)) parse_fail(line, "non-finite value");
  return v;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("invalid JSON: ") + e.what());
  }
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed document: ") + e.what());
  }
}

json meta_json(const Meta& m) { return {{"version", m.version}, {"config_hash", m.config_hash}}; }

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

MatrixXd matrix_from(const json& j, Eigen::Index cols, const char* what) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, std::string(what) + " must be an array of rows");
  MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw Error(ErrorCode::ParseError, std::string(what) + ": row " + std::to_string(i) + " has the wrong length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = j[i][c].get<double>();
  }
  return m;
}

json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) a.push_back(v[i]);
    else a.push_back(nullptr);
  }
  return a;
}

VectorXd vector_from(const json& j, double null_value) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].is_null() ? null_value : j[i].get<double>();
  return v;
}

void put_family(json& j, const mesh::SimplicialFamily& f) {
  j["dim"] = f.dim;
  j["vertices"] = matrix_json(f.vertices);
  json s = json::array();
  for (int c = 0; c < f.num_simplices(); ++c) {
    const auto t = f.simplex(c);
    s.push_back(std::vector<int>(t.begin(), t.end()));
  }
  j["simplices"] = std::move(s);
}

mesh::SimplicialFamily get_family(const json& j) {
  mesh::SimplicialFamily f;
  f.dim = j.at("dim").get<int>();
  if (f.dim < 1 || f.dim > 3) throw Error(ErrorCode::ParseError, "dim must be 1, 2 or 3");
  f.vertices = matrix_from(j.at("vertices"), f.dim, "vertices");
  const json& s = j.at("simplices");
  f.simplices.resize(static_cast<Eigen::Index>(s.size()), f.dim + 1);
  for (std::size_t c = 0; c < s.size(); ++c) {
    if (s[c].size() != static_cast<std::size_t>(f.dim + 1)) {
      throw Error(ErrorCode::ParseError, "simplex " + std::to_string(c) + " needs dim+1 indices");
    }
    for (int k = 0; k <= f.dim; ++k) f.simplices(static_cast<Eigen::Index>(c), k) = s[c][k].get<int>();
  }
  mesh::validate_structure(f);
  return f;
}

varifold::FeatureSpace get_space(const json& j) {
  const std::string kind = j.value("feature_kind", "categorical");
  auto names = j.at("features").get<std::vector<std::string>>();
  varifold::FeatureSpace s;
  if (kind == "categorical") s = varifold::FeatureSpace::categorical(std::move(names));
  else if (kind == "count_vector") s = varifold::FeatureSpace::count_vector(std::move(names));
  else throw Error(ErrorCode::ParseError, "unknown feature_kind '" + kind + "'");
  s.validate();
  return s;
}

void put_space(json& j, const varifold::FeatureSpace& s) {
  j["feature_kind"] = s.kind == varifold::FeatureSpace::Kind::Categorical ? "categorical" : "count_vector";
  j["features"] = s.names;
}

std::string comment_line(const Meta& m) {
  return "# imvar " + m.version + " config_hash=" + m.config_hash + "\n";
}

json diagnostics_json(const lddmm::Diagnostics& d) {
  return {{"objective", d.objective},
          {"kinetic", d.kinetic},
          {"attachment", d.attachment},
          {"initial_sqdist", d.initial_sqdist},
          {"final_sqdist", d.final_sqdist},
          {"hamiltonian_drift", d.hamiltonian_drift},
          {"min_deformed_volume", d.min_deformed_volume},
          {"iterations", d.iterations},
          {"status", lddmm::to_string(d.status)}};
}

}  // namespace

PointsCsv parse_points_csv(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  std::vector<std::string> header;
  int header_line = 0;
  struct Row {
    std::vector<std::string> cells;
    int line;
  };
  std::vector<Row> rows;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = split(line);
      header_line = lineno;
    } else {
      rows.push_back({split(line), lineno});
    }
  }
  if (header.empty()) throw Error(ErrorCode::EmptyInput, "no header line");
  if (header.size() < 3 || header[0] != "x" || header[1] != "y") {
    parse_fail(header_line, "header must start with x,y");
  }
  const int dim = header[2] == "z" ? 3 : 2;
  const std::vector<std::string> rest(header.begin() + dim, header.end());
  PointsCsv out;
  if (rest == std::vector<std::string>{"gene", "count"}) out.layout = CsvLayout::Long;
  else if (rest == std::vector<std::string>{"label"}) out.layout = CsvLayout::Labels;
  else if (!rest.empty()) out.layout = CsvLayout::Wide;
  else parse_fail(header_line, "no feature columns");
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no data rows");

  varifold::PointSet& p = out.points;
  p.dim = dim;
  auto coords = [&](const Row& r) {
    if (r.cells.size() != header.size()) {
      parse_fail(r.line, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(r.cells.size()));
    }
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (int a = 0; a < dim; ++a) x[a] = number(r.cells[a], r.line);
    return x;
  };

  if (out.layout == CsvLayout::Wide) {
    p.space = varifold::FeatureSpace::count_vector(rest);
    try {
      p.space.validate();
    } catch (const Error& e) {
      parse_fail(header_line, e.what());
    }
    const int g = p.space.size();
    p.positions.resize(static_cast<Eigen::Index>(rows.size()), dim);
    p.counts.resize(static_cast<Eigen::Index>(rows.size()), g);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto x = coords(rows[i]);
      for (int a = 0; a < dim; ++a) p.positions(static_cast<Eigen::Index>(i), a) = x[a];
      for (int k = 0; k < g; ++k) {
        const double c = number(rows[i].cells[dim + k], rows[i].line);
        if (c < 0.0) parse_fail(rows[i].line, "negative count");
        p.counts(static_cast<Eigen::Index>(i), k) = c;
      }
    }
    return out;
  }

  if (out.layout == CsvLayout::Labels) {
    std::map<std::string, int> ids;
    std::vector<std::string> names;
    p.positions.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto x = coords(rows[i]);
      for (int a = 0; a < dim; ++a) p.positions(static_cast<Eigen::Index>(i), a) = x[a];
      const std::string& lab = rows[i].cells[dim];
      if (lab.empty()) parse_fail(rows[i].line, "empty label");
      auto [it, fresh] = ids.emplace(lab, static_cast<int>(names.size()));
      if (fresh) names.push_back(lab);
      p.labels.push_back(it->second);
    }
    p.space = varifold::FeatureSpace::categorical(std::move(names));
    return out;
  }

  // Long layout: aggregate records by coordinates.
  std::map<std::vector<double>, int> where;
  std::map<std::string, int> genes;
  std::vector<std::string> names;
  std::vector<std::vector<double>> pos;
  std::vector<std::map<int, double>> counts;
  for (const Row& r : rows) {
    const auto x = coords(r);
    const std::string& gene = r.cells[dim];
    if (gene.empty()) parse_fail(r.line, "empty gene name");
    const double c = number(r.cells[dim + 1], r.line);
    if (c < 0.0) parse_fail(r.line, "negative count");
    auto [gi, gfresh] = genes.emplace(gene, static_cast<int>(names.size()));
    if (gfresh) names.push_back(gene);
    auto [pi, pfresh] = where.emplace(x, static_cast<int>(pos.size()));
    if (pfresh) {
      pos.push_back(x);
      counts.emplace_back();
    }
    counts[pi->second][gi->second] += c;
  }
  p.space = varifold::FeatureSpace::count_vector(std::move(names));
  p.positions.resize(static_cast<Eigen::Index>(pos.size()), dim);
  p.counts = MatrixXd::Zero(static_cast<Eigen::Index>(pos.size()), p.space.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (int a = 0; a < dim; ++a) p.positions(static_cast<Eigen::Index>(i), a) = pos[i][a];
    for (const auto& [g, c] : counts[i]) p.counts(static_cast<Eigen::Index>(i), g) = c;
  }
  return out;
}

PointsCsv read_points_csv(const std::string& path) { return parse_points_csv(read_file(path)); }

std::string format_points_csv(const varifold::PointSet& p, const Meta& meta) {
  std::ostringstream os;
  os << comment_line(meta);
  os << "x,y";
  if (p.dim == 3) os << ",z";
  const bool labels = p.space.kind == varifold::FeatureSpace::Kind::Categorical;
  if (labels) {
    os << ",label";
  } else {
    for (const auto& g : p.space.names) os << ',' << g;
  }
  os << '\n';
  for (int i = 0; i < p.size(); ++i) {
    for (int a = 0; a < p.dim; ++a) os << (a ? "," : "") << fmt(p.positions(i, a));
    if (labels) {
      os << ',' << p.space.names[p.labels[i]];
    } else {
      for (int g = 0; g < p.space.size(); ++g) os << ',' << fmt(p.counts(i, g));
    }
    os << '\n';
  }
  return os.str();
}

std::string mesh_to_json(const mesh::SimplicialFamily& family, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  put_family(j, family);
  return j.dump(1);
}

mesh::SimplicialFamily mesh_from_json(const std::string& text) {
  return guarded([&] { return get_family(parse_json(text)); });
}

std::string varifold_to_json(const varifold::MeshVarifold& v, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  put_family(j, v.family);
  put_space(j, v.space);
  j["alpha"] = vector_json(v.alpha);
  j["zeta"] = matrix_json(v.zeta);
  return j.dump(1);
}

varifold::MeshVarifold varifold_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    varifold::MeshVarifold v;
    v.family = get_family(j);
    v.space = get_space(j);
    v.alpha = vector_from(j.at("alpha"), std::numeric_limits<double>::quiet_NaN());
    v.zeta = matrix_from(j.at("zeta"), v.space.size(), "zeta");
    varifold::validate(v);
    return v;
  });
}

std::string atlas_to_json(const atlas::AtlasVarifold& a, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  put_family(j, a.family);
  j["labels"] = a.labels;
  j["zeta"] = matrix_json(a.zeta);
  if (a.alpha_min.size()) j["alpha_min"] = vector_json(a.alpha_min);
  if (a.alpha_max.size()) j["alpha_max"] = vector_json(a.alpha_max);
  if (a.weight.size()) j["weight"] = vector_json(a.weight);
  return j.dump(1);
}

atlas::AtlasVarifold atlas_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    atlas::AtlasVarifold a;
    a.family = get_family(j);
    a.labels = j.at("labels").get<std::vector<std::string>>();
    a.zeta = matrix_from(j.at("zeta"), static_cast<Eigen::Index>(a.labels.size()), "zeta");
    if (j.contains("alpha_min")) a.alpha_min = vector_from(j["alpha_min"], 0.0);
    if (j.contains("alpha_max")) a.alpha_max = vector_from(j["alpha_max"], std::numeric_limits<double>::infinity());
    if (j.contains("weight")) a.weight = vector_from(j["weight"], 1.0);
    atlas::normalize(a);
    return a;
  });
}

std::string theta_to_json(const atlas::LabelParameters& theta, const std::vector<double>& trace, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  j["labels"] = theta.labels;
  put_space(j, theta.space);
  j["theta"] = matrix_json(theta.theta);
  j["objective_trace"] = trace;
  return j.dump(1);
}

atlas::LabelParameters theta_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    atlas::LabelParameters t;
    t.labels = j.at("labels").get<std::vector<std::string>>();
    t.space = get_space(j);
    t.theta = matrix_from(j.at("theta"), t.space.size(), "theta");
    if (t.theta.rows() != static_cast<Eigen::Index>(t.labels.size())) {
      throw Error(ErrorCode::ParseError, "theta needs one row per label");
    }
    return t;
  });
}

std::string model_to_json(const pointprocess::CppModel& m, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  put_family(j, m.regions);
  j["features"] = m.space.names;
  j["lambda"] = vector_json(m.lambda);
  j["zeta"] = matrix_json(m.zeta);
  return j.dump(1);
}

pointprocess::CppModel model_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    pointprocess::CppModel m;
    m.regions = get_family(j);
    m.space = varifold::FeatureSpace::categorical(j.at("features").get<std::vector<std::string>>());
    m.lambda = vector_from(j.at("lambda"), std::numeric_limits<double>::quiet_NaN());
    m.zeta = matrix_from(j.at("zeta"), m.space.size(), "zeta");
    pointprocess::validate(m);
    return m;
  });
}

Partition partition_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    Partition p;
    p.regions = get_family(j);
    if (j.contains("feature_sets")) p.feature_sets = j["feature_sets"].get<std::vector<std::vector<std::string>>>();
    return p;
  });
}

std::string partition_to_json(const Partition& p, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  put_family(j, p.regions);
  j["feature_sets"] = p.feature_sets;
  return j.dump(1);
}

std::string bundle_to_json(const Bundle& b, const Meta& meta) {
  json j;
  j["meta"] = meta_json(meta);
  j["dim"] = b.z0.cols();
  j["sigma_v"] = b.sigma_v;
  j["z0"] = matrix_json(b.z0);
  json a = json::array();
  for (const auto& ak : b.a.a) a.push_back(matrix_json(ak));
  j["controls"] = std::move(a);
  j["diagnostics"] = diagnostics_json(b.diagnostics);
  return j.dump(1);
}

Bundle bundle_from_json(const std::string& text) {
  return guarded([&] {
    const json j = parse_json(text);
    Bundle b;
    const int dim = j.at("dim").get<int>();
    b.sigma_v = j.at("sigma_v").get<double>();
    if (!(b.sigma_v > 0.0)) throw Error(ErrorCode::ParseError, "sigma_v must be positive");
    b.z0 = matrix_from(j.at("z0"), dim, "z0");
    for (const auto& ak : j.at("controls")) {
      b.a.a.push_back(matrix_from(ak, dim, "controls"));
      if (b.a.a.back().rows() != b.z0.rows()) throw Error(ErrorCode::ParseError, "control/vertex count mismatch");
    }
    if (b.a.a.empty()) throw Error(ErrorCode::ParseError, "bundle has no controls");
    if (j.contains("diagnostics")) {
      const json& d = j["diagnostics"];
      b.diagnostics.objective = d.value("objective", std::vector<double>{});
      b.diagnostics.kinetic = d.value("kinetic", std::vector<double>{});
      b.diagnostics.attachment = d.value("attachment", std::vector<double>{});
      b.diagnostics.initial_sqdist = d.value("initial_sqdist", 0.0);
      b.diagnostics.final_sqdist = d.value("final_sqdist", 0.0);
      b.diagnostics.iterations = d.value("iterations", 0);
    }
    return b;
  });
}

MatrixXd apply_bundle(const Bundle& b, const MatrixXd& points) {
  if (points.cols() != b.z0.cols()) throw Error(ErrorCode::InvalidArgument, "point dimension does not match bundle");
  const lddmm::FlowKernel kv{b.sigma_v};
  const lddmm::StateTrajectory traj = lddmm::flow_forward(b.a, b.z0, kv);
  return lddmm::transport_points(b.a, traj, kv, points);
}

std::string format_grid_csv(const MatrixXd& probes, const MatrixXd& images, const Meta& meta) {
  static const char* in_names[] = {"u", "v", "w"};
  static const char* out_names[] = {"x", "y", "z"};
  const int d = static_cast<int>(probes.cols());
  std::ostringstream os;
  os << comment_line(meta);
  for (int a = 0; a < d; ++a) os << in_names[a] << ',';
  for (int a = 0; a < d; ++a) os << out_names[a] << (a + 1 < d ? "," : "\n");
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    for (int a = 0; a < d; ++a) os << fmt(probes(i, a)) << ',';
    for (int a = 0; a < d; ++a) os << fmt(images(i, a)) << (a + 1 < d ? "," : "\n");
  }
  return os.str();
}

std::string format_stats_csv(const pointprocess::StatisticField& field, const Meta& meta) {
  std::ostringstream os;
  os << comment_line(meta);
  os << "region_id,feature_set_id,n1,n2,chi1,chi2,p_hat,p,T\n";
  for (int c = 0; c < field.num_regions(); ++c) {
    for (int s = 0; s < field.num_sets(); ++s) {
      const auto& t = field.cells[c][s];
      os << c << ',' << s << ',' << t.n1 << ',' << t.n2 << ',' << fmt(t.chi1) << ',' << fmt(t.chi2) << ','
         << fmt(t.p_hat) << ',' << fmt(t.p) << ',' << fmt(t.T) << '\n';
    }
  }
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

}  // namespace imvar::io
