#include "imvar/config.hpp"

#include "imvar/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace imvar::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& v) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

enum class Type { Positive, PositiveInt, NonNegInt, Bool, Choice, Seed };

struct Spec {
  KeyDoc doc;
  Type type;
  bool allow_auto;
  std::vector<std::string> choices;
};

const std::vector<Spec>& specs() {
  static const std::vector<Spec> s = {
      {{"lambda", "100", "mesh resolution (simplex edge length, data units)"}, Type::Positive, false, {}},
      {{"genes.k", "10", "gene panel size (top genes by count standard deviation)"}, Type::PositiveInt, false, {}},
      {{"genes.criterion", "std", "gene selection criterion"}, Type::Choice, false, {"std"}},
      {{"features", "auto", "varifold features: gene_counts, rna_counts, cell_labels"},
       Type::Choice, true, {"gene_counts", "rna_counts", "cell_labels"}},
      {{"weight_mode", "count_density", "alpha for gene counts: count_density or point_density"},
       Type::Choice, false, {"count_density", "point_density"}},
      {{"k1.sigma", "auto", "spatial kernel width (auto: 2 lambda)"}, Type::Positive, true, {}},
      {{"k1.cutoff", "false", "drop kernel pairs beyond 6 sigma"}, Type::Bool, false, {}},
      {{"k2.kind", "identity", "feature kernel: identity, euclidean, cauchy"},
       Type::Choice, false, {"identity", "euclidean", "cauchy"}},
      {{"k2.sigma", "1", "feature kernel width (cauchy)"}, Type::Positive, false, {}},
      {{"k2.log_scale", "false", "map count vectors through log(1 + .)"}, Type::Bool, false, {}},
      {{"lddmm.sigma", "auto", "attachment weight (auto: 0.1 sqrt(initial sqdist))"}, Type::Positive, true, {}},
      {{"lddmm.sigmaV", "auto", "deformation kernel width (auto: 5 lambda)"}, Type::Positive, true, {}},
      {{"lddmm.nt", "10", "time steps"}, Type::PositiveInt, false, {}},
      {{"lddmm.max_iters", "100", "optimizer iterations"}, Type::NonNegInt, false, {}},
      {{"lddmm.tol", "1e-6", "relative objective decrease to stop"}, Type::Positive, false, {}},
      {{"lddmm.optimizer", "gd", "gd or lbfgs"}, Type::Choice, false, {"gd", "lbfgs"}},
      {{"atlas.rounds", "3", "alternating rounds"}, Type::PositiveInt, false, {}},
      {{"atlas.mode", "celltype", "celltype or genecount"}, Type::Choice, false, {"celltype", "genecount"}},
      {{"atlas.literal_weights", "false", "scale atlas masses by the atlas weight column"}, Type::Bool, false, {}},
      {{"atlas.bounds", "file", "density bounds: file (from the atlas) or none"}, Type::Choice, false, {"file", "none"}},
      {{"grid.step", "auto", "deformation grid spacing (auto: 1/20 of the largest template extent)"}, Type::Positive, true, {}},
      {{"seed", "0", "random seed"}, Type::Seed, false, {}},
      {{"simd", "auto", "kernel ISA: auto, scalar, avx2"}, Type::Choice, false, {"auto", "scalar", "avx2"}},
  };
  return s;
}

const Spec* find(const std::string& key) {
  for (const auto& s : specs()) {
    if (key == s.doc.key) return &s;
  }
  return nullptr;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<KeyDoc>& documented_keys() {
  static const std::vector<KeyDoc> docs = [] {
    std::vector<KeyDoc> d;
    for (const auto& s : specs()) d.push_back(s.doc);
    return d;
  }();
  return docs;
}

RunConfig::RunConfig() {
  for (const auto& s : specs()) values_[s.doc.key] = s.doc.default_value;
}

void RunConfig::check(const std::string& key, const std::string& value) const {
  const Spec* s = find(key);
  if (!s) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
  if (s->allow_auto && value == "auto") return;
  auto bad = [&](const char* what) {
    throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + what + ", got '" + value + "'");
  };
  double v = 0.0;
  switch (s->type) {
    case Type::Positive:
      if (!parse_double(value, v) || !(v > 0.0) || !std::isfinite(v)) bad("expected a positive number");
      break;
    case Type::PositiveInt:
    case Type::NonNegInt:
      if (!parse_double(value, v) || v != std::floor(v) || v < (s->type == Type::PositiveInt ? 1 : 0) || v > 1e9) {
        bad(s->type == Type::PositiveInt ? "expected a positive integer" : "expected a nonnegative integer");
      }
      break;
    case Type::Bool:
      if (value != "true" && value != "false") bad("expected true or false");
      break;
    case Type::Choice: {
      bool ok = false;
      for (const auto& c : s->choices) ok = ok || c == value;
      if (!ok) bad("not an allowed choice");
      break;
    }
    case Type::Seed: {
      std::uint64_t u = 0;
      const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), u);
      if (ec != std::errc() || p != value.data() + value.size() || value.empty()) bad("expected an unsigned integer");
      break;
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = trim(key), v = trim(value);
  check(k, v);
  values_[k] = v;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    try {
      cfg.set(body);
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error(ErrorCode::IoError, "cannot open config '" + path + "'");
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return parse(text);
}

const std::string& RunConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(raw(key), v)) throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' is not numeric");
  return v;
}

int RunConfig::integer(const std::string& key) const { return static_cast<int>(number(key)); }

bool RunConfig::flag(const std::string& key) const { return raw(key) == "true"; }

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(dump())));
  return buf;
}

varifold::WeightMode RunConfig::weight_mode() const {
  return raw("weight_mode") == "point_density" ? varifold::WeightMode::PointDensity
                                               : varifold::WeightMode::CountDensity;
}

kernels::KernelMetric RunConfig::metric() const {
  kernels::KernelMetric m;
  m.k1.sigma = is_auto("k1.sigma") ? 2.0 * lambda() : number("k1.sigma");
  m.k1.cutoff = flag("k1.cutoff");
  const std::string& kind = raw("k2.kind");
  m.k2.kind = kind == "identity"    ? kernels::FeatureKernel::Kind::Identity
              : kind == "euclidean" ? kernels::FeatureKernel::Kind::EuclideanDot
                                    : kernels::FeatureKernel::Kind::CauchyProduct;
  m.k2.sigma = number("k2.sigma");
  m.k2.log_scale = flag("k2.log_scale");
  return m;
}

lddmm::RegistrationConfig RunConfig::registration(double initial_sqdist) const {
  lddmm::RegistrationConfig r;
  if (is_auto("lddmm.sigma")) {
    r.sigma = 0.1 * std::sqrt(std::max(initial_sqdist, 0.0));
    if (!(r.sigma > 0.0)) r.sigma = 1.0;
  } else {
    r.sigma = number("lddmm.sigma");
  }
  r.kv.sigma = is_auto("lddmm.sigmaV") ? 5.0 * lambda() : number("lddmm.sigmaV");
  r.nt = integer("lddmm.nt");
  r.max_iters = integer("lddmm.max_iters");
  r.tol = number("lddmm.tol");
  r.optimizer = raw("lddmm.optimizer") == "lbfgs" ? lddmm::Optimizer::Lbfgs : lddmm::Optimizer::GradientDescent;
  return r;
}

std::uint64_t RunConfig::seed() const {
  std::uint64_t u = 0;
  const std::string& s = raw("seed");
  std::from_chars(s.data(), s.data() + s.size(), u);
  return u;
}

}  // namespace imvar::config
