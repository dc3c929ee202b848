#pragma once

#include "imvar/kernels.hpp"
#include "imvar/lddmm.hpp"
#include "imvar/varifold.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace imvar::config {

/// Flat key=value run configuration. Every key has a documented default;
/// "auto" marks values derived at run time (kernel widths, sigma).
class RunConfig {
 public:
  RunConfig();

  /// Parses "key = value" lines; '#' starts a comment. Unknown keys and
  /// malformed lines raise ParseError with the line number.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  /// Applies "key=value"; throws InvalidArgument for unknown keys or bad values.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& raw(const std::string& key) const;
  bool is_auto(const std::string& key) const { return raw(key) == "auto"; }
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// key=value lines in key order.
  std::string dump() const;
  /// FNV-1a 64 of dump(), as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Typed views.
  double lambda() const { return number("lambda"); }
  varifold::WeightMode weight_mode() const;
  kernels::KernelMetric metric() const;
  /// With sigma set to "auto" the caller supplies the initial squared distance.
  lddmm::RegistrationConfig registration(double initial_sqdist) const;
  std::uint64_t seed() const;

 private:
  void check(const std::string& key, const std::string& value) const;
  std::map<std::string, std::string> values_;
};

struct KeyDoc {
  const char* key;
  const char* default_value;
  const char* help;
};
/// The documented keys with their defaults (for --help).
const std::vector<KeyDoc>& documented_keys();

std::uint64_t fnv1a64(const std::string& data);

}  // namespace imvar::config
