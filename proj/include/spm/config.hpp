#pragma once

// Flat `key = value` text used for --config files and checkpoint manifests.
// Blank lines and lines starting with '#' are ignored.

#include <map>
#include <string>

#include "spm/networks.hpp"

namespace spm {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::string& path);
  // Keys in sorted order, one per line.
  std::string serialize() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Throws naming the first key that is not in `known`.
  void require_known(std::initializer_list<std::string_view> known) const;

 private:
  std::map<std::string, std::string> values_;
};

// Writes every PyramidConfig field under `prefix`.
void store_pyramid_config(const PyramidConfig& cfg, KeyValues& kv, const std::string& prefix = "model.");
// Overrides fields of `cfg` present in kv.
PyramidConfig read_pyramid_config(const KeyValues& kv, PyramidConfig cfg = {}, const std::string& prefix = "model.");

}  // namespace spm
