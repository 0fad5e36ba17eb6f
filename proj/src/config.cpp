#include "spm/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    kv.values_[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of("=\n#") != std::string::npos || value.find('\n') != std::string::npos) {
    throw std::invalid_argument("invalid config entry '" + key + "'");
  }
  values_[key] = value;
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("missing config key " + key);
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::size_t KeyValues::get_size(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double KeyValues::get_double(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config key " + key + ": expected a number, got '" + s + "'");
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected true/false, got '" + s + "'");
}

void KeyValues::require_known(std::initializer_list<std::string_view> known) const {
  for (const auto& [k, v] : values_) {
    bool ok = false;
    for (auto name : known) ok = ok || k == name;
    if (!ok) throw std::invalid_argument("unknown config key " + k);
  }
}

void store_pyramid_config(const PyramidConfig& c, KeyValues& kv, const std::string& p) {
  kv.set(p + "n_scales", std::to_string(c.n_scales));
  kv.set(p + "base_h", std::to_string(c.base_h));
  kv.set(p + "base_w", std::to_string(c.base_w));
  kv.set(p + "base_channels", std::to_string(c.base_channels));
  kv.set(p + "max_channels", std::to_string(c.max_channels));
  kv.set(p + "disc_base_channels", std::to_string(c.disc_base_channels));
  kv.set(p + "disc_max_channels", std::to_string(c.disc_max_channels));
  kv.set(p + "hidden_channels", std::to_string(c.hidden_channels));
  kv.set(p + "num_classes", std::to_string(c.num_classes));
  kv.set(p + "image_channels", std::to_string(c.image_channels));
  kv.set(p + "block_type", c.block_type == BlockType::Spm ? "spm" : "spade");
  kv.set(p + "progressive", c.progressive ? "true" : "false");
  kv.set(p + "context_from_normalized", c.context_from_normalized ? "true" : "false");
  kv.set(p + "extra_spade", c.extra_spade ? "true" : "false");
}

PyramidConfig read_pyramid_config(const KeyValues& kv, PyramidConfig c, const std::string& p) {
  auto size = [&](const char* k, std::size_t& dst) {
    if (kv.has(p + k)) dst = kv.get_size(p + k);
  };
  auto flag = [&](const char* k, bool& dst) {
    if (kv.has(p + k)) dst = kv.get_bool(p + k);
  };
  size("n_scales", c.n_scales);
  size("base_h", c.base_h);
  size("base_w", c.base_w);
  size("base_channels", c.base_channels);
  size("max_channels", c.max_channels);
  size("disc_base_channels", c.disc_base_channels);
  size("disc_max_channels", c.disc_max_channels);
  size("hidden_channels", c.hidden_channels);
  size("num_classes", c.num_classes);
  size("image_channels", c.image_channels);
  if (kv.has(p + "block_type")) {
    const std::string& b = kv.get(p + "block_type");
    if (b == "spm") {
      c.block_type = BlockType::Spm;
    } else if (b == "spade") {
      c.block_type = BlockType::Spade;
    } else {
      throw std::invalid_argument("config key " + p + "block_type: expected spm or spade, got '" + b + "'");
    }
  }
  flag("progressive", c.progressive);
  flag("context_from_normalized", c.context_from_normalized);
  flag("extra_spade", c.extra_spade);
  return c;
}

}  // namespace spm
