#include "gausstr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gausstr/errors.hpp"
#include "nlohmann/json.hpp"

namespace gausstr {

namespace {

struct KeyDef {
  const char* name;
  enum Kind { kInt, kDouble, kBool, kU64 } kind;
  int RunConfig::*i = nullptr;
  double RunConfig::*d = nullptr;
  bool RunConfig::*b = nullptr;
  uint64_t RunConfig::*u = nullptr;
};

KeyDef ik(const char* n, int RunConfig::*p) {
  KeyDef k{n, KeyDef::kInt};
  k.i = p;
  return k;
}
KeyDef dk(const char* n, double RunConfig::*p) {
  KeyDef k{n, KeyDef::kDouble};
  k.d = p;
  return k;
}
KeyDef bk(const char* n, bool RunConfig::*p) {
  KeyDef k{n, KeyDef::kBool};
  k.b = p;
  return k;
}
KeyDef uk(const char* n, uint64_t RunConfig::*p) {
  KeyDef k{n, KeyDef::kU64};
  k.u = p;
  return k;
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t = {
        uk("seed", &RunConfig::seed),
        ik("views", &RunConfig::views),
        ik("image_size", &RunConfig::image_size),
        dk("fov_deg", &RunConfig::fov_deg),
        ik("box_classes", &RunConfig::box_classes),
        ik("boxes", &RunConfig::boxes),
        dk("extent_xy", &RunConfig::extent_xy),
        dk("extent_z", &RunConfig::extent_z),
        dk("voxel", &RunConfig::voxel),
        dk("camera_radius", &RunConfig::camera_radius),
        dk("camera_height", &RunConfig::camera_height),
        dk("noise_sigma", &RunConfig::noise_sigma),
        ik("queries_per_view", &RunConfig::queries_per_view),
        ik("layers", &RunConfig::layers),
        ik("dim", &RunConfig::dim),
        ik("heads", &RunConfig::heads),
        ik("points", &RunConfig::points),
        ik("levels", &RunConfig::levels),
        dk("dmu_max", &RunConfig::dmu_max),
        dk("s_min", &RunConfig::s_min),
        dk("s_max", &RunConfig::s_max),
        dk("s0_factor", &RunConfig::s0_factor),
        ik("c_r", &RunConfig::c_r),
        dk("lr", &RunConfig::lr),
        ik("steps", &RunConfig::steps),
        ik("batch", &RunConfig::batch),
        bk("seg_aug", &RunConfig::seg_aug),
        dk("beta_depth", &RunConfig::beta_depth),
        dk("clip_norm", &RunConfig::clip_norm),
        ik("seg_hidden", &RunConfig::seg_hidden),
        ik("pca_samples", &RunConfig::pca_samples),
        dk("covered_trans", &RunConfig::covered_trans),
        ik("render_downsample", &RunConfig::render_downsample),
        dk("blur", &RunConfig::blur),
        dk("z_near", &RunConfig::z_near),
        dk("tau_occ", &RunConfig::tau_occ),
    };
    std::sort(t.begin(), t.end(), [](const KeyDef& a, const KeyDef& b) {
      return std::strcmp(a.name, b.name) < 0;
    });
    return t;
  }();
  return table;
}

const KeyDef& find_key(const std::string& key) {
  for (const KeyDef& k : key_table()) {
    if (key == k.name) return k;
  }
  throw ConfigError("unknown config key: " + key);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);  // shortest round-trip form
}

bool whole_multiple(double value, double step) {
  return std::abs(value / step - std::llround(value / step)) < 1e-9;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyDef& def : key_table()) k.push_back(def.name);
    return k;
  }();
  return keys;
}

std::string get_key(const RunConfig& cfg, const std::string& key) {
  const KeyDef& k = find_key(key);
  switch (k.kind) {
    case KeyDef::kInt:
      return std::to_string(cfg.*(k.i));
    case KeyDef::kDouble:
      return format_double(cfg.*(k.d));
    case KeyDef::kBool:
      return cfg.*(k.b) ? "true" : "false";
    case KeyDef::kU64:
      return std::to_string(cfg.*(k.u));
  }
  throw ConfigError("unreachable");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyDef& k = find_key(key);
  const char* begin = value.c_str();
  const char* end = begin + value.size();
  switch (k.kind) {
    case KeyDef::kInt: {
      int v = 0;
      const auto r = std::from_chars(begin, end, v);
      if (r.ec != std::errc() || r.ptr != end) {
        throw ConfigError("key " + key + " expects an integer, got '" + value +
                          "'");
      }
      cfg.*(k.i) = v;
      return;
    }
    case KeyDef::kU64: {
      uint64_t v = 0;
      const auto r = std::from_chars(begin, end, v);
      if (r.ec != std::errc() || r.ptr != end) {
        throw ConfigError("key " + key + " expects a non-negative integer");
      }
      cfg.*(k.u) = v;
      return;
    }
    case KeyDef::kDouble: {
      try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        cfg.*(k.d) = v;
      } catch (const std::exception&) {
        throw ConfigError("key " + key + " expects a number, got '" + value +
                          "'");
      }
      return;
    }
    case KeyDef::kBool: {
      if (value == "true" || value == "1") {
        cfg.*(k.b) = true;
      } else if (value == "false" || value == "0") {
        cfg.*(k.b) = false;
      } else {
        throw ConfigError("key " + key + " expects true or false");
      }
      return;
    }
  }
}

void RunConfig::validate() const {
  auto req = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  req(views >= 1, "views must be >= 1");
  req(image_size >= 8, "image_size must be >= 8");
  req(render_downsample >= 1, "render_downsample must be >= 1");
  req(image_size % render_downsample == 0,
      "image_size must be a multiple of render_downsample");
  req(fov_deg > 10 && fov_deg < 170, "fov_deg must be in (10, 170)");
  req(box_classes >= 1, "box_classes must be >= 1");
  req(boxes >= 1, "boxes must be >= 1");
  req(voxel > 0, "voxel must be positive");
  req(extent_xy > 0 && extent_z > 0, "extents must be positive");
  req(whole_multiple(extent_xy, voxel) && whole_multiple(extent_z, voxel),
      "extents must be whole multiples of voxel");
  req(camera_radius > 0, "camera_radius must be positive");
  req(noise_sigma >= 0, "noise_sigma must be >= 0");

  req(queries_per_view >= 1, "queries_per_view must be >= 1");
  req(layers >= 1, "layers must be >= 1");
  req(dim >= 1, "dim must be >= 1");
  req(heads >= 1 && dim % heads == 0, "dim must divide evenly into heads");
  req(points >= 1 && levels >= 1, "points and levels must be >= 1");
  req(dmu_max > 0, "dmu_max must be positive");
  req(s_min > 0 && s_min < s_max, "need 0 < s_min < s_max");
  req(s0_factor > 0, "s0_factor must be positive");
  req(box_classes + 2 <= dim,
      "dim too small for orthonormal class prototypes");

  req(c_r >= 1 && c_r <= dim, "c_r must be in [1, dim]");
  req(lr > 0, "lr must be positive");
  req(steps >= 1, "steps must be >= 1");
  req(batch == 1, "only batch 1 is supported");
  req(beta_depth >= 0, "beta_depth must be >= 0");
  req(seg_hidden >= 1, "seg_hidden must be >= 1");
  req(pca_samples >= c_r, "pca_samples must be >= c_r");
  req(covered_trans > 0 && covered_trans <= 1,
      "covered_trans must be in (0, 1]");

  req(blur >= 0, "blur must be >= 0");
  req(z_near > 0, "z_near must be positive");
  req(tau_occ > 0, "tau_occ must be positive");
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad config JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig cfg;
  for (const auto& [key, val] : j.items()) {
    const KeyDef& k = find_key(key);
    switch (k.kind) {
      case KeyDef::kInt:
        if (!val.is_number_integer()) {
          throw ConfigError("key " + key + " expects an integer");
        }
        cfg.*(k.i) = val.get<int>();
        break;
      case KeyDef::kU64:
        if (!val.is_number_unsigned() &&
            !(val.is_number_integer() && val.get<int64_t>() >= 0)) {
          throw ConfigError("key " + key + " expects a non-negative integer");
        }
        cfg.*(k.u) = val.get<uint64_t>();
        break;
      case KeyDef::kDouble:
        if (!val.is_number()) {
          throw ConfigError("key " + key + " expects a number");
        }
        cfg.*(k.d) = val.get<double>();
        break;
      case KeyDef::kBool:
        if (!val.is_boolean()) {
          throw ConfigError("key " + key + " expects a boolean");
        }
        cfg.*(k.b) = val.get<bool>();
        break;
    }
  }
  cfg.validate();
  return cfg;
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write config " + path);
  f << canonical_config(cfg) << "\n";
}

std::string canonical_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "{\n";
  bool first = true;
  for (const std::string& key : config_keys()) {
    if (!first) out << ",\n";
    first = false;
    out << "  \"" << key << "\": " << get_key(cfg, key);
  }
  out << "\n}";
  return out.str();
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = canonical_config(cfg);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

}  // namespace gausstr
