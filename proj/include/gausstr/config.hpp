#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gausstr {

// Every tunable in one flat bag. JSON keys and CLI flags both mirror the
// field names; unknown keys are rejected.
struct RunConfig {
  // run
  uint64_t seed = 42;
  // scene
  int views = 2;
  int image_size = 128;
  double fov_deg = 70.0;
  int box_classes = 2;
  int boxes = 4;
  double extent_xy = 16.0;
  double extent_z = 3.2;
  double voxel = 0.4;
  double camera_radius = 6.5;
  double camera_height = 1.8;
  double noise_sigma = 0.1;
  // network
  int queries_per_view = 300;
  int layers = 3;
  int dim = 256;
  int heads = 4;
  int points = 4;
  int levels = 2;
  double dmu_max = 2.0;
  double s_min = 0.02;
  double s_max = 1.5;
  double s0_factor = 0.05;
  // training
  int c_r = 64;
  double lr = 2e-4;
  int steps = 2000;
  int batch = 1;
  bool seg_aug = false;
  double beta_depth = 0.2;
  double clip_norm = 10.0;
  int seg_hidden = 64;
  int pca_samples = 10000;
  double covered_trans = 0.5;
  // rendering
  int render_downsample = 16;
  double blur = 0.3;
  double z_near = 0.05;
  // occupancy
  double tau_occ = 0.1;

  void validate() const;  // throws ConfigError
};

// All recognized keys, sorted; drives JSON parsing, CLI flags, and hashing.
const std::vector<std::string>& config_keys();

std::string get_key(const RunConfig& cfg, const std::string& key);
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig load_config(const std::string& path);  // strict JSON
void save_config(const std::string& path, const RunConfig& cfg);

// Canonical form: sorted keys, shortest round-trip number formatting.
// The hash (FNV-1a over that string) is embedded in every artifact.
std::string canonical_config(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(uint64_t h);

}  // namespace gausstr
