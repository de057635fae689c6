#pragma once

#include <string>
#include <vector>

#include "gausstr/gaussians.hpp"
#include "gausstr/renderer.hpp"
#include "gausstr/rng.hpp"
#include "gausstr/tape.hpp"

namespace gausstr {

struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Ordered named tensors. Order is creation order and fixes the optimizer
// state layout, leaf registration, and checkpoint manifest.
class ParamStore {
 public:
  int add(const std::string& name, Tensor value, bool trainable = true);
  int find(const std::string& name) const;  // -1 if absent
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  ParamEntry& entry(int i) { return entries_[size_t(i)]; }
  const ParamEntry& entry(int i) const { return entries_[size_t(i)]; }
  int size() const { return int(entries_.size()); }

 private:
  std::vector<ParamEntry> entries_;
};

struct NetConfig {
  int views = 2;
  int queries_per_view = 300;
  int layers = 3;
  int dim = 256;  // query width; also the oracle feature and f_G width
  int heads = 4;
  int points = 4;  // sampling points per head per level
  int levels = 2;
  double dmu_max = 2.0;  // position refinement bound per layer, meters
  double s_min = 0.02, s_max = 1.5;
  double s0_factor = 0.05;  // initial scale = factor * depth
  int downsample = 16;      // image px per feature/render cell
};

struct ViewInput {
  Camera cam;    // full image resolution
  Tensor feat;   // [H_r, W_r, C] oracle features
  Tensor depth;  // [H_r, W_r] oracle z-depth, 0 where sky
};

struct NetOutput {
  Var mu;     // [N_tot, 3]
  Var scale;  // [N_tot, 3]
  Var rot;    // [N_tot, 4], unit rows
  Var alpha;  // [N_tot]
  Var feat;   // [N_tot, C]
  std::vector<uint8_t> active;
  std::vector<int> view_index;
};

struct HeadOut {
  Var d_mu, d_rot, d_log_scale, alpha, feat;
};

// Sinusoidal encoding of positions normalized into [0,1]^3 by the scene
// bounds: per axis ceil(C/3) values at frequencies 2^k pi, interleaved
// sin/cos, concatenated and truncated to C columns.
Var positional_encoding(Tape& t, Var mu3d, const Eigen::Vector3d& bmin,
                        const Eigen::Vector3d& bmax, int dim);

// 2x average pooling with clipped borders, [H, W, C] -> [ceil(H/2), ...].
Tensor avg_pool2(const Tensor& map);

class GaussTrNet {
 public:
  GaussTrNet(const NetConfig& cfg, uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& query_pixels(int view) const;  // [N, 2] normalized [0,1)^2

  // One leaf per store entry, in order; requires_grad follows `trainable`.
  std::vector<Var> push_params(Tape& t) const;

  // Residual deformable cross attention for one view's query block.
  // `pyramid` holds raw per-level feature maps [H_l, W_l, C]; value
  // projection happens inside. `mu2d_norm` is [N, 2] in [0,1]^2.
  Var deform_attn(Tape& t, const std::vector<Var>& pv, int layer, Var x,
                  const std::vector<Var>& pyramid,
                  const Tensor& mu2d_norm) const;

  // Joint self attention over all views' queries; the positional encoding
  // of current means goes into queries and keys only.
  Var self_attn_3d(Tape& t, const std::vector<Var>& pv, int layer, Var x,
                   Var mu3d, const Eigen::Vector3d& bmin,
                   const Eigen::Vector3d& bmax) const;

  HeadOut gaussian_head(Tape& t, const std::vector<Var>& pv, int layer,
                        Var x) const;

  // Depth-init then `layers` rounds of refinement. `bmin`/`bmax` bound the
  // positional encoding (normally the occupancy grid extents).
  NetOutput forward(Tape& t, const std::vector<Var>& pv,
                    const std::vector<ViewInput>& views,
                    const Eigen::Vector3d& bmin,
                    const Eigen::Vector3d& bmax) const;

  // Inference convenience: forward on a scratch tape, values copied out.
  GaussianSet predict(const std::vector<ViewInput>& views,
                      const Eigen::Vector3d& bmin,
                      const Eigen::Vector3d& bmax) const;

  // Zeroes the final linear layers behind d_mu, d_rot, d_log_scale and the
  // opacity logit, making every refinement layer an exact identity over the
  // depth initialization (alpha = 0.5). This is also the construction-time
  // default; training moves them off zero.
  void zero_refinement_heads();

  void save_checkpoint(const std::string& dir, uint64_t config_hash) const;
  static GaussTrNet load_checkpoint(const std::string& dir,
                                    uint64_t* config_hash_out = nullptr);

 private:
  GaussTrNet() = default;

  NetConfig cfg_;
  ParamStore params_;
  std::vector<Tensor> query_px_;  // per view, [N, 2]
};

}  // namespace gausstr
