#pragma once

#include <string>
#include <vector>

#include "gausstr/losses.hpp"
#include "gausstr/network.hpp"
#include "gausstr/scene.hpp"

namespace gausstr {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // global gradient norm ceiling; <= 0 disables
};

// First/second-moment optimizer with bias correction over the trainable
// entries of one ParamStore.
class Adam {
 public:
  Adam(const AdamConfig& cfg, const ParamStore& store);

  // `grads` aligned with store entries (non-trainable slots ignored).
  // Clips the global norm in place, then applies the update. Returns the
  // pre-clip norm.
  double step(ParamStore& store, std::vector<Tensor>& grads);

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct LossReport {
  double total = 0, feat = 0, depth = 0, silog = 0, l1 = 0, seg = 0;
};

struct TrainConfig {
  int steps = 2000;
  AdamConfig adam;
  double beta_depth = 0.2;
  bool seg_aug = false;
  int seg_hidden = 64;
  int64_t c_r = 64;
  int64_t pca_samples = 10000;
  double covered_trans = 0.5;  // pixels with less transmittance count
  RenderSettings render;
  uint64_t seed = 0;
};

struct LossParts {
  Var total, feat, depth, silog, l1, seg;  // seg invalid when disabled
};

// Owns the frozen oracle targets, the PCA basis, and the optimizer for one
// scene. The same loss graph serves training steps and gradient checks.
class TrainSession {
 public:
  TrainSession(GaussTrNet& net, const SyntheticScene& scene,
               const TrainConfig& cfg);

  Var build_loss(Tape& t, const std::vector<Var>& pv,
                 LossParts* parts = nullptr) const;

  // Forward, backward, clip, Adam. Throws NumericError on a non-finite
  // loss after dumping parameters and gradients under `dump_dir` (if set).
  LossReport step();

  // Runs `steps` from the config, appending "step,total,feat,silog,l1,seg"
  // rows to csv_path (empty = no file). Returns one report per step.
  std::vector<LossReport> run(const std::string& csv_path = "");

  const PcaBasis& pca() const { return pca_; }
  const std::vector<ViewInput>& views() const { return views_; }
  void set_dump_dir(const std::string& dir) { dump_dir_ = dir; }

 private:
  GaussTrNet& net_;
  const SyntheticScene& scene_;
  TrainConfig cfg_;
  Adam adam_;  // constructed after the seg head joins the store
  PcaBasis pca_;
  std::vector<ViewInput> views_;     // oracle maps at render resolution
  std::vector<Camera> render_cams_;  // scaled intrinsics
  // Per view, flattened [H_r * W_r] targets and masks.
  std::vector<Tensor> target_feat_;  // [P, C_R]
  std::vector<Tensor> target_depth_; // [P, 1]
  std::vector<std::vector<int>> target_class_;
  int step_ = 0;
  std::string dump_dir_;
};

}  // namespace gausstr
