#include "gausstr/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gausstr/errors.hpp"

namespace gausstr {

Adam::Adam(const AdamConfig& cfg, const ParamStore& store) : cfg_(cfg) {
  m_.reserve(size_t(store.size()));
  v_.reserve(size_t(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    const Tensor& p = store.entry(i).value;
    m_.push_back(Tensor::zeros(p.shape));
    v_.push_back(Tensor::zeros(p.shape));
  }
}

double Adam::step(ParamStore& store, std::vector<Tensor>& grads) {
  if (int(grads.size()) != store.size() || store.size() != int(m_.size())) {
    throw ConfigError("optimizer/store entry count mismatch");
  }
  double sq = 0;
  for (int i = 0; i < store.size(); ++i) {
    if (!store.entry(i).trainable) continue;
    const Tensor& g = grads[size_t(i)];
    if (g.numel() != store.entry(i).value.numel()) {
      throw ConfigError("gradient shape mismatch at " + store.entry(i).name);
    }
    for (double v : g.data) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  double factor = 1.0;
  if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) {
    factor = cfg_.clip_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (int i = 0; i < store.size(); ++i) {
    if (!store.entry(i).trainable) continue;
    Tensor& p = store.entry(i).value;
    Tensor& m = m_[size_t(i)];
    Tensor& v = v_[size_t(i)];
    const Tensor& g = grads[size_t(i)];
    for (size_t j = 0; j < p.data.size(); ++j) {
      const double gj = g.data[j] * factor;
      m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * gj;
      v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
      p.data[j] -=
          cfg_.lr * (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

namespace {

Tensor seg_xavier(Rng& rng, int64_t in, int64_t out) {
  Tensor w = Tensor::zeros({in, out});
  const double bound = std::sqrt(6.0 / double(in + out));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

// The segmentation head lives in the network's store so one optimizer
// covers everything; it must join before the optimizer sizes its state.
const ParamStore& with_seg_head(GaussTrNet& net, const SyntheticScene& scene,
                                const TrainConfig& cfg) {
  if (cfg.seg_aug && net.params().find("seg.fc1_w") < 0) {
    Rng rng = Rng(cfg.seed).fork(0x5E6AEADULL);
    const int64_t in = cfg.c_r;
    const int64_t hid = cfg.seg_hidden;
    const int64_t nc = scene.prototypes.n_classes();
    net.params().add("seg.fc1_w", seg_xavier(rng, in, hid));
    net.params().add("seg.fc1_b", Tensor::zeros({1, hid}));
    net.params().add("seg.fc2_w", seg_xavier(rng, hid, nc));
    net.params().add("seg.fc2_b", Tensor::zeros({1, nc}));
  }
  return net.params();
}

}  // namespace

TrainSession::TrainSession(GaussTrNet& net, const SyntheticScene& scene,
                           const TrainConfig& cfg)
    : net_(net),
      scene_(scene),
      cfg_(cfg),
      adam_(cfg.adam, with_seg_head(net, scene, cfg)) {
  const NetConfig& nc = net_.config();
  if (int(scene.cameras.size()) != nc.views) {
    throw ConfigError("scene has " + std::to_string(scene.cameras.size()) +
                      " cameras but the network expects " +
                      std::to_string(nc.views));
  }
  if (scene.prototypes.f_t.shape[1] != nc.dim) {
    throw ConfigError("scene feature width does not match the model");
  }
  if (cfg_.c_r < 1 || cfg_.c_r > nc.dim) {
    throw ConfigError("reduced feature dim out of range");
  }

  std::vector<const Tensor*> feat_maps;
  for (int v = 0; v < nc.views; ++v) {
    const Camera& full = scene.cameras[size_t(v)];
    const int wr = std::max(1, full.width / nc.downsample);
    const int hr = std::max(1, full.height / nc.downsample);
    const Camera rcam = scale_camera(full, wr, hr);
    const OracleMaps maps = oracle_render(scene, rcam, uint64_t(v));
    render_cams_.push_back(rcam);
    views_.push_back(ViewInput{full, maps.feat, maps.depth});

    const int64_t pixels = int64_t(hr) * wr;
    target_depth_.push_back(Tensor({pixels, 1}, maps.depth.data));
    target_class_.emplace_back(maps.classes.begin(), maps.classes.end());
    feat_maps.push_back(&views_.back().feat);
  }

  // PCA basis from the frozen oracle features, subsampled if large.
  const int64_t C = nc.dim;
  int64_t total = 0;
  for (const Tensor* f : feat_maps) total += f->numel() / C;
  Tensor samples;
  if (total <= cfg_.pca_samples) {
    samples = Tensor::zeros({total, C});
    int64_t row = 0;
    for (const Tensor* f : feat_maps) {
      std::copy(f->data.begin(), f->data.end(),
                samples.data.begin() + row * C);
      row += f->numel() / C;
    }
  } else {
    Rng rng = Rng(cfg_.seed).fork(0x9CAULL);
    samples = Tensor::zeros({cfg_.pca_samples, C});
    for (int64_t s = 0; s < cfg_.pca_samples; ++s) {
      int64_t pick = rng.uniform_int(total);
      const Tensor* src = nullptr;
      for (const Tensor* f : feat_maps) {
        const int64_t rows = f->numel() / C;
        if (pick < rows) {
          src = f;
          break;
        }
        pick -= rows;
      }
      std::copy(src->data.begin() + pick * C,
                src->data.begin() + (pick + 1) * C,
                samples.data.begin() + s * C);
    }
  }
  pca_ = pca_fit(samples, cfg_.c_r);

  for (int v = 0; v < nc.views; ++v) {
    const Tensor& f = views_[size_t(v)].feat;
    const int64_t pixels = f.numel() / C;
    target_feat_.push_back(
        pca_project(Tensor({pixels, C}, f.data), pca_));
  }
}

Var TrainSession::build_loss(Tape& t, const std::vector<Var>& pv,
                             LossParts* parts) const {
  const NetConfig& nc = net_.config();
  const int64_t N = nc.queries_per_view, V = nc.views;
  const int64_t R = cfg_.c_r;

  const NetOutput o =
      net_.forward(t, pv, views_, scene_.grid.min, scene_.grid.max);
  const Var feat_r = pca_project(t, o.feat, pca_);

  const ParamStore& ps = net_.params();
  auto P = [&](const char* n) {
    const int i = ps.find(n);
    if (i < 0) throw ConfigError(std::string("missing parameter ") + n);
    return pv[size_t(i)];
  };

  Var feat_sum, depth_sum, silog_sum, l1_sum, seg_sum;
  for (int64_t v = 0; v < V; ++v) {
    const bool whole = V == 1;
    const Var mu_v = whole ? o.mu : slice(t, o.mu, 0, v * N, N);
    const Var scale_v = whole ? o.scale : slice(t, o.scale, 0, v * N, N);
    const Var rot_v = whole ? o.rot : slice(t, o.rot, 0, v * N, N);
    const Var alpha_v = whole ? o.alpha : slice(t, o.alpha, 0, v * N, N);
    const Var featr_v = whole ? feat_r : slice(t, feat_r, 0, v * N, N);
    const std::vector<uint8_t> act(o.active.begin() + v * N,
                                   o.active.begin() + (v + 1) * N);

    Tensor trans;
    const Var img = splat(t, mu_v, scale_v, rot_v, alpha_v, featr_v, act,
                          render_cams_[size_t(v)], cfg_.render, &trans);
    const int64_t pixels = trans.numel();
    const Var flat = reshape(t, img, {pixels, R + 1});
    const Var fpred = slice(t, flat, 1, 0, R);
    const Var dpred = slice(t, flat, 1, R, 1);

    Tensor covered = Tensor::zeros({pixels, 1});
    Tensor dmask = Tensor::zeros({pixels, 1});
    const Tensor& dtgt = target_depth_[size_t(v)];
    for (int64_t p = 0; p < pixels; ++p) {
      const bool cov = trans.data[size_t(p)] < cfg_.covered_trans;
      covered.data[size_t(p)] = cov ? 1.0 : 0.0;
      dmask.data[size_t(p)] = (cov && dtgt.data[size_t(p)] > 0) ? 1.0 : 0.0;
    }

    const Var lf = cosine_feat_loss(t, fpred, target_feat_[size_t(v)], covered);
    const DepthLossVars ld =
        depth_loss(t, dpred, dtgt, dmask, cfg_.beta_depth);
    feat_sum = v == 0 ? lf : add(t, feat_sum, lf);
    depth_sum = v == 0 ? ld.total : add(t, depth_sum, ld.total);
    silog_sum = v == 0 ? ld.silog : add(t, silog_sum, ld.silog);
    l1_sum = v == 0 ? ld.l1 : add(t, l1_sum, ld.l1);

    if (cfg_.seg_aug) {
      const Var hid =
          relu(t, add(t, matmul(t, fpred, P("seg.fc1_w")), P("seg.fc1_b")));
      const Var logits =
          add(t, matmul(t, hid, P("seg.fc2_w")), P("seg.fc2_b"));
      const Var ls = ce_loss(t, logits, target_class_[size_t(v)], covered);
      seg_sum = v == 0 ? ls : add(t, seg_sum, ls);
    }
  }

  const double inv_v = 1.0 / double(V);
  const Var feat_m = V == 1 ? feat_sum : scale(t, feat_sum, inv_v);
  const Var depth_m = V == 1 ? depth_sum : scale(t, depth_sum, inv_v);
  const Var silog_m = V == 1 ? silog_sum : scale(t, silog_sum, inv_v);
  const Var l1_m = V == 1 ? l1_sum : scale(t, l1_sum, inv_v);
  Var total = add(t, feat_m, depth_m);
  Var seg_m;
  if (cfg_.seg_aug) {
    seg_m = V == 1 ? seg_sum : scale(t, seg_sum, inv_v);
    total = add(t, total, seg_m);
  }

  if (parts) {
    parts->total = total;
    parts->feat = feat_m;
    parts->depth = depth_m;
    parts->silog = silog_m;
    parts->l1 = l1_m;
    parts->seg = seg_m;
  }
  return total;
}

LossReport TrainSession::step() {
  Tape t;
  const std::vector<Var> pv = net_.push_params(t);
  LossParts parts;
  const Var total = build_loss(t, pv, &parts);

  LossReport rep;
  rep.total = t.value(parts.total)[0];
  rep.feat = t.value(parts.feat)[0];
  rep.depth = t.value(parts.depth)[0];
  rep.silog = t.value(parts.silog)[0];
  rep.l1 = t.value(parts.l1)[0];
  rep.seg = parts.seg.valid() ? t.value(parts.seg)[0] : 0.0;

  auto dump_and_throw = [&](const std::string& what) {
    if (!dump_dir_.empty()) {
      std::filesystem::create_directories(dump_dir_);
      for (int i = 0; i < net_.params().size(); ++i) {
        const ParamEntry& e = net_.params().entry(i);
        write_gtsr(dump_dir_ + "/p" + std::to_string(i) + ".gtsr", e.value);
        if (e.trainable && t.grad(pv[size_t(i)]).numel() > 0) {
          write_gtsr(dump_dir_ + "/g" + std::to_string(i) + ".gtsr",
                     t.grad(pv[size_t(i)]));
        }
      }
    }
    throw NumericError(what + " at step " + std::to_string(step_));
  };

  if (!std::isfinite(rep.total)) dump_and_throw("non-finite loss");
  t.backward(total);

  std::vector<Tensor> grads(size_t(net_.params().size()));
  for (int i = 0; i < net_.params().size(); ++i) {
    if (!net_.params().entry(i).trainable) continue;
    grads[size_t(i)] = t.grad(pv[size_t(i)]);
    if (!grads[size_t(i)].all_finite()) dump_and_throw("non-finite gradient");
  }
  adam_.step(net_.params(), grads);
  ++step_;
  return rep;
}

std::vector<LossReport> TrainSession::run(const std::string& csv_path) {
  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw DataError("cannot write " + csv_path);
    csv << "step,total,feat,silog,l1,seg\n";
  }
  std::vector<LossReport> reports;
  reports.reserve(size_t(cfg_.steps));
  for (int s = 0; s < cfg_.steps; ++s) {
    const LossReport r = step();
    reports.push_back(r);
    if (csv) {
      csv << s << ',' << r.total << ',' << r.feat << ',' << r.silog << ','
          << r.l1 << ',' << r.seg << "\n";
    }
  }
  return reports;
}

}  // namespace gausstr
