#include "gausstr/network.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gausstr/errors.hpp"
#include "nlohmann/json.hpp"

namespace gausstr {

int ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (find(name) >= 0) throw ConfigError("duplicate parameter " + name);
  entries_.push_back(ParamEntry{name, std::move(value), trainable});
  return int(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return int(i);
  }
  return -1;
}

Tensor& ParamStore::value(const std::string& name) {
  const int i = find(name);
  if (i < 0) throw ConfigError("unknown parameter " + name);
  return entries_[size_t(i)].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw ConfigError("unknown parameter " + name);
  return entries_[size_t(i)].value;
}

namespace {

Tensor xavier(Rng& rng, int64_t in, int64_t out) {
  Tensor w = Tensor::zeros({in, out});
  const double bound = std::sqrt(6.0 / double(in + out));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

Var lin(Tape& t, Var x, Var w, Var b) { return add(t, matmul(t, x, w), b); }

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, int64_t width) {
  Var mean = scale(t, sum_axis(t, x, 1, true), 1.0 / double(width));
  Var xc = sub(t, x, mean);
  Var var = scale(t, sum_axis(t, mul(t, xc, xc), 1, true), 1.0 / double(width));
  Var y = divide(t, xc, sqrt(t, offset(t, var, 1e-5)));
  return add(t, mul(t, y, gamma), beta);
}

Var normalize_rows(Tape& t, Var x) {
  Var n2 = sum_axis(t, mul(t, x, x), 1, true);
  return divide(t, x, sqrt(t, n2));
}

}  // namespace

Var positional_encoding(Tape& t, Var mu3d, const Eigen::Vector3d& bmin,
                        const Eigen::Vector3d& bmax, int dim) {
  const int per_axis = (dim + 2) / 3;
  const int freqs = (dim + 5) / 6;
  std::vector<Var> cols;
  for (int a = 0; a < 3; ++a) {
    const double span = bmax[a] - bmin[a];
    if (span <= 0) throw ConfigError("positional encoding bounds degenerate");
    Var u = slice(t, mu3d, 1, a, 1);
    u = clamp(t, affine(t, u, 1.0 / span, -bmin[a] / span), 0.0, 1.0);
    int emitted = 0;
    for (int k = 0; k < freqs && emitted < per_axis; ++k) {
      Var su = scale(t, u, std::ldexp(M_PI, k));  // 2^k * pi
      cols.push_back(sin(t, su));
      ++emitted;
      if (emitted < per_axis) {
        cols.push_back(cos(t, su));
        ++emitted;
      }
    }
  }
  Var cat = concat(t, cols, 1);
  if (3 * per_axis > dim) cat = slice(t, cat, 1, 0, dim);
  return cat;
}

Tensor avg_pool2(const Tensor& map) {
  if (map.ndim() != 3) throw DataError("avg_pool2 expects [H, W, C]");
  const int64_t H = map.shape[0], W = map.shape[1], C = map.shape[2];
  const int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out = Tensor::zeros({Ho, Wo, C});
  for (int64_t i = 0; i < Ho; ++i) {
    for (int64_t j = 0; j < Wo; ++j) {
      const int64_t i1 = std::min(2 * i + 2, H);
      const int64_t j1 = std::min(2 * j + 2, W);
      const double inv = 1.0 / double((i1 - 2 * i) * (j1 - 2 * j));
      for (int64_t c = 0; c < C; ++c) {
        double s = 0;
        for (int64_t ii = 2 * i; ii < i1; ++ii) {
          for (int64_t jj = 2 * j; jj < j1; ++jj) {
            s += map.data[(ii * W + jj) * C + c];
          }
        }
        out.data[(i * Wo + j) * C + c] = s * inv;
      }
    }
  }
  return out;
}

GaussTrNet::GaussTrNet(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.dim % cfg.heads != 0) {
    throw ConfigError("model dim must divide evenly into heads");
  }
  if (cfg.layers < 1 || cfg.levels < 1 || cfg.points < 1 ||
      cfg.queries_per_view < 1 || cfg.views < 1) {
    throw ConfigError("network sizes must be positive");
  }
  Rng rng(seed);
  const int64_t C = cfg.dim;
  const int64_t N = cfg.queries_per_view;
  const int64_t hlk = int64_t(cfg.heads) * cfg.levels * cfg.points;

  {
    Tensor qe = Tensor::zeros({N, C});
    for (double& v : qe.data) v = 0.1 * rng.normal();
    params_.add("query_embed", std::move(qe));
  }
  for (int v = 0; v < cfg.views; ++v) {
    // Stratified jittered grid over the image, one cell per query.
    const int cols = int(std::ceil(std::sqrt(double(N))));
    const int rows = int((N + cols - 1) / cols);
    Tensor px = Tensor::zeros({N, 2});
    Rng qr = rng.fork(0x9057ULL + uint64_t(v));
    for (int64_t n = 0; n < N; ++n) {
      const int r = int(n) / cols;
      const int c = int(n) % cols;
      px.data[n * 2] = (c + qr.uniform()) / cols;      // stored normalized
      px.data[n * 2 + 1] = (r + qr.uniform()) / rows;  // by image size
    }
    query_px_.push_back(px);
    params_.add("query_pos_v" + std::to_string(v), std::move(px), false);
  }

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string da = "l" + std::to_string(l) + ".da.";
    params_.add(da + "off_w", Tensor::zeros({C, hlk * 2}));
    params_.add(da + "off_b", Tensor::zeros({1, hlk * 2}));
    params_.add(da + "aw_w", Tensor::zeros({C, hlk}));
    params_.add(da + "aw_b", Tensor::zeros({1, hlk}));
    params_.add(da + "val_w", xavier(rng, C, C));
    params_.add(da + "val_b", Tensor::zeros({1, C}));
    params_.add(da + "out_w", xavier(rng, C, C));
    params_.add(da + "out_b", Tensor::zeros({1, C}));
    params_.add(da + "ln_g", Tensor::full({1, C}, 1.0));
    params_.add(da + "ln_b", Tensor::zeros({1, C}));

    const std::string sa = "l" + std::to_string(l) + ".sa.";
    for (const char* nm : {"q", "k", "v", "o"}) {
      params_.add(sa + nm + std::string("_w"), xavier(rng, C, C));
      params_.add(sa + nm + std::string("_b"), Tensor::zeros({1, C}));
    }
    params_.add(sa + "ln_g", Tensor::full({1, C}, 1.0));
    params_.add(sa + "ln_b", Tensor::zeros({1, C}));

    const std::string hd = "l" + std::to_string(l) + ".head.";
    params_.add(hd + "fc1_w", xavier(rng, C, C));
    params_.add(hd + "fc1_b", Tensor::zeros({1, C}));
    params_.add(hd + "fc2_w", xavier(rng, C, C));
    params_.add(hd + "fc2_b", Tensor::zeros({1, C}));
    // Refinement outputs start at zero so layer 0 reproduces the depth
    // initialization exactly (and alpha starts at 0.5).
    params_.add(hd + "mu_w", Tensor::zeros({C, 3}));
    params_.add(hd + "mu_b", Tensor::zeros({1, 3}));
    params_.add(hd + "rot_w", Tensor::zeros({C, 4}));
    params_.add(hd + "rot_b", Tensor::zeros({1, 4}));
    params_.add(hd + "scale_w", Tensor::zeros({C, 3}));
    params_.add(hd + "scale_b", Tensor::zeros({1, 3}));
    params_.add(hd + "alpha_w", Tensor::zeros({C, 1}));
    params_.add(hd + "alpha_b", Tensor::zeros({1, 1}));
    params_.add(hd + "feat_w", xavier(rng, C, C));
    params_.add(hd + "feat_b", Tensor::zeros({1, C}));
  }
}

const Tensor& GaussTrNet::query_pixels(int view) const {
  return query_px_.at(size_t(view));
}

std::vector<Var> GaussTrNet::push_params(Tape& t) const {
  std::vector<Var> pv;
  pv.reserve(size_t(params_.size()));
  for (int i = 0; i < params_.size(); ++i) {
    const ParamEntry& e = params_.entry(i);
    pv.push_back(t.leaf(e.value, e.trainable));
  }
  return pv;
}

namespace {

struct ParamLookup {
  const ParamStore& store;
  const std::vector<Var>& pv;
  Var operator()(const std::string& name) const {
    const int i = store.find(name);
    if (i < 0) throw ConfigError("unknown parameter " + name);
    return pv[size_t(i)];
  }
};

}  // namespace

Var GaussTrNet::deform_attn(Tape& t, const std::vector<Var>& pv, int layer,
                            Var x, const std::vector<Var>& pyramid,
                            const Tensor& mu2d_norm) const {
  const ParamLookup P{params_, pv};
  const std::string pre = "l" + std::to_string(layer) + ".da.";
  const int H = cfg_.heads, L = cfg_.levels, K = cfg_.points;
  const int64_t C = cfg_.dim, Dh = C / H;
  if (int(pyramid.size()) != L) throw DataError("pyramid level count");

  Var off = lin(t, x, P(pre + "off_w"), P(pre + "off_b"));
  Var aw = lin(t, x, P(pre + "aw_w"), P(pre + "aw_b"));

  std::vector<Var> vmaps;
  std::vector<Var> inv_size;
  for (int l = 0; l < L; ++l) {
    const Tensor& mv = t.value(pyramid[l]);
    if (mv.ndim() != 3 || mv.shape[2] != C) {
      throw DataError("pyramid level has wrong shape");
    }
    const int64_t Hl = mv.shape[0], Wl = mv.shape[1];
    Var flat = reshape(t, pyramid[l], {Hl * Wl, C});
    Var proj = lin(t, flat, P(pre + "val_w"), P(pre + "val_b"));
    vmaps.push_back(reshape(t, proj, {Hl, Wl, C}));
    Tensor inv = Tensor::zeros({1, 2});
    inv.data[0] = 1.0 / double(Wl);  // offsets are in level pixels
    inv.data[1] = 1.0 / double(Hl);
    inv_size.push_back(t.constant(std::move(inv)));
  }

  Var base_pos = t.constant(mu2d_norm);
  std::vector<Var> heads;
  for (int h = 0; h < H; ++h) {
    Var aw_h = softmax(t, slice(t, aw, 1, int64_t(h) * L * K, int64_t(L) * K), 1);
    Var acc;
    bool first = true;
    for (int l = 0; l < L; ++l) {
      Var vh = slice(t, vmaps[size_t(l)], 2, int64_t(h) * Dh, Dh);
      for (int k = 0; k < K; ++k) {
        const int64_t flat_idx = (int64_t(h) * L + l) * K + k;
        Var o = slice(t, off, 1, flat_idx * 2, 2);
        Var pos = add(t, base_pos, mul(t, o, inv_size[size_t(l)]));
        Var samp = bilinear_sample(t, vh, pos);
        Var w = slice(t, aw_h, 1, int64_t(l) * K + k, 1);
        Var term = mul(t, samp, w);
        acc = first ? term : add(t, acc, term);
        first = false;
      }
    }
    heads.push_back(acc);
  }
  Var cat = concat(t, heads, 1);
  Var out = lin(t, cat, P(pre + "out_w"), P(pre + "out_b"));
  return layer_norm(t, add(t, x, out), P(pre + "ln_g"), P(pre + "ln_b"), C);
}

Var GaussTrNet::self_attn_3d(Tape& t, const std::vector<Var>& pv, int layer,
                             Var x, Var mu3d, const Eigen::Vector3d& bmin,
                             const Eigen::Vector3d& bmax) const {
  const ParamLookup P{params_, pv};
  const std::string pre = "l" + std::to_string(layer) + ".sa.";
  const int64_t C = cfg_.dim, Dh = C / cfg_.heads;

  Var pe = positional_encoding(t, mu3d, bmin, bmax, cfg_.dim);
  Var qk_in = add(t, x, pe);
  Var q = lin(t, qk_in, P(pre + "q_w"), P(pre + "q_b"));
  Var k = lin(t, qk_in, P(pre + "k_w"), P(pre + "k_b"));
  Var v = lin(t, x, P(pre + "v_w"), P(pre + "v_b"));

  std::vector<Var> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    Var qh = slice(t, q, 1, int64_t(h) * Dh, Dh);
    Var kh = slice(t, k, 1, int64_t(h) * Dh, Dh);
    Var vh = slice(t, v, 1, int64_t(h) * Dh, Dh);
    Var sc = scale(t, matmul(t, qh, transpose2d(t, kh)),
                   1.0 / std::sqrt(double(Dh)));
    heads.push_back(matmul(t, softmax(t, sc, 1), vh));
  }
  Var cat = concat(t, heads, 1);
  Var out = lin(t, cat, P(pre + "o_w"), P(pre + "o_b"));
  return layer_norm(t, add(t, x, out), P(pre + "ln_g"), P(pre + "ln_b"), C);
}

HeadOut GaussTrNet::gaussian_head(Tape& t, const std::vector<Var>& pv,
                                  int layer, Var x) const {
  const ParamLookup P{params_, pv};
  const std::string pre = "l" + std::to_string(layer) + ".head.";
  Var h1 = relu(t, lin(t, x, P(pre + "fc1_w"), P(pre + "fc1_b")));
  Var trunk = relu(t, lin(t, h1, P(pre + "fc2_w"), P(pre + "fc2_b")));
  HeadOut o;
  o.d_mu = scale(t, tanh(t, lin(t, trunk, P(pre + "mu_w"), P(pre + "mu_b"))),
                 cfg_.dmu_max);
  o.d_rot = lin(t, trunk, P(pre + "rot_w"), P(pre + "rot_b"));
  o.d_log_scale = lin(t, trunk, P(pre + "scale_w"), P(pre + "scale_b"));
  o.alpha = sigmoid(t, lin(t, trunk, P(pre + "alpha_w"), P(pre + "alpha_b")));
  o.feat = lin(t, trunk, P(pre + "feat_w"), P(pre + "feat_b"));
  return o;
}

NetOutput GaussTrNet::forward(Tape& t, const std::vector<Var>& pv,
                              const std::vector<ViewInput>& views,
                              const Eigen::Vector3d& bmin,
                              const Eigen::Vector3d& bmax) const {
  if (int(views.size()) != cfg_.views) {
    throw DataError("forward: expected " + std::to_string(cfg_.views) +
                    " views, got " + std::to_string(views.size()));
  }
  const int64_t N = cfg_.queries_per_view;
  const int64_t V = cfg_.views;
  const int64_t Ntot = N * V;

  NetOutput out;
  out.active.assign(size_t(Ntot), 0);
  out.view_index.assign(size_t(Ntot), 0);

  Tensor mu0 = Tensor::zeros({Ntot, 3});
  Tensor scale0 = Tensor::zeros({Ntot, 3});
  Tensor rot0 = Tensor::zeros({Ntot, 4});
  std::vector<Tensor> mu2d_norm(static_cast<size_t>(V));

  for (int64_t v = 0; v < V; ++v) {
    const Camera& cam = views[size_t(v)].cam;
    const Tensor& qp = query_px_[size_t(v)];  // normalized [0,1)^2
    mu2d_norm[size_t(v)] = qp;
    for (int64_t n = 0; n < N; ++n) {
      const int64_t row = v * N + n;
      out.view_index[size_t(row)] = int(v);
      const Eigen::Vector2d px(qp.data[n * 2] * cam.width,
                               qp.data[n * 2 + 1] * cam.height);
      const DepthInit di = init_from_depth(px, views[size_t(v)].depth, cam,
                                           cfg_.s0_factor, cfg_.downsample);
      out.active[size_t(row)] = di.active ? 1 : 0;
      for (int a = 0; a < 3; ++a) {
        mu0.data[row * 3 + a] = di.mu[a];
        scale0.data[row * 3 + a] =
            std::clamp(di.scale0[a], cfg_.s_min, cfg_.s_max);
      }
      rot0.data[row * 4] = di.rot0.w;
      rot0.data[row * 4 + 1] = di.rot0.x;
      rot0.data[row * 4 + 2] = di.rot0.y;
      rot0.data[row * 4 + 3] = di.rot0.z;
    }
  }

  std::vector<std::vector<Var>> pyramids(static_cast<size_t>(V));
  for (int64_t v = 0; v < V; ++v) {
    Tensor lvl = views[size_t(v)].feat;
    pyramids[size_t(v)].push_back(t.constant(lvl));
    for (int l = 1; l < cfg_.levels; ++l) {
      lvl = avg_pool2(lvl);
      pyramids[size_t(v)].push_back(t.constant(lvl));
    }
  }

  Var mu = t.constant(mu0);
  Var rot = t.constant(rot0);
  Var scl = t.constant(scale0);

  const ParamLookup P{params_, pv};
  Var x;
  {
    Var qe = P("query_embed");
    if (V == 1) {
      x = qe;
    } else {
      std::vector<Var> reps(size_t(V), qe);
      x = concat(t, reps, 0);
    }
  }

  Var alpha_out, feat_out;
  for (int l = 0; l < cfg_.layers; ++l) {
    std::vector<Var> xs;
    for (int64_t v = 0; v < V; ++v) {
      Var xv = V == 1 ? x : slice(t, x, 0, v * N, N);
      xs.push_back(deform_attn(t, pv, l, xv, pyramids[size_t(v)],
                               mu2d_norm[size_t(v)]));
    }
    x = V == 1 ? xs[0] : concat(t, xs, 0);
    x = self_attn_3d(t, pv, l, x, mu, bmin, bmax);
    const HeadOut h = gaussian_head(t, pv, l, x);
    mu = add(t, mu, h.d_mu);
    rot = normalize_rows(t, add(t, rot, h.d_rot));
    scl = clamp(t, mul(t, scl, exp(t, h.d_log_scale)), cfg_.s_min, cfg_.s_max);
    if (l == cfg_.layers - 1) {
      alpha_out = reshape(t, h.alpha, {Ntot});
      feat_out = h.feat;
    }
  }

  out.mu = mu;
  out.scale = scl;
  out.rot = rot;
  out.alpha = alpha_out;
  out.feat = feat_out;
  return out;
}

GaussianSet GaussTrNet::predict(const std::vector<ViewInput>& views,
                                const Eigen::Vector3d& bmin,
                                const Eigen::Vector3d& bmax) const {
  Tape t;
  const std::vector<Var> pv = push_params(t);
  const NetOutput o = forward(t, pv, views, bmin, bmax);
  GaussianSet s =
      GaussianSet::empty(cfg_.queries_per_view, cfg_.views, cfg_.dim);
  s.mu = t.value(o.mu);
  s.scale = t.value(o.scale);
  s.rot = t.value(o.rot);
  s.alpha = t.value(o.alpha);
  s.feat = t.value(o.feat);
  s.view_index = o.view_index;
  s.active = o.active;
  return s;
}

void GaussTrNet::zero_refinement_heads() {
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string hd = "l" + std::to_string(l) + ".head.";
    for (const char* nm : {"mu", "rot", "scale", "alpha"}) {
      for (const char* sfx : {"_w", "_b"}) {
        Tensor& v = params_.value(hd + nm + sfx);
        std::fill(v.data.begin(), v.data.end(), 0.0);
      }
    }
  }
}

void GaussTrNet::save_checkpoint(const std::string& dir,
                                 uint64_t config_hash) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/params");
  nlohmann::json manifest;
  manifest["config_hash"] = config_hash;
  manifest["net"] = {{"views", cfg_.views},
                     {"queries_per_view", cfg_.queries_per_view},
                     {"layers", cfg_.layers},
                     {"dim", cfg_.dim},
                     {"heads", cfg_.heads},
                     {"points", cfg_.points},
                     {"levels", cfg_.levels},
                     {"dmu_max", cfg_.dmu_max},
                     {"s_min", cfg_.s_min},
                     {"s_max", cfg_.s_max},
                     {"s0_factor", cfg_.s0_factor},
                     {"downsample", cfg_.downsample}};
  manifest["entries"] = nlohmann::json::array();
  for (int i = 0; i < params_.size(); ++i) {
    const ParamEntry& e = params_.entry(i);
    const std::string file = "params/p" + std::to_string(i) + ".gtsr";
    write_gtsr(dir + "/" + file, e.value, GtsrDtype::F64);
    manifest["entries"].push_back(
        {{"name", e.name}, {"file", file}, {"trainable", e.trainable}});
  }
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw DataError("cannot write " + dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
}

GaussTrNet GaussTrNet::load_checkpoint(const std::string& dir,
                                       uint64_t* config_hash_out) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw DataError("cannot read " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }

  GaussTrNet net;
  try {
    if (config_hash_out) {
      *config_hash_out = manifest.at("config_hash").get<uint64_t>();
    }
    const auto& jc = manifest.at("net");
    net.cfg_.views = jc.at("views").get<int>();
    net.cfg_.queries_per_view = jc.at("queries_per_view").get<int>();
    net.cfg_.layers = jc.at("layers").get<int>();
    net.cfg_.dim = jc.at("dim").get<int>();
    net.cfg_.heads = jc.at("heads").get<int>();
    net.cfg_.points = jc.at("points").get<int>();
    net.cfg_.levels = jc.at("levels").get<int>();
    net.cfg_.dmu_max = jc.at("dmu_max").get<double>();
    net.cfg_.s_min = jc.at("s_min").get<double>();
    net.cfg_.s_max = jc.at("s_max").get<double>();
    net.cfg_.s0_factor = jc.at("s0_factor").get<double>();
    net.cfg_.downsample = jc.at("downsample").get<int>();
    for (const auto& je : manifest.at("entries")) {
      net.params_.add(je.at("name").get<std::string>(),
                      read_gtsr(dir + "/" + je.at("file").get<std::string>()),
                      je.at("trainable").get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }
  for (int v = 0; v < net.cfg_.views; ++v) {
    net.query_px_.push_back(
        net.params_.value("query_pos_v" + std::to_string(v)));
  }
  return net;
}

}  // namespace gausstr
