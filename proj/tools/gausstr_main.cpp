#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "gausstr/config.hpp"
#include "gausstr/errors.hpp"
#include "gausstr/image_io.hpp"
#include "gausstr/occupancy.hpp"
#include "gausstr/renderer.hpp"
#include "gausstr/scene.hpp"
#include "gausstr/threading.hpp"
#include "gausstr/trainer.hpp"
#include "nlohmann/json.hpp"

namespace {

using namespace gausstr;
namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  int threads = -1;
};

void add_config_flags(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_path, "JSON config file");
  cmd->add_option("--threads", c.threads,
                  "worker threads (default: GAUSSTR_THREADS env, then auto)");
  for (const std::string& key : config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key,
        [&c, key](const std::string& v) { c.overrides[key] = v; },
        "override config key " + key);
  }
}

RunConfig resolve_config(const CommonOpts& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  for (const auto& [k, v] : c.overrides) set_key(cfg, k, v);
  cfg.validate();

  int threads = c.threads;
  if (threads < 0) {
    if (const char* env = std::getenv("GAUSSTR_THREADS")) {
      threads = std::atoi(env);
    } else {
      threads = 0;  // auto
    }
  }
  set_thread_count(threads);
  return cfg;
}

SceneGenConfig scene_config(const RunConfig& cfg) {
  SceneGenConfig s;
  s.views = cfg.views;
  s.image_size = cfg.image_size;
  s.fov_deg = cfg.fov_deg;
  s.box_classes = cfg.box_classes;
  s.boxes = cfg.boxes;
  s.extent_xy = cfg.extent_xy;
  s.extent_z = cfg.extent_z;
  s.voxel = cfg.voxel;
  s.camera_radius = cfg.camera_radius;
  s.camera_height = cfg.camera_height;
  s.noise_sigma = cfg.noise_sigma;
  s.feat_dim = cfg.dim;
  return s;
}

NetConfig net_config(const RunConfig& cfg) {
  NetConfig n;
  n.views = cfg.views;
  n.queries_per_view = cfg.queries_per_view;
  n.layers = cfg.layers;
  n.dim = cfg.dim;
  n.heads = cfg.heads;
  n.points = cfg.points;
  n.levels = cfg.levels;
  n.dmu_max = cfg.dmu_max;
  n.s_min = cfg.s_min;
  n.s_max = cfg.s_max;
  n.s0_factor = cfg.s0_factor;
  n.downsample = cfg.render_downsample;
  return n;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.steps = cfg.steps;
  t.adam.lr = cfg.lr;
  t.adam.clip_norm = cfg.clip_norm;
  t.beta_depth = cfg.beta_depth;
  t.seg_aug = cfg.seg_aug;
  t.seg_hidden = cfg.seg_hidden;
  t.c_r = cfg.c_r;
  t.pca_samples = cfg.pca_samples;
  t.covered_trans = cfg.covered_trans;
  t.render.blur = cfg.blur;
  t.render.z_near = cfg.z_near;
  t.seed = cfg.seed;
  return t;
}

Camera render_camera(const Camera& full, int downsample) {
  return scale_camera(full, std::max(1, full.width / downsample),
                      std::max(1, full.height / downsample));
}

std::vector<ViewInput> oracle_views(const SyntheticScene& scene,
                                    const RunConfig& cfg) {
  std::vector<ViewInput> views;
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    const Camera rcam =
        render_camera(scene.cameras[v], cfg.render_downsample);
    const OracleMaps maps = oracle_render(scene, rcam, uint64_t(v));
    views.push_back(ViewInput{scene.cameras[v], maps.feat, maps.depth});
  }
  return views;
}

void write_meta(const std::string& dir, const std::string& command,
                const RunConfig& cfg) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = hash_hex(config_hash(cfg));
  std::ofstream f(dir + "/meta.json");
  if (!f) throw DataError("cannot write " + dir + "/meta.json");
  f << j.dump(2) << "\n";
}

void write_gocc_sidecar(const std::string& gocc_path, const RunConfig& cfg,
                        const std::vector<std::string>& names) {
  nlohmann::json j;
  j["config_hash"] = hash_hex(config_hash(cfg));
  j["class_names"] = names;
  std::ofstream f(gocc_path + ".json");
  if (!f) throw DataError("cannot write " + gocc_path + ".json");
  f << j.dump(2) << "\n";
}

nlohmann::json read_sidecar(const std::string& gocc_path) {
  std::ifstream f(gocc_path + ".json");
  if (!f) throw DataError("missing sidecar " + gocc_path + ".json");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad sidecar " + gocc_path + ".json: " + e.what());
  }
}

int cmd_synth(const CommonOpts& opts, const std::string& out) {
  const RunConfig cfg = resolve_config(opts);
  fs::create_directories(out);

  const SyntheticScene scene = generate_scene(scene_config(cfg), cfg.seed);
  save_scene(out + "/scene.json", scene);

  const OccupancyGrid gt = ground_truth_grid(scene);
  save_gocc(out + "/gt.gocc", gt);
  write_gocc_sidecar(out + "/gt.gocc", cfg, scene.prototypes.names);

  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    const Camera rcam =
        render_camera(scene.cameras[v], cfg.render_downsample);
    const OracleMaps maps = oracle_render(scene, rcam, uint64_t(v));
    const std::string stem = out + "/view" + std::to_string(v);
    write_gtsr(stem + "_feat.gtsr", maps.feat);
    write_gtsr(stem + "_depth.gtsr", maps.depth);
    write_ppm(stem + "_feat.ppm", pca_color(maps.feat));
    write_pgm16(stem + "_depth.pgm", maps.depth);
  }

  save_config(out + "/config.json", cfg);
  write_meta(out, "synth", cfg);
  std::cout << "synth: wrote " << out << " (config "
            << hash_hex(config_hash(cfg)) << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data,
              const std::string& out) {
  const RunConfig cfg = resolve_config(opts);
  const SyntheticScene scene = load_scene(data + "/scene.json");
  fs::create_directories(out);

  GaussTrNet net(net_config(cfg), cfg.seed);
  TrainSession session(net, scene, train_config(cfg));
  session.set_dump_dir(out + "/diagnostic");
  const std::vector<LossReport> reports = session.run(out + "/loss.csv");

  net.save_checkpoint(out + "/checkpoint", config_hash(cfg));
  write_meta(out, "train", cfg);
  std::cout << "train: " << reports.size() << " steps, final loss "
            << (reports.empty() ? 0.0 : reports.back().total) << ", wrote "
            << out << "\n";
  return 0;
}

int cmd_render(const CommonOpts& opts, const std::string& ckpt,
               const std::string& data, const std::string& out) {
  const RunConfig cfg = resolve_config(opts);
  const SyntheticScene scene = load_scene(data + "/scene.json");
  const GaussTrNet net = GaussTrNet::load_checkpoint(ckpt);
  fs::create_directories(out);

  const std::vector<ViewInput> views = oracle_views(scene, cfg);
  const GaussianSet set = net.predict(views, scene.grid.min, scene.grid.max);

  RenderSettings rs;
  rs.blur = cfg.blur;
  rs.z_near = cfg.z_near;
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    const Camera rcam =
        render_camera(scene.cameras[v], cfg.render_downsample);
    const RenderedView rv = render(set, rcam, rs);
    const std::string stem = out + "/view" + std::to_string(v);
    write_gtsr(stem + "_feat.gtsr", rv.feat);
    write_gtsr(stem + "_depth.gtsr", rv.depth);
    write_gtsr(stem + "_trans.gtsr", rv.trans);
    write_ppm(stem + "_feat.ppm", pca_color(rv.feat));
    write_pgm16(stem + "_depth.pgm", rv.depth);
  }
  write_meta(out, "render", cfg);
  std::cout << "render: wrote " << scene.cameras.size() << " views to " << out
            << "\n";
  return 0;
}

int cmd_voxelize(const CommonOpts& opts, const std::string& ckpt,
                 const std::string& data, const std::string& out) {
  const RunConfig cfg = resolve_config(opts);
  const SyntheticScene scene = load_scene(data + "/scene.json");
  const GaussTrNet net = GaussTrNet::load_checkpoint(ckpt);
  fs::create_directories(out);

  const std::vector<ViewInput> views = oracle_views(scene, cfg);
  const GaussianSet set = net.predict(views, scene.grid.min, scene.grid.max);
  const OccupancyGrid pred =
      voxelize(set, scene.prototypes, scene.grid, cfg.tau_occ);

  save_gocc(out + "/pred.gocc", pred);
  write_gocc_sidecar(out + "/pred.gocc", cfg, scene.prototypes.names);
  write_meta(out, "voxelize", cfg);
  std::cout << "voxelize: " << pred.occupied_count() << " of "
            << pred.spec.cells() << " cells occupied, wrote " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& out, bool force) {
  const nlohmann::json pred_side = read_sidecar(pred_path);
  const nlohmann::json gt_side = read_sidecar(gt_path);
  const std::string pred_hash = pred_side.value("config_hash", "");
  const std::string gt_hash = gt_side.value("config_hash", "");
  if (pred_hash != gt_hash && !force) {
    throw ConfigError("config hash mismatch: pred " + pred_hash + " vs gt " +
                      gt_hash + " (pass --force to compare anyway)");
  }

  const OccupancyGrid pred = load_gocc(pred_path);
  const OccupancyGrid gt = load_gocc(gt_path);
  const IouReport rep = iou(pred, gt);

  std::vector<std::string> names;
  if (pred_side.contains("class_names")) {
    names = pred_side["class_names"].get<std::vector<std::string>>();
  }
  nlohmann::json j;
  j["binary_iou"] = rep.binary_iou;
  j["miou"] = rep.miou;
  j["config_hash"] = pred_hash;
  nlohmann::json per = nlohmann::json::object();
  for (size_t c = 0; c < rep.per_class.size(); ++c) {
    const std::string name =
        c < names.size() ? names[c] : "class" + std::to_string(c);
    if (rep.per_class[c] < 0) {
      per[name] = nullptr;
    } else {
      per[name] = rep.per_class[c];
    }
  }
  j["per_class"] = per;

  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feed-forward Gaussian occupancy pipeline"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, render_opts, vox_opts;
  std::string synth_out, train_data, train_out, render_ckpt, render_data,
      render_out, vox_ckpt, vox_data, vox_out, eval_pred, eval_gt, eval_out;
  bool eval_force = false;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_config_flags(synth, synth_opts);
  synth->add_option("--out", synth_out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "fit a model to one scene");
  add_config_flags(train, train_opts);
  train->add_option("--data", train_data, "synth output directory")
      ->required();
  train->add_option("--out", train_out, "output directory")->required();

  CLI::App* rnd = app.add_subcommand("render", "render a checkpoint's views");
  add_config_flags(rnd, render_opts);
  rnd->add_option("--ckpt", render_ckpt, "checkpoint directory")->required();
  rnd->add_option("--data", render_data, "synth output directory")->required();
  rnd->add_option("--out", render_out, "output directory")->required();

  CLI::App* vox = app.add_subcommand("voxelize", "predict an occupancy grid");
  add_config_flags(vox, vox_opts);
  vox->add_option("--ckpt", vox_ckpt, "checkpoint directory")->required();
  vox->add_option("--data", vox_data, "synth output directory")->required();
  vox->add_option("--out", vox_out, "output directory")->required();

  CLI::App* evl = app.add_subcommand("eval", "score a grid against GT");
  evl->add_option("--pred", eval_pred, "predicted .gocc")->required();
  evl->add_option("--gt", eval_gt, "ground truth .gocc")->required();
  evl->add_option("--out", eval_out, "metrics JSON path");
  evl->add_flag("--force", eval_force, "ignore config hash mismatch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_out);
    if (train->parsed()) return cmd_train(train_opts, train_data, train_out);
    if (rnd->parsed()) {
      return cmd_render(render_opts, render_ckpt, render_data, render_out);
    }
    if (vox->parsed()) return cmd_voxelize(vox_opts, vox_ckpt, vox_data, vox_out);
    if (evl->parsed()) return cmd_eval(eval_pred, eval_gt, eval_out, eval_force);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
