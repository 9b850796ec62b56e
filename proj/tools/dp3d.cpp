// dp3d: weakly-supervised articulated 3D reconstruction from 2D surface
// keypoints. Subcommands: lbo, synth, train, fit, eval, export.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dp3d/checkpoint.hpp"
#include "dp3d/dataset.hpp"
#include "dp3d/error.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/metrics.hpp"
#include "dp3d/pipeline.hpp"
#include "dp3d/spectral.hpp"

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string mesh;
  std::string dataset;
  std::string labels;
  std::string checkpoint;
  std::string predictions;
  std::string regressor;
  std::string out_dir = "out";
  std::string variant = "parts";
  std::vector<int> m_parts = {10};
  int n_u = 64;
  double sigma_bar = 32.0;
  int blend_shapes = 0;
  int mlp_width = 1024;
  int mlp_hidden = 256;
  int mlp_blocks = 6;
  bool heteroscedastic = false;
  bool camera_scale = false;
  dp3d::LossWeights weights;
  dp3d::OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int threads = 1;
  // synth
  int synth_count = 200;
  dp3d::PoseSamplerConfig sampler;
  std::string corrupt_kind = "none";
  double corrupt_sigma = 0.0;
  double corrupt_keep = 1.0;
  double corrupt_rate = 0.0;
  // misc
  int export_count = 4;
  int fit_epochs = 200;

  json to_json() const {
    json j;
    j["mesh"] = mesh;
    j["dataset"] = dataset;
    j["labels"] = labels;
    j["checkpoint"] = checkpoint;
    j["predictions"] = predictions;
    j["regressor"] = regressor;
    j["out_dir"] = out_dir;
    j["variant"] = variant;
    j["m_parts"] = m_parts;
    j["n_u"] = n_u;
    j["sigma_bar"] = sigma_bar;
    j["blend_shapes"] = blend_shapes;
    j["mlp"] = {{"width", mlp_width}, {"hidden", mlp_hidden}, {"blocks", mlp_blocks}};
    j["heteroscedastic"] = heteroscedastic;
    j["camera_scale"] = camera_scale;
    j["weights"] = {{"w_entropy", weights.w_entropy},
                    {"w_canon", weights.w_canon},
                    {"w_arap", weights.w_arap},
                    {"pseudo_huber_eps", weights.pseudo_huber_eps},
                    {"b_min", weights.b_min}};
    j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                      {"momentum", optimizer.momentum},
                      {"weight_decay", optimizer.weight_decay},
                      {"epochs", optimizer.epochs},
                      {"lr_drop_factor", optimizer.lr_drop_factor},
                      {"lr_drop_at_fraction", optimizer.lr_drop_at_fraction},
                      {"batch_size", optimizer.batch_size},
                      {"seed", optimizer.seed}};
    j["seed"] = seed;
    j["threads"] = threads;
    j["synth"] = {{"count", synth_count},
                  {"theta_max_deg", sampler.theta_max_deg},
                  {"theta_min_deg", sampler.theta_min_deg},
                  {"chain", sampler.chain},
                  {"camera_mode", sampler.camera_mode},
                  {"cam_yaw_max_deg", sampler.cam_yaw_max_deg},
                  {"cam_pitch_max_deg", sampler.cam_pitch_max_deg}};
    j["corrupt"] = {{"kind", corrupt_kind},
                    {"sigma", corrupt_sigma},
                    {"keep_fraction", corrupt_keep},
                    {"rate", corrupt_rate}};
    j["export_count"] = export_count;
    j["fit_epochs"] = fit_epochs;
    return j;
  }

  void load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dp3d::Error("io_open", "cannot open config: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw dp3d::Error("config_parse", e.what());
    }
    mesh = j.value("mesh", mesh);
    dataset = j.value("dataset", dataset);
    labels = j.value("labels", labels);
    checkpoint = j.value("checkpoint", checkpoint);
    predictions = j.value("predictions", predictions);
    regressor = j.value("regressor", regressor);
    out_dir = j.value("out_dir", out_dir);
    variant = j.value("variant", variant);
    if (j.contains("m_parts")) {
      m_parts.clear();
      if (j["m_parts"].is_array())
        for (const auto& v : j["m_parts"]) m_parts.push_back(v.get<int>());
      else
        m_parts.push_back(j["m_parts"].get<int>());
    }
    n_u = j.value("n_u", n_u);
    sigma_bar = j.value("sigma_bar", sigma_bar);
    blend_shapes = j.value("blend_shapes", blend_shapes);
    if (j.contains("mlp")) {
      mlp_width = j["mlp"].value("width", mlp_width);
      mlp_hidden = j["mlp"].value("hidden", mlp_hidden);
      mlp_blocks = j["mlp"].value("blocks", mlp_blocks);
    }
    heteroscedastic = j.value("heteroscedastic", heteroscedastic);
    camera_scale = j.value("camera_scale", camera_scale);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      weights.w_entropy = w.value("w_entropy", weights.w_entropy);
      weights.w_canon = w.value("w_canon", weights.w_canon);
      weights.w_arap = w.value("w_arap", weights.w_arap);
      weights.pseudo_huber_eps = w.value("pseudo_huber_eps", weights.pseudo_huber_eps);
      weights.b_min = w.value("b_min", weights.b_min);
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      optimizer.learning_rate = o.value("learning_rate", optimizer.learning_rate);
      optimizer.momentum = o.value("momentum", optimizer.momentum);
      optimizer.weight_decay = o.value("weight_decay", optimizer.weight_decay);
      optimizer.epochs = o.value("epochs", optimizer.epochs);
      optimizer.lr_drop_factor = o.value("lr_drop_factor", optimizer.lr_drop_factor);
      optimizer.lr_drop_at_fraction = o.value("lr_drop_at_fraction", optimizer.lr_drop_at_fraction);
      optimizer.batch_size = o.value("batch_size", optimizer.batch_size);
      optimizer.seed = o.value("seed", optimizer.seed);
    }
    seed = j.value("seed", seed);
    threads = j.value("threads", threads);
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      synth_count = s.value("count", synth_count);
      sampler.theta_max_deg = s.value("theta_max_deg", sampler.theta_max_deg);
      sampler.theta_min_deg = s.value("theta_min_deg", sampler.theta_min_deg);
      sampler.chain = s.value("chain", sampler.chain);
      sampler.camera_mode = s.value("camera_mode", sampler.camera_mode);
      sampler.cam_yaw_max_deg = s.value("cam_yaw_max_deg", sampler.cam_yaw_max_deg);
      sampler.cam_pitch_max_deg = s.value("cam_pitch_max_deg", sampler.cam_pitch_max_deg);
    }
    if (j.contains("corrupt")) {
      const auto& c = j["corrupt"];
      corrupt_kind = c.value("kind", corrupt_kind);
      corrupt_sigma = c.value("sigma", corrupt_sigma);
      corrupt_keep = c.value("keep_fraction", corrupt_keep);
      corrupt_rate = c.value("rate", corrupt_rate);
    }
    export_count = j.value("export_count", export_count);
    fit_epochs = j.value("fit_epochs", fit_epochs);
  }

  dp3d::ModelSpec model_spec(int parts) const {
    dp3d::ModelSpec spec;
    spec.variant = variant;
    spec.m_parts = parts;
    spec.n_u = n_u;
    spec.sigma_bar = sigma_bar;
    spec.blend_shapes = blend_shapes;
    spec.mlp_width = mlp_width;
    spec.mlp_hidden = mlp_hidden;
    spec.mlp_blocks = mlp_blocks;
    spec.heteroscedastic = heteroscedastic;
    spec.camera_scale = camera_scale;
    spec.weights = weights;
    return spec;
  }
};

// fixed categorical palette for part colors
Eigen::RowVector3d part_color(int index) {
  static const double palette[16][3] = {
      {0.894, 0.102, 0.110}, {0.216, 0.494, 0.722}, {0.302, 0.686, 0.290}, {0.596, 0.306, 0.639},
      {1.000, 0.498, 0.000}, {1.000, 1.000, 0.200}, {0.651, 0.337, 0.157}, {0.969, 0.506, 0.749},
      {0.600, 0.600, 0.600}, {0.122, 0.471, 0.706}, {0.682, 0.780, 0.910}, {0.200, 0.628, 0.173},
      {0.698, 0.875, 0.541}, {0.984, 0.604, 0.600}, {0.890, 0.102, 0.110}, {0.992, 0.749, 0.435}};
  return Eigen::RowVector3d(palette[index % 16]);
}

// blue-white-red ramp for eigenfunction previews
Eigen::RowVector3d scalar_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t < 0.5) {
    const double u = t * 2.0;
    return {u, u, 1.0};
  }
  const double u = (t - 0.5) * 2.0;
  return {1.0, 1.0 - u, 1.0 - u};
}

void ensure_out_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream echo(fs::path(cfg.out_dir) / "config_resolved.json");
  echo << cfg.to_json().dump(1) << "\n";
}

std::vector<int> load_labels(const std::string& path, Eigen::Index k) {
  std::ifstream in(path);
  if (!in) throw dp3d::Error("io_open", "cannot open labels file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw dp3d::Error("labels_parse", e.what());
  }
  const auto& arr = j.is_object() ? j.at("labels") : j;
  if (Eigen::Index(arr.size()) != k)
    throw dp3d::Error("labels_shape", "labels count " + std::to_string(arr.size()) +
                                          " does not match vertex count " + std::to_string(k));
  std::vector<int> labels;
  for (const auto& v : arr) labels.push_back(v.get<int>());
  return labels;
}

void write_loss_csv(const std::string& path, const std::vector<dp3d::EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw dp3d::Error("io_open", "cannot open loss history for writing: " + path);
  out.precision(17);
  out << "epoch,l_total,l_rep,l_canon,l_arap,l_entropy,lr\n";
  for (const auto& rec : history)
    out << rec.epoch << "," << rec.losses.total << "," << rec.losses.rep << "," << rec.losses.canon
        << "," << rec.losses.arap << "," << rec.losses.entropy << "," << rec.lr << "\n";
}

dp3d::Model load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw dp3d::Error("config_invalid", "this command needs --checkpoint");
  const dp3d::Checkpoint ck = dp3d::load_checkpoint(cfg.checkpoint);
  const std::string mesh_path = cfg.mesh.empty() ? ck.mesh_path : cfg.mesh;
  if (dp3d::file_content_hash(mesh_path) != ck.mesh_hash)
    throw dp3d::Error("mesh_hash", "mesh file does not match the checkpoint's content hash: " + mesh_path);
  dp3d::ModelSpec overrides;
  overrides.weights = cfg.weights;
  return dp3d::model_from_checkpoint(ck, overrides, dp3d::load_mesh(mesh_path));
}

int cmd_lbo(const RunConfig& cfg) {
  const dp3d::TriMesh mesh = dp3d::load_mesh(cfg.mesh);
  if (cfg.n_u < 1 || cfg.n_u > mesh.vertex_count())
    throw dp3d::Error("config_invalid", "n_u must be in [1, vertex count]");
  ensure_out_dir(cfg);
  const dp3d::SpectralBasis basis = dp3d::spectral_basis(mesh, cfg.n_u);

  json j;
  j["lambdas"] = json::array();
  for (Eigen::Index i = 0; i < basis.lambdas.size(); ++i) j["lambdas"].push_back(basis.lambdas[i]);
  j["areas"] = json::array();
  for (Eigen::Index i = 0; i < basis.areas.size(); ++i) j["areas"].push_back(basis.areas[i]);
  j["U"] = dp3d::detail::matrix_to_json(basis.U);
  std::ofstream out(fs::path(cfg.out_dir) / "basis.json");
  out << j.dump() << "\n";

  for (Eigen::Index c = 0; c < basis.size(); ++c) {
    const double lo = basis.U.col(c).minCoeff(), hi = basis.U.col(c).maxCoeff();
    const double span = (hi - lo) > 1e-12 ? hi - lo : 1.0;
    Eigen::MatrixXd colors(mesh.vertex_count(), 3);
    for (Eigen::Index v = 0; v < mesh.vertex_count(); ++v)
      colors.row(v) = scalar_color((basis.U(v, c) - lo) / span);
    char name[64];
    std::snprintf(name, sizeof name, "eigenfunction_%03d.ply", int(c));
    dp3d::export_mesh(mesh, &colors, (fs::path(cfg.out_dir) / name).string());
  }
  std::cout << "wrote basis.json and " << basis.size() << " eigenfunction previews to " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_synth(const RunConfig& cfg) {
  const dp3d::TriMesh mesh = dp3d::load_mesh(cfg.mesh);
  const std::vector<int> labels = load_labels(cfg.labels, mesh.vertex_count());
  ensure_out_dir(cfg);
  dp3d::Rng rng(cfg.seed);
  std::vector<dp3d::Instance> data = dp3d::synth_dataset(mesh, labels, cfg.sampler, cfg.synth_count, rng);

  if (cfg.corrupt_kind != "none") {
    dp3d::CorruptSpec spec;
    if (cfg.corrupt_kind == "gaussian_noise") {
      spec.kind = dp3d::CorruptSpec::Kind::gaussian_noise;
      spec.sigma = cfg.corrupt_sigma;
    } else if (cfg.corrupt_kind == "sparsify") {
      spec.kind = dp3d::CorruptSpec::Kind::sparsify;
      spec.keep_fraction = cfg.corrupt_keep;
    } else if (cfg.corrupt_kind == "drop_lower_half") {
      spec.kind = dp3d::CorruptSpec::Kind::drop_lower_half;
      spec.rate = cfg.corrupt_rate;
      spec.below_median = dp3d::below_median_mask(mesh);
    } else {
      throw dp3d::Error("config_invalid", "unknown corruption kind: " + cfg.corrupt_kind);
    }
    dp3d::Rng crng(cfg.seed + 1);
    data = dp3d::corrupt(std::move(data), spec, crng);
  }

  dp3d::write_dataset((fs::path(cfg.out_dir) / "dataset.jsonl").string(), data);
  std::ofstream lab(fs::path(cfg.out_dir) / "gt_labels.json");
  lab << json{{"labels", labels}}.dump() << "\n";
  std::cout << "wrote " << data.size() << " instances to " << cfg.out_dir << "/dataset.jsonl\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const dp3d::TriMesh mesh = dp3d::load_mesh(cfg.mesh);
  if (cfg.dataset.empty()) throw dp3d::Error("config_invalid", "train needs --dataset");
  const std::vector<dp3d::Instance> data = dp3d::read_dataset(cfg.dataset);
  ensure_out_dir(cfg);

  for (int parts : cfg.m_parts) {
    dp3d::Model model = dp3d::init_model(mesh, cfg.model_spec(parts), cfg.seed);
    dp3d::OptimizerConfig opt = cfg.optimizer;
    opt.seed = cfg.seed;
    const dp3d::TrainSummary summary = dp3d::train_model(model, data, opt);

    const fs::path dir = cfg.m_parts.size() > 1
                             ? fs::path(cfg.out_dir) / ("m" + std::to_string(parts))
                             : fs::path(cfg.out_dir);
    fs::create_directories(dir);
    write_loss_csv((dir / "loss_history.csv").string(), summary.history);
    dp3d::save_checkpoint(dp3d::to_checkpoint(model, cfg.mesh), (dir / "checkpoint.json").string());
    if (summary.diverged) {
      std::cerr << "error[train_diverged]: loss became non-finite; checkpoint holds the last good state\n";
      return 2;
    }
    std::cout << "m_parts=" << parts << " final losses: total=" << summary.history.back().losses.total
              << " rep=" << summary.history.back().losses.rep << "\n";
  }
  return 0;
}

int cmd_fit(const RunConfig& cfg) {
  dp3d::Model model = load_model(cfg);
  if (cfg.dataset.empty()) throw dp3d::Error("config_invalid", "fit needs --dataset");
  const std::vector<dp3d::Instance> data = dp3d::read_dataset(cfg.dataset);
  ensure_out_dir(cfg);

  dp3d::OptimizerConfig opt = cfg.optimizer;
  opt.epochs = cfg.fit_epochs;
  opt.batch_size = 1;
  opt.seed = cfg.seed;
  std::vector<dp3d::Prediction> preds;
  preds.reserve(data.size());
  for (const auto& inst : data) {
    const dp3d::FitResult fit = dp3d::fit_instance(model, inst, opt);
    preds.push_back({inst.id, fit.x_object, fit.camera});
  }
  dp3d::write_predictions((fs::path(cfg.out_dir) / "predictions.jsonl").string(), preds);
  std::cout << "fit " << preds.size() << " instances -> " << cfg.out_dir << "/predictions.jsonl\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  dp3d::Model model = load_model(cfg);
  if (cfg.dataset.empty()) throw dp3d::Error("config_invalid", "eval needs --dataset");
  const std::vector<dp3d::Instance> data = dp3d::read_dataset(cfg.dataset);
  ensure_out_dir(cfg);

  std::vector<dp3d::Prediction> preds;
  if (!cfg.predictions.empty()) {
    preds = dp3d::read_predictions(cfg.predictions);
  } else {
    preds.reserve(data.size());
    for (const auto& inst : data) preds.push_back(dp3d::predict_instance(model, inst));
  }

  dp3d::EvalOptions opt;
  opt.image_scale = model.scale;
  dp3d::JointRegressor reg;
  if (!cfg.regressor.empty()) {
    reg = dp3d::load_joint_regressor(cfg.regressor);
    opt.regressor = &reg;
  }
  dp3d::EvalReport report = dp3d::evaluate_predictions(preds, data, opt);

  json j = report.to_json();
  if (!cfg.labels.empty() && model.spec.has_parts()) {
    const std::vector<int> labels = load_labels(cfg.labels, model.vertex_count());
    const Eigen::MatrixXd p = dp3d::part_segmentation(dp3d::part_model_of(model));
    j["seg_agreement"] = dp3d::seg_agreement(p, labels);
  }
  std::ofstream out(fs::path(cfg.out_dir) / "eval.json");
  out << j.dump(1) << "\n";
  std::cout << "mpjpe=" << report.mpjpe << " re=" << report.re << " rep_rel=" << report.rep_rel
            << "\n";
  return 0;
}

int cmd_export(const RunConfig& cfg) {
  dp3d::Model model = load_model(cfg);
  ensure_out_dir(cfg);

  Eigen::MatrixXd colors(model.vertex_count(), 3);
  if (model.spec.has_parts()) {
    const Eigen::MatrixXd p = dp3d::part_segmentation(dp3d::part_model_of(model));
    for (Eigen::Index v = 0; v < p.rows(); ++v) {
      int arg = 0;
      for (int c = 1; c < p.cols(); ++c)
        if (p(v, c) > p(v, arg)) arg = c;
      colors.row(v) = part_color(arg);
    }
  } else {
    colors.rowwise() = Eigen::RowVector3d(0.7, 0.7, 0.7);
  }
  dp3d::export_mesh(model.mesh, &colors, (fs::path(cfg.out_dir) / "template_parts.ply").string());

  if (!cfg.dataset.empty()) {
    const std::vector<dp3d::Instance> data = dp3d::read_dataset(cfg.dataset);
    const int n = std::min<int>(cfg.export_count, int(data.size()));
    for (int i = 0; i < n; ++i) {
      const dp3d::Prediction pred = dp3d::predict_instance(model, data[size_t(i)]);
      dp3d::TriMesh posed = model.mesh;
      posed.vertices = pred.x_object;
      dp3d::export_mesh(posed, &colors,
                        (fs::path(cfg.out_dir) / ("posed_" + pred.id + ".ply")).string());
    }
    std::cout << "exported " << n << " posed meshes to " << cfg.out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dp3d: articulated 3D lifting from 2D surface keypoints"};
  app.require_subcommand(1);

  RunConfig cfg;
  if (const char* env = std::getenv("DP3D_THREADS")) cfg.threads = std::atoi(env);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override its values)");

  // shared flags; registered on every subcommand so they can appear after it
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--mesh", cfg.mesh, "template mesh (OBJ/PLY)");
    sub->add_option("--dataset", cfg.dataset, "JSON-lines dataset");
    sub->add_option("--labels", cfg.labels, "per-vertex part labels (json)");
    sub->add_option("--checkpoint", cfg.checkpoint, "model checkpoint");
    sub->add_option("--predictions", cfg.predictions, "predictions file");
    sub->add_option("--regressor", cfg.regressor, "joint regressor CSV");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--variant", cfg.variant, "parts | no_parts_linear | parts_plus_blendshapes");
    sub->add_option("--m-parts", cfg.m_parts, "latent part count (repeat for a sweep)");
    sub->add_option("--n-u", cfg.n_u, "spectral basis size");
    sub->add_option("--sigma-bar", cfg.sigma_bar, "segmentation init decay");
    sub->add_option("--blend-shapes", cfg.blend_shapes, "blendshape count D");
    sub->add_option("--width", cfg.mlp_width, "MLP width");
    sub->add_option("--hidden", cfg.mlp_hidden, "MLP block hidden width");
    sub->add_option("--blocks", cfg.mlp_blocks, "MLP residual blocks");
    sub->add_flag("--heteroscedastic", cfg.heteroscedastic, "per-keypoint scale prediction");
    sub->add_flag("--camera-scale", cfg.camera_scale, "learnable isotropic image scale");
    sub->add_option("--w-entropy", cfg.weights.w_entropy, "entropy loss weight");
    sub->add_option("--w-canon", cfg.weights.w_canon, "canonicalization loss weight");
    sub->add_option("--w-arap", cfg.weights.w_arap, "rigidity loss weight");
    sub->add_option("--pseudo-huber-eps", cfg.weights.pseudo_huber_eps, "robust loss epsilon");
    sub->add_option("--b-min", cfg.weights.b_min, "scale clip for the heteroscedastic loss");
    sub->add_option("--lr", cfg.optimizer.learning_rate, "learning rate");
    sub->add_option("--momentum", cfg.optimizer.momentum, "SGD momentum");
    sub->add_option("--weight-decay", cfg.optimizer.weight_decay, "L2 weight decay");
    sub->add_option("--epochs", cfg.optimizer.epochs, "training epochs");
    sub->add_option("--batch-size", cfg.optimizer.batch_size, "batch size");
    sub->add_option("--lr-drop-factor", cfg.optimizer.lr_drop_factor, "LR drop factor");
    sub->add_option("--lr-drop-at", cfg.optimizer.lr_drop_at_fraction, "LR drop point (fraction)");
    sub->add_option("--seed", cfg.seed, "master RNG seed");
    sub->add_option("--threads", cfg.threads, "thread pool size (DP3D_THREADS as fallback)");
    sub->add_option("--count", cfg.synth_count, "synth: instances to generate");
    sub->add_option("--theta-max", cfg.sampler.theta_max_deg, "synth: hinge angle bound (deg)");
    sub->add_option("--theta-min", cfg.sampler.theta_min_deg, "synth: minimum hinge angle (deg)");
    sub->add_option("--camera-mode", cfg.sampler.camera_mode, "synth: haar | limited");
    sub->add_option("--cam-yaw-max", cfg.sampler.cam_yaw_max_deg, "synth: yaw bound (deg)");
    sub->add_option("--cam-pitch-max", cfg.sampler.cam_pitch_max_deg, "synth: pitch bound (deg)");
    sub->add_option("--corrupt", cfg.corrupt_kind, "synth: none | gaussian_noise | sparsify | drop_lower_half");
    sub->add_option("--corrupt-sigma", cfg.corrupt_sigma, "synth: noise sigma");
    sub->add_option("--corrupt-keep", cfg.corrupt_keep, "synth: sparsify keep fraction");
    sub->add_option("--corrupt-rate", cfg.corrupt_rate, "synth: lower-half drop rate");
    sub->add_option("--export-count", cfg.export_count, "export: posed instances to write");
    sub->add_option("--fit-epochs", cfg.fit_epochs, "fit: optimization steps per instance");
  };

  CLI::App* lbo = app.add_subcommand("lbo", "compute the spectral basis and previews");
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "train the model on a dataset");
  CLI::App* fit = app.add_subcommand("fit", "per-instance pose optimization");
  CLI::App* eval = app.add_subcommand("eval", "evaluate predictions against ground truth");
  CLI::App* exp = app.add_subcommand("export", "export part-colored meshes");
  for (CLI::App* sub : {lbo, synth, train, fit, eval, exp}) add_common(sub);

  // two-pass parse: config file first, then flags win
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (!config_path.empty()) {
    try {
      cfg.load_json(config_path);
      // reparse so command-line flags override config values
      app.clear();
      app.parse(argc, argv);
    } catch (const dp3d::Error& e) {
      std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
      return 1;
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }
  }

  try {
    cfg.optimizer.validate();
    cfg.weights.validate();
    if (cfg.threads < 1) throw dp3d::Error("config_invalid", "threads must be >= 1");
    Eigen::setNbThreads(cfg.threads);
    if (lbo->parsed()) return cmd_lbo(cfg);
    if (synth->parsed()) return cmd_synth(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (fit->parsed()) return cmd_fit(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (exp->parsed()) return cmd_export(cfg);
  } catch (const dp3d::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
