#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dp3d/articulation.hpp"
#include "dp3d/checkpoint.hpp"
#include "dp3d/dataset.hpp"
#include "dp3d/error.hpp"
#include "dp3d/losses.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/metrics.hpp"
#include "dp3d/networks.hpp"
#include "dp3d/optimizer.hpp"
#include "dp3d/params.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/spectral.hpp"

#include <nlohmann/json.hpp>

namespace dp3d {

// Resolved model configuration. Variants:
//   parts                  - soft part segmentation + per-part rigid motion
//   no_parts_linear        - blendshape-only baseline (no segmentation)
//   parts_plus_blendshapes - body-type blendshapes composed before skinning
struct ModelSpec {
  std::string variant = "parts";
  int m_parts = 10;
  int n_u = 64;
  double sigma_bar = 32.0;
  int blend_shapes = 0;  // D; defaults applied in normalize()
  int mlp_width = 1024;
  int mlp_hidden = 256;
  int mlp_blocks = 6;
  int uncert_hidden = 64;
  bool heteroscedastic = false;
  bool camera_scale = false;
  LossWeights weights;

  bool has_parts() const { return variant != "no_parts_linear"; }
  bool has_blendshapes() const { return variant != "parts"; }

  void normalize_and_validate() {
    if (variant != "parts" && variant != "no_parts_linear" && variant != "parts_plus_blendshapes")
      throw Error("config_invalid", "unknown model variant: " + variant);
    if (has_blendshapes() && blend_shapes <= 0)
      blend_shapes = (variant == "no_parts_linear") ? 10 : 5;
    if (!has_blendshapes()) blend_shapes = 0;
    if (has_parts() && m_parts < 1) throw Error("config_invalid", "m_parts must be >= 1");
    if (n_u < 1) throw Error("config_invalid", "n_u must be >= 1");
    if (sigma_bar <= 0) throw Error("config_invalid", "sigma_bar must be > 0");
    if (mlp_width < 1 || mlp_hidden < 1 || mlp_blocks < 0)
      throw Error("config_invalid", "network dimensions must be positive");
    if (heteroscedastic && !has_parts())
      throw Error("config_invalid", "heteroscedastic loss requires a parts variant");
    weights.validate();
  }

  int pose_row_dim() const {
    int dim = 6;  // camera twist
    if (has_parts()) dim += 6 * m_parts;
    if (has_blendshapes()) dim += blend_shapes;
    return dim;
  }
};

// A model bound to its template: parameters, batch-norm state, spectral
// basis, one-ring structure, and the model-to-image unit scale.
struct Model {
  ModelSpec spec;
  TriMesh mesh;
  SpectralBasis basis;
  OneRings rings;
  ParamSet params;
  BatchNormState bn;
  double scale = 1.0;  // image units per model unit (1 / template bbox diagonal)

  Eigen::Index vertex_count() const { return mesh.vertex_count(); }
};

inline MlpConfig make_phi_config(const ModelSpec& spec, Eigen::Index k) {
  return {int(3 * k), spec.pose_row_dim(), spec.mlp_width, spec.mlp_hidden, spec.mlp_blocks};
}
inline MlpConfig make_psi_config(const ModelSpec& spec, Eigen::Index k) {
  return {int(3 * k), int(3 * k), spec.mlp_width, spec.mlp_hidden, spec.mlp_blocks};
}

inline Model init_model(TriMesh mesh, ModelSpec spec, std::uint64_t seed) {
  spec.normalize_and_validate();
  Model model;
  model.spec = spec;
  model.basis = spectral_basis(mesh, spec.n_u);
  model.rings = build_one_rings(mesh);
  model.scale = 1.0 / bbox_diagonal(mesh);
  model.mesh = std::move(mesh);

  Rng rng(seed);
  if (spec.has_parts()) {
    const PartModel pm = init_part_model(model.basis, spec.m_parts, spec.sigma_bar, rng);
    model.params.add("seg.W", pm.W, true, false);
    model.params.add("seg.rest_logs", pm.rest_logs, true, false);
  }
  if (spec.has_blendshapes()) {
    Eigen::MatrixXd coeffs(spec.blend_shapes * spec.n_u, 3);
    for (Eigen::Index i = 0; i < coeffs.rows(); ++i)
      for (int j = 0; j < 3; ++j) coeffs(i, j) = rng.gaussian(0.0, 0.01);
    model.params.add("bs.coeffs", coeffs, true, false);
  }
  init_mlp_params(model.params, "phi", make_phi_config(spec, model.vertex_count()), rng);
  init_mlp_params(model.params, "psi", make_psi_config(spec, model.vertex_count()), rng);
  init_batchnorm_state(model.bn, "phi", make_phi_config(spec, model.vertex_count()));
  init_batchnorm_state(model.bn, "psi", make_psi_config(spec, model.vertex_count()));
  if (spec.heteroscedastic)
    init_uncertainty_params(model.params, "uncert", {spec.n_u + 6, spec.uncert_hidden}, rng);
  if (spec.camera_scale) model.params.add("cam.log_scale", Eigen::MatrixXd::Zero(1, 1));
  return model;
}

// ---- per-instance graph assembly ----

struct StepContext {
  ad::Value basis_u;                // K x N_u constant
  ad::Value vertices;               // K x 3 constant
  ad::Value segmentation;           // K x M (parts variants)
  std::vector<TransformNode> rest;  // inverse rest poses (parts variants)
};

inline StepContext make_step_context(ad::Tape& t, const Model& model, const ParamLeaves& leaves) {
  StepContext ctx;
  ctx.basis_u = ad::constant(t, model.basis.U);
  ctx.vertices = ad::constant(t, model.mesh.vertices);
  if (model.spec.has_parts()) {
    ctx.segmentation = part_segmentation_graph(ctx.basis_u, leaves.at("seg.W"));
    for (int m = 0; m < model.spec.m_parts; ++m)
      ctx.rest.push_back(exp_twist(ad::slice_rows(leaves.at("seg.rest_logs"), m, 1)));
  }
  return ctx;
}

struct InstanceGraph {
  ad::Value x_hat;        // K x 3, object frame
  TransformNode camera;   // model-unit camera
  ad::Value projection;   // K x 2, normalized image units
  ad::Value part_twists;  // M x 6 (parts variants; feeds the uncertainty head)
};

// `pose_row` is 1 x pose_row_dim(): [camera twist | part twists | alpha].
inline InstanceGraph build_instance_graph(ad::Tape& t, const Model& model, const ParamLeaves& leaves,
                                          const StepContext& ctx, ad::Value pose_row) {
  const ModelSpec& spec = model.spec;
  InstanceGraph out;
  out.camera = exp_twist(ad::slice_cols(pose_row, 0, 6));

  ad::Value verts = ctx.vertices;
  if (spec.has_blendshapes()) {
    const Eigen::Index alpha_at = spec.has_parts() ? 6 * (spec.m_parts + 1) : 6;
    ad::Value alpha = ad::slice_cols(pose_row, alpha_at, spec.blend_shapes);
    verts = blendshape_graph(verts, ctx.basis_u, leaves.at("bs.coeffs"), alpha, spec.blend_shapes);
  }

  if (spec.has_parts()) {
    out.part_twists = ad::reshape(ad::slice_cols(pose_row, 6, 6 * spec.m_parts), spec.m_parts, 6);
    std::vector<TransformNode> parts;
    for (int m = 0; m < spec.m_parts; ++m)
      parts.push_back(exp_twist(ad::slice_rows(out.part_twists, m, 1)));
    out.x_hat = skin_graph(verts, ctx.segmentation, ctx.rest, parts);
  } else {
    out.x_hat = verts;
  }

  ad::Value proj = ad::scale(project_ortho_graph(out.x_hat, out.camera), model.scale);
  if (spec.camera_scale) proj = ad::scale_by(proj, ad::exp(leaves.at("cam.log_scale")));
  out.projection = proj;
  return out;
}

// ---- full step graph (reprojection + canonicalization + rigidity + entropy) ----

struct StepGraphOptions {
  bool train_mode = true;
  bool with_canon = true;
  bool update_running_stats = true;
};

inline BatchGraph build_step_graph(ad::Tape& t, Model& model, const ParamLeaves& leaves,
                                   const std::vector<const Instance*>& batch,
                                   const std::vector<ad::Value>& pose_rows, Rng& step_rng,
                                   const StepGraphOptions& opt) {
  const ModelSpec& spec = model.spec;
  const double eps = spec.weights.pseudo_huber_eps;
  const Eigen::Index b = Eigen::Index(batch.size());
  const StepContext ctx = make_step_context(t, model, leaves);

  ad::Value rep_sum, arap_sum;
  std::vector<ad::Value> x_hats;
  x_hats.reserve(size_t(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    const Instance& inst = *batch[size_t(i)];
    const InstanceGraph ig = build_instance_graph(t, model, leaves, ctx, pose_rows[size_t(i)]);
    x_hats.push_back(ig.x_hat);

    ad::Value rep;
    if (spec.heteroscedastic) {
      ad::Value vertex_twists = ad::matmul(ctx.segmentation, ig.part_twists);  // K x 6
      ad::Value head_in = ad::hcat(ctx.basis_u, vertex_twists);
      ad::Value scale_b = uncertainty_graph(t, leaves, "uncert", head_in);
      rep = loss_reprojection_hetero_graph(ig.projection, scale_b, inst.keypoints, model.basis.areas,
                                           eps, spec.weights.b_min);
    } else {
      rep = loss_reprojection_graph(ig.projection, inst.keypoints, model.basis.areas, eps);
    }
    rep_sum = (i == 0) ? rep : ad::add(rep_sum, rep);

    ad::Value arap = loss_arap_graph(ig.x_hat, model.mesh.vertices, model.rings, eps);
    arap_sum = (i == 0) ? arap : ad::add(arap_sum, arap);
  }
  ad::Value rep = ad::scale(rep_sum, 1.0 / double(b));
  ad::Value arap = ad::scale(arap_sum, 1.0 / double(b));

  // canonicalization: one fresh rotation per instance per step; the
  // canonicalizer consumes the whole batch in one pass
  ad::Value canon;
  if (opt.with_canon && spec.weights.w_canon > 0.0) {
    const Eigen::Index k = model.vertex_count();
    std::vector<ad::Value> rotated_rows;
    rotated_rows.reserve(size_t(b));
    for (Eigen::Index i = 0; i < b; ++i) {
      const RigidTransform rot = random_rotation(step_rng);
      rotated_rows.push_back(ad::reshape(ad::matmul(x_hats[size_t(i)], ad::constant(t, rot.R)), 1, 3 * k));
    }
    BatchNormState* bn_state =
        (opt.update_running_stats || !opt.train_mode) ? &model.bn : nullptr;
    ad::Value psi_out = mlp_graph(t, leaves, "psi", make_psi_config(spec, k), ad::vstack(rotated_rows),
                                  opt.train_mode, bn_state);
    ad::Value canon_sum;
    for (Eigen::Index i = 0; i < b; ++i) {
      ad::Value recovered = ad::reshape(ad::slice_rows(psi_out, i, 1), k, 3);
      ad::Value residual = ad::sub(x_hats[size_t(i)], recovered);
      ad::Value ci = ad::mean(ad::pseudo_huber_rownorm(residual, eps));
      canon_sum = (i == 0) ? ci : ad::add(canon_sum, ci);
    }
    canon = ad::scale(canon_sum, 1.0 / double(b));
  }

  ad::Value entropy;
  if (spec.has_parts()) entropy = loss_entropy_graph(ctx.segmentation);

  LossTerms terms{rep, canon, arap, entropy};
  BatchGraph graph;
  graph.total = loss_total_graph(t, terms, spec.weights);
  graph.values.rep = rep.scalar();
  graph.values.canon = canon.id >= 0 ? canon.scalar() : 0.0;
  graph.values.arap = arap.scalar();
  graph.values.entropy = entropy.id >= 0 ? entropy.scalar() : 0.0;
  graph.values.total = graph.total.scalar();
  return graph;
}

// ---- training (amortized regressor) ----

inline BatchLossFn make_train_loss(Model& model, const std::vector<Instance>& dataset) {
  // encode inputs once
  auto encoded = std::make_shared<std::vector<Eigen::RowVectorXd>>();
  encoded->reserve(dataset.size());
  for (const auto& inst : dataset) encoded->push_back(encode_keypoints(inst.keypoints));

  return [&model, &dataset, encoded](ad::Tape& t, const ParamLeaves& leaves,
                                     const std::vector<int>& batch, Rng& step_rng) -> BatchGraph {
    const Eigen::Index b = Eigen::Index(batch.size());
    Eigen::MatrixXd phi_in(b, (*encoded)[0].size());
    std::vector<const Instance*> insts(static_cast<size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) {
      phi_in.row(i) = (*encoded)[size_t(batch[size_t(i)])];
      insts[size_t(i)] = &dataset[size_t(batch[size_t(i)])];
    }
    const MlpConfig phi_cfg = make_phi_config(model.spec, model.vertex_count());
    ad::Value phi_out =
        mlp_graph(t, leaves, "phi", phi_cfg, ad::constant(t, phi_in), true, &model.bn);
    std::vector<ad::Value> pose_rows;
    pose_rows.reserve(size_t(b));
    for (Eigen::Index i = 0; i < b; ++i) pose_rows.push_back(ad::slice_rows(phi_out, i, 1));
    return build_step_graph(t, model, leaves, insts, pose_rows, step_rng, {true, true, true});
  };
}

struct TrainSummary {
  std::vector<EpochRecord> history;
  bool diverged = false;
};

inline TrainSummary train_model(Model& model, const std::vector<Instance>& dataset,
                                const OptimizerConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (dataset.empty()) throw Error("train_empty", "dataset is empty");
  for (const auto& inst : dataset) inst.validate();
  const BatchLossFn loss = make_train_loss(model, dataset);
  TrainResult result = train(std::move(model.params), int(dataset.size()), loss, cfg, on_epoch);
  model.params = std::move(result.params);
  return {std::move(result.history), result.diverged};
}

// ---- per-instance direct pose optimization (no regressor) ----

struct FitResult {
  PoseParams pose;
  Eigen::MatrixXd pose_row;  // 1 x pose_row_dim
  Eigen::MatrixXd x_object;  // K x 3
  RigidTransform camera;
  std::vector<EpochRecord> history;
};

// Optimizes a single pose row against the same losses, with the trained
// model (segmentation, networks) frozen. The canonicalizer runs in eval mode.
inline FitResult fit_instance(Model& model, const Instance& inst, const OptimizerConfig& cfg) {
  inst.keypoints.validate();
  ParamSet fit_params;
  fit_params.add("pose.row", Eigen::MatrixXd::Zero(1, model.spec.pose_row_dim()), true);
  for (const auto& e : model.params.entries()) fit_params.add(e.name, e.value, false);

  const BatchLossFn loss = [&model, &inst](ad::Tape& t, const ParamLeaves& leaves,
                                           const std::vector<int>&, Rng& step_rng) -> BatchGraph {
    std::vector<const Instance*> insts{&inst};
    std::vector<ad::Value> rows{leaves.at("pose.row")};
    return build_step_graph(t, model, leaves, insts, rows, step_rng, {false, true, false});
  };

  TrainResult result = train(std::move(fit_params), 1, loss, cfg);

  FitResult out;
  out.pose_row = result.params.at("pose.row");
  out.history = std::move(result.history);
  const ModelSpec& spec = model.spec;
  const int rows = spec.has_parts() ? spec.m_parts + 1 : 1;
  out.pose.twists.resize(rows, 6);
  for (int m = 0; m < rows; ++m) out.pose.twists.row(m) = out.pose_row.block(0, 6 * m, 1, 6);
  if (spec.has_blendshapes()) {
    const Eigen::Index at = spec.has_parts() ? 6 * (spec.m_parts + 1) : 6;
    out.pose.blend_coeffs = out.pose_row.block(0, at, 1, spec.blend_shapes).transpose();
  }

  ad::Tape t;
  ParamLeaves leaves;
  for (const auto& e : result.params.entries()) leaves[e.name] = ad::constant(t, e.value);
  const StepContext ctx = make_step_context(t, model, leaves);
  const InstanceGraph ig = build_instance_graph(t, model, leaves, ctx, leaves.at("pose.row"));
  out.x_object = ig.x_hat.val();
  out.camera.R = ig.camera.R.val();
  out.camera.T = ig.camera.T.val();
  return out;
}

// ---- amortized prediction (eval mode) ----

struct Prediction {
  std::string id;
  Eigen::MatrixXd x_object;  // K x 3, object frame
  RigidTransform camera;

  Eigen::MatrixXd camera_frame() const { return apply(camera, x_object); }
};

inline Prediction predict_instance(const Model& model, const Instance& inst) {
  ad::Tape t;
  ParamLeaves leaves;
  for (const auto& e : model.params.entries()) leaves[e.name] = ad::constant(t, e.value);
  const MlpConfig phi_cfg = make_phi_config(model.spec, model.vertex_count());
  Eigen::MatrixXd phi_in(1, phi_cfg.input_dim);
  phi_in.row(0) = encode_keypoints(inst.keypoints);
  ad::Value pose_row = mlp_graph(t, leaves, "phi", phi_cfg, ad::constant(t, phi_in), false,
                                 const_cast<BatchNormState*>(&model.bn));
  const StepContext ctx = make_step_context(t, model, leaves);
  const InstanceGraph ig = build_instance_graph(t, model, leaves, ctx, pose_row);
  Prediction pred;
  pred.id = inst.id;
  pred.x_object = ig.x_hat.val();
  pred.camera.R = ig.camera.R.val();
  pred.camera.T = ig.camera.T.val();
  return pred;
}

// ---- prediction file I/O ----

inline void write_predictions(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw Error("io_open", "cannot open predictions file for writing: " + path);
  for (const auto& p : preds) {
    nlohmann::json j;
    j["id"] = p.id;
    auto& x = j["x_obj"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < p.x_object.rows(); ++i)
      x.push_back({p.x_object(i, 0), p.x_object(i, 1), p.x_object(i, 2)});
    nlohmann::json cam;
    auto& r = cam["R"] = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) r.push_back(p.camera.R(i, c));
    cam["T"] = {p.camera.T[0], p.camera.T[1], p.camera.T[2]};
    j["cam"] = cam;
    out << j.dump() << "\n";
  }
  if (!out) throw Error("io_write", "failed writing predictions: " + path);
}

inline std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_open", "cannot open predictions file: " + path);
  std::vector<Prediction> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    Prediction p;
    p.id = j.at("id").get<std::string>();
    const auto& x = j.at("x_obj");
    p.x_object.resize(Eigen::Index(x.size()), 3);
    for (size_t i = 0; i < x.size(); ++i)
      for (int c = 0; c < 3; ++c) p.x_object(Eigen::Index(i), c) = x[i][size_t(c)].get<double>();
    const auto& r = j.at("cam").at("R");
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) p.camera.R(i, c) = r[size_t(3 * i + c)].get<double>();
    const auto& tt = j.at("cam").at("T");
    p.camera.T << tt[0].get<double>(), tt[1].get<double>(), tt[2].get<double>();
    preds.push_back(std::move(p));
  }
  return preds;
}

// ---- evaluation against ground truth ----

struct EvalOptions {
  const JointRegressor* regressor = nullptr;  // defaults to identity (vertices as joints)
  double image_scale = 1.0;                   // model.scale of the producing model
};

// Per-instance visible reprojection error relative to the projected
// bounding-box diagonal of the visible keypoints.
inline double relative_reprojection_error(const Prediction& pred, const Instance& inst,
                                          double image_scale) {
  const Eigen::MatrixXd proj = image_scale * project_ortho(pred.x_object, pred.camera);
  double err = 0.0;
  Eigen::Index visible = 0;
  Eigen::RowVector2d lo(1e300, 1e300), hi(-1e300, -1e300);
  for (Eigen::Index k = 0; k < inst.keypoints.count(); ++k) {
    if (!inst.keypoints.z[k]) continue;
    err += (proj.row(k) - inst.keypoints.y.row(k)).norm();
    lo = lo.cwiseMin(inst.keypoints.y.row(k));
    hi = hi.cwiseMax(inst.keypoints.y.row(k));
    ++visible;
  }
  const double diag = (hi - lo).norm();
  if (visible == 0 || diag <= 0.0)
    throw Error("eval_degenerate", "instance " + inst.id + " has no visible extent");
  return err / double(visible) / diag;
}

inline EvalReport evaluate_predictions(const std::vector<Prediction>& preds,
                                       const std::vector<Instance>& dataset, const EvalOptions& opt) {
  if (preds.size() != dataset.size())
    throw Error("eval_shape", "prediction and dataset sizes differ");
  EvalReport report;
  double rep_rel_sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const Instance& inst = dataset[i];
    if (!inst.gt_vertices)
      throw Error("eval_no_gt", "instance " + inst.id + " carries no ground truth");
    InstanceEval ie;
    ie.id = inst.id;
    const Eigen::MatrixXd pred_cam = preds[i].camera_frame();
    ie.mpjpe = mpjpe(pred_cam, *inst.gt_vertices);
    if (opt.regressor) {
      ie.re = re_aligned(opt.regressor->joints(pred_cam), opt.regressor->joints(*inst.gt_vertices));
    } else {
      ie.re = re_aligned(pred_cam, *inst.gt_vertices);
    }
    ie.rep_rel = relative_reprojection_error(preds[i], inst, opt.image_scale);
    report.mpjpe += ie.mpjpe;
    report.re += ie.re;
    rep_rel_sum += ie.rep_rel;
    report.per_instance.push_back(std::move(ie));
  }
  const double n = double(preds.size());
  report.mpjpe /= n;
  report.re /= n;
  report.rep_rel = rep_rel_sum / n;
  return report;
}

// ---- checkpoint binding ----

inline Checkpoint to_checkpoint(const Model& model, const std::string& mesh_path) {
  Checkpoint ck;
  ck.variant = model.spec.variant;
  ck.m_parts = model.spec.has_parts() ? model.spec.m_parts : 0;
  ck.n_u = model.spec.n_u;
  ck.blend_shapes = model.spec.blend_shapes;
  ck.heteroscedastic = model.spec.heteroscedastic;
  ck.camera_scale = model.spec.camera_scale;
  ck.mesh_path = mesh_path;
  ck.mesh_hash = file_content_hash(mesh_path);
  ck.phi_cfg = make_phi_config(model.spec, model.vertex_count());
  ck.psi_cfg = make_psi_config(model.spec, model.vertex_count());
  ck.params = model.params;
  ck.batchnorm = model.bn;
  return ck;
}

// Rebuilds a model from a checkpoint plus the mesh it names. The spectral
// basis is recomputed (it is a pure function of the mesh).
inline Model model_from_checkpoint(const Checkpoint& ck, const ModelSpec& spec_overrides,
                                   TriMesh mesh) {
  ModelSpec spec = spec_overrides;
  spec.variant = ck.variant;
  spec.m_parts = std::max(ck.m_parts, 1);
  spec.n_u = ck.n_u;
  spec.blend_shapes = ck.blend_shapes;
  spec.heteroscedastic = ck.heteroscedastic;
  spec.camera_scale = ck.camera_scale;
  spec.mlp_width = ck.phi_cfg.width;
  spec.mlp_hidden = ck.phi_cfg.hidden;
  spec.mlp_blocks = ck.phi_cfg.blocks;
  spec.normalize_and_validate();

  Model model;
  model.spec = spec;
  model.basis = spectral_basis(mesh, spec.n_u);
  model.rings = build_one_rings(mesh);
  model.scale = 1.0 / bbox_diagonal(mesh);
  model.mesh = std::move(mesh);
  model.params = ck.params;
  model.bn = ck.batchnorm;
  return model;
}

inline PartModel part_model_of(const Model& model) {
  if (!model.spec.has_parts()) throw Error("variant", "model has no part segmentation");
  PartModel pm;
  pm.W = model.params.at("seg.W");
  pm.rest_logs = model.params.at("seg.rest_logs");
  pm.n_parts = model.spec.m_parts;
  pm.basis = model.basis;
  return pm;
}

}  // namespace dp3d
