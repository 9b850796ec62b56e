#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <fstream>
#include <sstream>

#include "dp3d/pipeline.hpp"
#include "dp3d/primitives.hpp"

using namespace dp3d;

namespace {

ModelSpec tiny_spec(const std::string& variant = "parts") {
  ModelSpec spec;
  spec.variant = variant;
  spec.m_parts = 2;
  spec.n_u = 4;
  spec.mlp_width = 16;
  spec.mlp_hidden = 8;
  spec.mlp_blocks = 1;
  return spec;
}

std::vector<Instance> tiny_dataset(const LabeledMesh& lm, int n, unsigned seed = 3) {
  PoseSamplerConfig cfg;
  cfg.theta_max_deg = 30.0;
  Rng rng(seed);
  return synth_dataset(lm.mesh, lm.labels, cfg, n, rng);
}

}  // namespace

TEST(InitModel, PartsVariantShapes) {
  const TriMesh mesh = make_icosphere(1);
  const Model model = init_model(mesh, tiny_spec(), 1);
  EXPECT_EQ(model.params.at("seg.W").rows(), 4);
  EXPECT_EQ(model.params.at("seg.W").cols(), 2);
  EXPECT_EQ(model.params.at("seg.rest_logs").rows(), 2);
  EXPECT_TRUE(model.params.has("phi.in.w"));
  EXPECT_TRUE(model.params.has("psi.out.b"));
  EXPECT_FALSE(model.params.has("bs.coeffs"));
  EXPECT_EQ(model.spec.pose_row_dim(), 18);
  EXPECT_NEAR(model.scale, 1.0 / bbox_diagonal(mesh), 1e-15);
}

TEST(InitModel, NoPartsVariantShapes) {
  const TriMesh mesh = make_icosphere(1);
  ModelSpec spec = tiny_spec("no_parts_linear");
  const Model model = init_model(mesh, spec, 1);
  EXPECT_FALSE(model.params.has("seg.W"));
  EXPECT_TRUE(model.params.has("bs.coeffs"));
  EXPECT_EQ(model.params.at("bs.coeffs").rows(), 10 * 4);  // D defaults to 10
  EXPECT_EQ(model.spec.pose_row_dim(), 16);                // camera + alpha
}

TEST(InitModel, BlendshapeVariantShapes) {
  const TriMesh mesh = make_icosphere(1);
  const Model model = init_model(mesh, tiny_spec("parts_plus_blendshapes"), 1);
  EXPECT_TRUE(model.params.has("seg.W"));
  EXPECT_TRUE(model.params.has("bs.coeffs"));
  EXPECT_EQ(model.params.at("bs.coeffs").rows(), 5 * 4);  // D defaults to 5
  EXPECT_EQ(model.spec.pose_row_dim(), 18 + 5);
}

TEST(InitModel, HeteroscedasticRequiresParts) {
  ModelSpec spec = tiny_spec("no_parts_linear");
  spec.heteroscedastic = true;
  EXPECT_THROW(init_model(make_icosphere(1), spec, 1), Error);
}

TEST(TrainModel, RunsAndIsDeterministic) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 6);
  OptimizerConfig opt;
  opt.epochs = 3;
  opt.batch_size = 3;
  opt.learning_rate = 0.001;
  opt.seed = 11;

  const auto run = [&] {
    Model model = init_model(lm.mesh, tiny_spec(), 7);
    const TrainSummary summary = train_model(model, data, opt);
    return std::make_pair(std::move(model), summary);
  };
  auto [m1, s1] = run();
  auto [m2, s2] = run();
  EXPECT_FALSE(s1.diverged);
  ASSERT_EQ(s1.history.size(), 3u);
  for (size_t e = 0; e < 3; ++e)
    EXPECT_EQ(s1.history[e].losses.total, s2.history[e].losses.total) << "epoch " << e;
  for (const auto& entry : m1.params.entries())
    EXPECT_EQ(entry.value, m2.params.at(entry.name)) << entry.name;
  for (const auto& [name, row] : m1.bn) EXPECT_EQ(row, m2.bn.at(name)) << name;
  // parameters actually moved
  EXPECT_NE(m1.params.at("seg.W"), init_model(lm.mesh, tiny_spec(), 7).params.at("seg.W"));
}

TEST(TrainModel, EpochLossesAreFinite) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 4, 5);
  Model model = init_model(lm.mesh, tiny_spec("parts_plus_blendshapes"), 2);
  OptimizerConfig opt;
  opt.epochs = 2;
  opt.batch_size = 4;
  opt.learning_rate = 0.0005;
  const TrainSummary summary = train_model(model, data, opt);
  for (const auto& rec : summary.history) {
    EXPECT_TRUE(std::isfinite(rec.losses.total));
    EXPECT_TRUE(std::isfinite(rec.losses.rep));
    EXPECT_TRUE(std::isfinite(rec.losses.canon));
    EXPECT_TRUE(std::isfinite(rec.losses.arap));
    EXPECT_TRUE(std::isfinite(rec.losses.entropy));
    EXPECT_GE(rec.losses.entropy, 0.0);
    EXPECT_GE(rec.losses.arap, 0.0);
  }
}

TEST(TrainModel, HeteroscedasticVariantTrains) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 4, 6);
  ModelSpec spec = tiny_spec();
  spec.heteroscedastic = true;
  Model model = init_model(lm.mesh, spec, 2);
  OptimizerConfig opt;
  opt.epochs = 2;
  opt.batch_size = 4;
  opt.learning_rate = 0.0005;
  const TrainSummary summary = train_model(model, data, opt);
  EXPECT_FALSE(summary.diverged);
  // heteroscedastic reprojection may be negative (log-scale term)
  EXPECT_TRUE(std::isfinite(summary.history.back().losses.rep));
}

TEST(FitInstance, ReducesReprojectionError) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 3, 9);
  Model model = init_model(lm.mesh, tiny_spec(), 4);

  OptimizerConfig opt;
  opt.epochs = 60;
  opt.batch_size = 1;
  opt.learning_rate = 0.02;
  opt.momentum = 0.9;
  opt.weight_decay = 0.0;
  opt.lr_drop_at_fraction = 1.0;
  const FitResult fit = fit_instance(model, data[0], opt);
  ASSERT_EQ(fit.history.size(), 60u);
  const double first = fit.history.front().losses.rep;
  const double last = fit.history.back().losses.rep;
  EXPECT_LT(last, 0.75 * first);
  EXPECT_EQ(fit.pose.twists.rows(), 3);  // camera + 2 parts
  EXPECT_TRUE(fit.x_object.allFinite());
}

TEST(Predict, ShapesAndCameraFrame) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 2, 13);
  const Model model = init_model(lm.mesh, tiny_spec(), 5);
  const Prediction pred = predict_instance(model, data[0]);
  EXPECT_EQ(pred.x_object.rows(), lm.mesh.vertex_count());
  EXPECT_TRUE(pred.camera.is_valid(1e-6));
  EXPECT_EQ(pred.camera_frame().rows(), lm.mesh.vertex_count());
}

TEST(Evaluate, PerfectPredictionsScoreZero) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const auto data = tiny_dataset(lm, 4, 17);
  std::vector<Prediction> preds;
  for (const auto& inst : data) {
    Prediction p;
    p.id = inst.id;
    p.x_object = *inst.gt_vertices;  // camera frame doubles as object frame
    p.camera = RigidTransform::identity();
    preds.push_back(std::move(p));
  }
  EvalOptions opt;
  opt.image_scale = 1.0 / bbox_diagonal(lm.mesh);
  const EvalReport report = evaluate_predictions(preds, data, opt);
  EXPECT_LT(report.mpjpe, 1e-10);
  EXPECT_LT(report.re, 1e-9);
  EXPECT_LT(report.rep_rel, 1e-10);
  EXPECT_EQ(report.per_instance.size(), 4u);
}

TEST(Checkpoint, RoundTripPreservesModel) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const std::string mesh_path = std::string(::testing::TempDir()) + "cyl.obj";
  export_mesh(lm.mesh, nullptr, mesh_path);
  const TriMesh mesh = load_mesh(mesh_path);

  Model model = init_model(mesh, tiny_spec(), 21);
  const std::string ck_path = std::string(::testing::TempDir()) + "ck.json";
  save_checkpoint(to_checkpoint(model, mesh_path), ck_path);

  const Checkpoint ck = load_checkpoint(ck_path);
  EXPECT_EQ(ck.mesh_hash, file_content_hash(mesh_path));
  Model reloaded = model_from_checkpoint(ck, ModelSpec{}, load_mesh(mesh_path));
  ASSERT_EQ(reloaded.params.size(), model.params.size());
  for (const auto& e : model.params.entries()) EXPECT_EQ(reloaded.params.at(e.name), e.value) << e.name;
  for (const auto& [name, row] : model.bn) EXPECT_EQ(reloaded.bn.at(name), row) << name;
  EXPECT_EQ(reloaded.spec.variant, "parts");
  EXPECT_EQ(reloaded.spec.m_parts, 2);

  // identical predictions after reload
  const auto data = tiny_dataset(lm, 1, 23);
  const Prediction a = predict_instance(model, data[0]);
  const Prediction b = predict_instance(reloaded, data[0]);
  EXPECT_EQ(a.x_object, b.x_object);
}

TEST(Checkpoint, SaveIsByteDeterministic) {
  const LabeledMesh lm = make_cylinder_chain(8, 7, 2);
  const std::string mesh_path = std::string(::testing::TempDir()) + "cyl2.obj";
  export_mesh(lm.mesh, nullptr, mesh_path);
  Model model = init_model(load_mesh(mesh_path), tiny_spec(), 29);
  const std::string p1 = std::string(::testing::TempDir()) + "ck1.json";
  const std::string p2 = std::string(::testing::TempDir()) + "ck2.json";
  save_checkpoint(to_checkpoint(model, mesh_path), p1);
  save_checkpoint(to_checkpoint(model, mesh_path), p2);
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  EXPECT_EQ(s1.str(), s2.str());
}

TEST(PredictionsFile, RoundTrip) {
  Rng rng(31);
  std::vector<Prediction> preds(2);
  for (int i = 0; i < 2; ++i) {
    preds[size_t(i)].id = "inst_" + std::to_string(i);
    preds[size_t(i)].x_object.resize(5, 3);
    for (Eigen::Index j = 0; j < 15; ++j) preds[size_t(i)].x_object(j) = rng.gaussian();
    preds[size_t(i)].camera = random_rotation(rng);
  }
  const std::string path = std::string(::testing::TempDir()) + "preds.jsonl";
  write_predictions(path, preds);
  const auto loaded = read_predictions(path);
  ASSERT_EQ(loaded.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(loaded[i].id, preds[i].id);
    EXPECT_LT((loaded[i].x_object - preds[i].x_object).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((loaded[i].camera.R - preds[i].camera.R).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(PartModelOf, MatchesParams) {
  const Model model = init_model(make_icosphere(1), tiny_spec(), 37);
  const PartModel pm = part_model_of(model);
  EXPECT_EQ(pm.W, model.params.at("seg.W"));
  EXPECT_EQ(pm.n_parts, 2);
  const Eigen::MatrixXd p = part_segmentation(pm);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
}
