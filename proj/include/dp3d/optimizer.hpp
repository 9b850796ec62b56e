#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/params.hpp"
#include "dp3d/rng.hpp"
#include "dp3d/tape.hpp"

namespace dp3d {

// A differentiable loss: given a tape with parameter leaves, build the graph
// and return the scalar root.
using LossFn = std::function<ad::Value(ad::Tape&, const ParamLeaves&)>;

inline ParamLeaves register_leaves(ad::Tape& tape, const ParamSet& params) {
  ParamLeaves leaves;
  for (const auto& e : params.entries())
    leaves[e.name] = e.trainable ? ad::leaf(tape, e.value) : ad::constant(tape, e.value);
  return leaves;
}

struct GradResult {
  double loss = 0.0;
  std::map<std::string, Eigen::MatrixXd> grads;  // one entry per trainable tensor
};

// Reverse-mode gradient of the loss w.r.t. every trainable tensor.
inline GradResult grad(const LossFn& loss_eval, const ParamSet& params) {
  ad::Tape tape;
  ParamLeaves leaves = register_leaves(tape, params);
  const ad::Value root = loss_eval(tape, leaves);
  tape.backward(root.id);

  GradResult result;
  result.loss = root.scalar();
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    const ad::Value v = leaves.at(e.name);
    Eigen::MatrixXd g = tape.has_grad(v.id)
                            ? tape.grad(v.id)
                            : Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols());
    if (!g.allFinite())
      throw Error("grad_nonfinite", "non-finite gradient for tensor '" + e.name + "'");
    result.grads[e.name] = std::move(g);
  }
  return result;
}

inline double eval_loss(const LossFn& loss_eval, const ParamSet& params) {
  ad::Tape tape;
  ParamLeaves leaves = register_leaves(tape, params);
  return loss_eval(tape, leaves).scalar();
}

struct GradCheckCoordinate {
  std::string tensor;
  Eigen::Index row = 0, col = 0;
  double analytic = 0.0, numeric = 0.0, rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  GradCheckCoordinate worst;
  int coordinates_checked = 0;
  bool passed = false;
  double tolerance = 0.0;
};

// Central finite differences per parameter coordinate; tensors larger than
// `max_coords_per_tensor` are subsampled (deterministically) down to that
// many coordinates.
inline GradCheckReport check_gradients(const LossFn& loss_eval, ParamSet params, double step,
                                       double tol, int max_coords_per_tensor = 200) {
  if (step <= 0.0) throw Error("gradcheck_step", "finite-difference step must be positive");
  const GradResult analytic = grad(loss_eval, params);

  GradCheckReport report;
  report.tolerance = tol;
  Rng pick(0x5eedc0de);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const Eigen::MatrixXd& g = analytic.grads.at(e.name);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> coords;
    const Eigen::Index total = e.value.size();
    if (total <= max_coords_per_tensor) {
      for (Eigen::Index i = 0; i < e.value.rows(); ++i)
        for (Eigen::Index j = 0; j < e.value.cols(); ++j) coords.emplace_back(i, j);
    } else {
      for (int n = 0; n < max_coords_per_tensor; ++n) {
        const Eigen::Index flat = Eigen::Index(pick.uniform_index(std::uint64_t(total)));
        coords.emplace_back(flat / e.value.cols(), flat % e.value.cols());
      }
    }
    for (const auto& [i, j] : coords) {
      const double saved = e.value(i, j);
      e.value(i, j) = saved + step;
      const double up = eval_loss(loss_eval, params);
      e.value(i, j) = saved - step;
      const double down = eval_loss(loss_eval, params);
      e.value(i, j) = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(numeric), std::abs(g(i, j)), 1e-8});
      const double rel = std::abs(numeric - g(i, j)) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {e.name, i, j, g(i, j), numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

struct OptimizerConfig {
  double learning_rate = 0.003;
  double momentum = 0.99;
  double weight_decay = 0.001;
  int epochs = 100;
  double lr_drop_factor = 10.0;
  double lr_drop_at_fraction = 0.8;
  int batch_size = 512;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate < 0.0) throw Error("config_invalid", "learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw Error("config_invalid", "momentum must be in [0,1)");
    if (batch_size < 1) throw Error("config_invalid", "batch_size must be >= 1");
    if (epochs < 0) throw Error("config_invalid", "epochs must be >= 0");
    if (lr_drop_factor <= 0.0) throw Error("config_invalid", "lr_drop_factor must be > 0");
    if (lr_drop_at_fraction < 0.0 || lr_drop_at_fraction > 1.0)
      throw Error("config_invalid", "lr_drop_at_fraction must be in [0,1]");
  }
};

struct LossBreakdown {
  double total = 0.0, rep = 0.0, canon = 0.0, arap = 0.0, entropy = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    total += o.total;
    rep += o.rep;
    canon += o.canon;
    arap += o.arap;
    entropy += o.entropy;
    return *this;
  }
  LossBreakdown scaled(double f) const { return {total * f, rep * f, canon * f, arap * f, entropy * f}; }
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown losses;
  double lr = 0.0;
};

// One training step's graph: scalar total plus the per-term breakdown for
// logging. `step_rng` carries the per-step randomness (canonicalization
// rotations); it is advanced deterministically by the trainer.
struct BatchGraph {
  ad::Value total;
  LossBreakdown values;
};
using BatchLossFn =
    std::function<BatchGraph(ad::Tape&, const ParamLeaves&, const std::vector<int>& batch, Rng& step_rng)>;

struct TrainResult {
  ParamSet params;
  std::vector<EpochRecord> history;
  bool diverged = false;
  int mutated_batchnorm_steps = 0;  // informational
};

// Minibatch SGD with momentum and L2 weight decay folded into the gradient:
// v <- momentum*v + (g + wd*p); p <- p - lr*v. The learning rate drops once,
// by lr_drop_factor, after lr_drop_at_fraction of the epochs.
using EpochCallback = std::function<void(int, const EpochRecord&, const ParamSet&)>;

inline TrainResult train(ParamSet params, int dataset_size, const BatchLossFn& batch_loss,
                         const OptimizerConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (dataset_size <= 0) throw Error("train_empty", "dataset is empty");

  std::map<std::string, Eigen::MatrixXd> velocity;
  for (const auto& e : params.entries())
    if (e.trainable) velocity[e.name] = Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols());

  Rng rng(cfg.seed);
  TrainResult result;
  ParamSet last_good = params;
  const int drop_epoch = int(std::ceil(cfg.lr_drop_at_fraction * cfg.epochs));

  std::vector<int> order(static_cast<size_t>(dataset_size));
  for (int i = 0; i < dataset_size; ++i) order[size_t(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        (epoch >= drop_epoch && cfg.epochs > 0) ? cfg.learning_rate / cfg.lr_drop_factor : cfg.learning_rate;

    // Fisher-Yates shuffle, deterministic in the seed.
    for (int i = dataset_size - 1; i > 0; --i) {
      const int j = int(rng.uniform_index(std::uint64_t(i + 1)));
      std::swap(order[size_t(i)], order[size_t(j)]);
    }

    // Batch ranges; a trailing singleton is folded into the previous batch
    // (training-mode batch norm needs >= 2 instances).
    std::vector<std::pair<int, int>> ranges;
    for (int start = 0; start < dataset_size; start += cfg.batch_size)
      ranges.emplace_back(start, std::min(cfg.batch_size, dataset_size - start));
    if (ranges.size() > 1 && ranges.back().second == 1) {
      ranges.pop_back();
      ranges.back().second += 1;
    }

    LossBreakdown epoch_sum;
    int instances_seen = 0;
    bool epoch_finite = true;
    for (const auto& [start, count] : ranges) {
      std::vector<int> batch(order.begin() + start, order.begin() + start + count);

      ad::Tape tape;
      ParamLeaves leaves = register_leaves(tape, params);
      Rng step_rng = rng.split(std::uint64_t(epoch) * 1000003u + std::uint64_t(start));
      const BatchGraph graph = batch_loss(tape, leaves, batch, step_rng);
      if (!std::isfinite(graph.values.total)) {
        epoch_finite = false;
        break;
      }
      tape.backward(graph.total.id);

      if (cfg.learning_rate != 0.0) {
        for (auto& e : params.entries()) {
          if (!e.trainable) continue;
          const ad::Value v = leaves.at(e.name);
          Eigen::MatrixXd g = tape.has_grad(v.id)
                                  ? tape.grad(v.id)
                                  : Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols());
          if (!g.allFinite()) {
            epoch_finite = false;
            break;
          }
          Eigen::MatrixXd& vel = velocity.at(e.name);
          const double wd = e.weight_decay ? cfg.weight_decay : 0.0;
          vel = cfg.momentum * vel + (g + wd * e.value);
          e.value -= lr * vel;
        }
        if (!epoch_finite) break;
      }
      epoch_sum += graph.values.scaled(double(count));
      instances_seen += count;
    }

    if (!epoch_finite) {
      result.diverged = true;
      params = last_good;
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.losses = instances_seen > 0 ? epoch_sum.scaled(1.0 / double(instances_seen)) : epoch_sum;
    rec.lr = lr;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec, params);
    last_good = params;
  }

  result.params = std::move(params);
  return result;
}

}  // namespace dp3d
