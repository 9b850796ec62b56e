#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/se3.hpp"

namespace dp3d::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode differentiation tape over dense matrices. Operations record
// their backward transfer as a closure; backward() replays them in reverse.
// Matrix-level nodes keep the graph small (tens of nodes per instance) so
// the runtime stays inside Eigen kernels rather than tape bookkeeping.
class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;  // empty until touched
    bool needs_grad = false;
    std::function<void(Tape&)> backward;  // empty for leaves/constants
  };

  int push(Mat value, bool needs_grad, std::function<void(Tape&)> backward = {}) {
    nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(backward)});
    return int(nodes_.size()) - 1;
  }

  int next_id() const { return int(nodes_.size()); }

  const Mat& value(int id) const { return nodes_[size_t(id)].value; }
  bool needs_grad(int id) const { return nodes_[size_t(id)].needs_grad; }

  // Accumulation target; allocates zeros on first touch.
  Mat& grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[size_t(id)].grad.size() != 0; }

  void backward(int root) {
    if (value(root).size() != 1)
      throw Error("tape_backward_nonscalar", "backward root must be a 1x1 value");
    grad(root)(0, 0) = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.backward && n.grad.size() != 0) n.backward(*this);
    }
  }

  size_t size() const { return nodes_.size(); }
  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  std::vector<Node> nodes_;
};

struct Value {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& val() const { return tape->value(id); }
  bool needs_grad() const { return tape->needs_grad(id); }
  double scalar() const { return val()(0, 0); }
};

inline Value leaf(Tape& t, Mat value) { return {&t, t.push(std::move(value), true)}; }
inline Value constant(Tape& t, Mat value) { return {&t, t.push(std::move(value), false)}; }
inline Value constant_scalar(Tape& t, double v) { return constant(t, Mat::Constant(1, 1, v)); }

namespace detail {
inline Tape& same_tape(const Value& a, const Value& b) {
  if (a.tape != b.tape) throw Error("tape_mismatch", "operands live on different tapes");
  return *a.tape;
}
}  // namespace detail

// ---- elementwise / linear ----

inline Value add(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g;
      if (tp.needs_grad(ib)) tp.grad(ib) += g;
    };
  return {&t, t.push(a.val() + b.val(), ng, std::move(bw))};
}

inline Value sub(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g;
      if (tp.needs_grad(ib)) tp.grad(ib) -= g;
    };
  return {&t, t.push(a.val() - b.val(), ng, std::move(bw))};
}

inline Value cmul(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
      if (tp.needs_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
    };
  return {&t, t.push(a.val().cwiseProduct(b.val()), ng, std::move(bw))};
}

inline Value cdiv(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat g = tp.grad(out);
      const Mat& bv = tp.value(ib);
      if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseQuotient(bv);
      if (tp.needs_grad(ib))
        tp.grad(ib) -= g.cwiseProduct(tp.value(ia)).cwiseQuotient(bv.cwiseProduct(bv));
    };
  return {&t, t.push(a.val().cwiseQuotient(b.val()), ng, std::move(bw))};
}

inline Value scale(Value a, double c) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng) bw = [out, ia, c](Tape& tp) { tp.grad(ia) += c * tp.grad(out); };
  return {&t, t.push(a.val() * c, ng, std::move(bw))};
}

inline Value add_scalar(Value a, double c) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng) bw = [out, ia](Tape& tp) { tp.grad(ia) += tp.grad(out); };
  return {&t, t.push((a.val().array() + c).matrix(), ng, std::move(bw))};
}

inline Value neg(Value a) { return scale(a, -1.0); }

// a * s with s a 1x1 value on the tape.
inline Value scale_by(Value a, Value s) {
  Tape& t = detail::same_tape(a, s);
  const bool ng = a.needs_grad() || s.needs_grad();
  const int out = t.next_id(), ia = a.id, is = s.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, is](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g * tp.value(is)(0, 0);
      if (tp.needs_grad(is)) tp.grad(is)(0, 0) += g.cwiseProduct(tp.value(ia)).sum();
    };
  return {&t, t.push(a.val() * s.val()(0, 0), ng, std::move(bw))};
}

inline Value matmul(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g * tp.value(ib).transpose();
      if (tp.needs_grad(ib)) tp.grad(ib) += tp.value(ia).transpose() * g;
    };
  return {&t, t.push(a.val() * b.val(), ng, std::move(bw))};
}

inline Value transpose(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng) bw = [out, ia](Tape& tp) { tp.grad(ia) += tp.grad(out).transpose(); };
  return {&t, t.push(a.val().transpose(), ng, std::move(bw))};
}

// ---- reductions / shaping ----

inline Value sum(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      tp.grad(ia).array() += tp.grad(out)(0, 0);
    };
  return {&t, t.push(Mat::Constant(1, 1, a.val().sum()), ng, std::move(bw))};
}

inline Value mean(Value a) { return scale(sum(a), 1.0 / double(a.val().size())); }

inline Value slice_rows(Value a, Eigen::Index r0, Eigen::Index n) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, r0, n](Tape& tp) { tp.grad(ia).middleRows(r0, n) += tp.grad(out); };
  return {&t, t.push(a.val().middleRows(r0, n), ng, std::move(bw))};
}

inline Value slice_cols(Value a, Eigen::Index c0, Eigen::Index n) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, c0, n](Tape& tp) { tp.grad(ia).middleCols(c0, n) += tp.grad(out); };
  return {&t, t.push(a.val().middleCols(c0, n), ng, std::move(bw))};
}

inline Value hcat(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  const Eigen::Index ca = a.val().cols();
  Mat v(a.val().rows(), ca + b.val().cols());
  v << a.val(), b.val();
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib, ca](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g.leftCols(ca);
      if (tp.needs_grad(ib)) tp.grad(ib) += g.rightCols(g.cols() - ca);
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

inline Value vcat(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  const Eigen::Index ra = a.val().rows();
  Mat v(ra + b.val().rows(), a.val().cols());
  v << a.val(), b.val();
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib, ra](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g.topRows(ra);
      if (tp.needs_grad(ib)) tp.grad(ib) += g.bottomRows(g.rows() - ra);
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// Stacks rows of equally-wide inputs (the batched-network input assembly).
inline Value vstack(const std::vector<Value>& parts) {
  if (parts.empty()) throw Error("tape_vstack_empty", "vstack needs at least one input");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = 0;
  bool ng = false;
  for (const Value& p : parts) {
    detail::same_tape(parts[0], p);
    rows += p.val().rows();
    ng = ng || p.needs_grad();
  }
  Mat v(rows, parts[0].val().cols());
  std::vector<std::pair<int, Eigen::Index>> spans;  // (node id, first row)
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    v.middleRows(at, p.val().rows()) = p.val();
    spans.emplace_back(p.id, at);
    at += p.val().rows();
  }
  const int out = t.next_id();
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, spans](Tape& tp) {
      const Mat& g = tp.grad(out);
      for (const auto& [id, first] : spans)
        if (tp.needs_grad(id)) tp.grad(id) += g.middleRows(first, tp.value(id).rows());
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

inline Value reshape(Value a, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  Mat v = a.val();
  // row-major reinterpretation
  Mat rm = Mat::Zero(rows, cols);
  {
    Eigen::Index idx = 0;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        rm(idx / cols, idx % cols) = v(i, j);
        ++idx;
      }
  }
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, cols](Tape& tp) {
      const Mat& g = tp.grad(out);
      Mat& ga = tp.grad(ia);
      Eigen::Index idx = 0;
      for (Eigen::Index i = 0; i < ga.rows(); ++i)
        for (Eigen::Index j = 0; j < ga.cols(); ++j) {
          ga(i, j) += g(idx / cols, idx % cols);
          ++idx;
        }
    };
  return {&t, t.push(std::move(rm), ng, std::move(bw))};
}

// ---- broadcasts ----

// A (n x m) + b (1 x m) broadcast over rows.
inline Value add_rowvec(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ia)) tp.grad(ia) += g;
      if (tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
    };
  return {&t, t.push(a.val().rowwise() + Eigen::RowVectorXd(b.val().row(0)), ng, std::move(bw))};
}

// A (n x m) * b (1 x m) broadcast over rows.
inline Value mul_rowvec(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  const bool ng = a.needs_grad() || b.needs_grad();
  const int out = t.next_id(), ia = a.id, ib = b.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, ib](Tape& tp) {
      const Mat& g = tp.grad(out);
      const Eigen::RowVectorXd bv = tp.value(ib).row(0);
      if (tp.needs_grad(ia)) tp.grad(ia) += (g.array().rowwise() * bv.array()).matrix();
      if (tp.needs_grad(ib))
        tp.grad(ib) += (g.cwiseProduct(tp.value(ia))).colwise().sum();
    };
  Mat v = (a.val().array().rowwise() * Eigen::RowVectorXd(b.val().row(0)).array()).matrix();
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// A (n x m) with every row scaled by s (n x 1).
inline Value scale_rows(Value a, Value s) {
  Tape& t = detail::same_tape(a, s);
  const bool ng = a.needs_grad() || s.needs_grad();
  const int out = t.next_id(), ia = a.id, is = s.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, is](Tape& tp) {
      const Mat& g = tp.grad(out);
      const Eigen::VectorXd sv = tp.value(is).col(0);
      if (tp.needs_grad(ia)) tp.grad(ia) += (g.array().colwise() * sv.array()).matrix();
      if (tp.needs_grad(is))
        tp.grad(is) += (g.cwiseProduct(tp.value(ia))).rowwise().sum();
    };
  Mat v = (a.val().array().colwise() * Eigen::VectorXd(s.val().col(0)).array()).matrix();
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// ---- nonlinearities ----

inline Value relu(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      const Mat mask = (tp.value(ia).array() > 0.0).cast<double>();
      tp.grad(ia) += tp.grad(out).cwiseProduct(mask);
    };
  return {&t, t.push(a.val().cwiseMax(0.0), ng, std::move(bw))};
}

inline Value softplus(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  Mat v = a.val().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      const Mat sig = tp.value(ia).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      tp.grad(ia) += tp.grad(out).cwiseProduct(sig);
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

inline Value log(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      tp.grad(ia) += tp.grad(out).cwiseQuotient(tp.value(ia));
    };
  return {&t, t.push(a.val().array().log().matrix(), ng, std::move(bw))};
}

inline Value exp(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      tp.grad(ia) += tp.grad(out).cwiseProduct(tp.value(out));
    };
  return {&t, t.push(a.val().array().exp().matrix(), ng, std::move(bw))};
}

// x log x with the continuous extension 0 log 0 = 0.
inline Value xlogx(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  Mat v = a.val().unaryExpr([](double x) { return x > 0.0 ? x * std::log(x) : 0.0; });
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      const Mat d = tp.value(ia).unaryExpr([](double x) { return x > 0.0 ? std::log(x) + 1.0 : 0.0; });
      tp.grad(ia) += tp.grad(out).cwiseProduct(d);
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

inline Value cwise_max_scalar(Value a, double floor_value) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, floor_value](Tape& tp) {
      const Mat mask = (tp.value(ia).array() > floor_value).cast<double>();
      tp.grad(ia) += tp.grad(out).cwiseProduct(mask);
    };
  return {&t, t.push(a.val().cwiseMax(floor_value), ng, std::move(bw))};
}

// Softmax along each row (shift-stabilized).
inline Value rowwise_softmax(Value a) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  Mat v = a.val();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::RowVectorXd row = v.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    v.row(i) = row / row.sum();
  }
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia](Tape& tp) {
      const Mat& p = tp.value(out);
      const Mat& g = tp.grad(out);
      Mat& ga = tp.grad(ia);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double dot = g.row(i).dot(p.row(i));
        ga.row(i) += ((g.row(i).array() - dot) * p.row(i).array()).matrix();
      }
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// Row-wise smooth robust penalty of the row norm:
// f_i = eps * (sqrt(1 + |row_i|^2 / eps^2) - 1). Returns n x 1.
inline Value pseudo_huber_rownorm(Value a, double eps) {
  Tape& t = *a.tape;
  const bool ng = a.needs_grad();
  const int out = t.next_id(), ia = a.id;
  const Mat& x = a.val();
  Mat v(x.rows(), 1);
  Mat w(x.rows(), 1);  // d f / d (row element) shared factor: 1 / (eps * sqrt(1 + s/eps^2))
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = x.row(i).squaredNorm();
    const double root = std::sqrt(1.0 + s / (eps * eps));
    v(i, 0) = eps * (root - 1.0);
    w(i, 0) = 1.0 / (eps * root);
  }
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ia, w](Tape& tp) {
      const Mat& g = tp.grad(out);  // n x 1
      const Mat& x = tp.value(ia);
      tp.grad(ia) += (x.array().colwise() * (g.col(0).cwiseProduct(w.col(0))).array()).matrix();
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// ---- batch normalization ----

// Training-mode batch norm over the batch (row) dimension. batch_mean /
// batch_var report the statistics used, for running-average updates.
inline Value batchnorm_train(Value x, Value gamma, Value beta, double eps,
                             Eigen::RowVectorXd* batch_mean = nullptr,
                             Eigen::RowVectorXd* batch_var = nullptr) {
  Tape& t = detail::same_tape(x, gamma);
  detail::same_tape(gamma, beta);
  const Eigen::Index n = x.val().rows();
  if (n < 2) throw Error("batchnorm_batch", "training-mode batch norm needs a batch of at least 2");
  const Eigen::RowVectorXd mu = x.val().colwise().mean();
  Mat centered = x.val().rowwise() - mu;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Mat xhat = (centered.array().rowwise() * inv_std.array()).matrix();
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;

  Mat v = ((xhat.array().rowwise() * Eigen::RowVectorXd(gamma.val().row(0)).array()).rowwise() +
           Eigen::RowVectorXd(beta.val().row(0)).array())
              .matrix();
  const bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  const int out = t.next_id(), ix = x.id, ig = gamma.id, ibta = beta.id;
  std::function<void(Tape&)> bw;
  if (ng)
    bw = [out, ix, ig, ibta, xhat, inv_std, n](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.needs_grad(ig)) tp.grad(ig) += (g.cwiseProduct(xhat)).colwise().sum();
      if (tp.needs_grad(ibta)) tp.grad(ibta) += g.colwise().sum();
      if (tp.needs_grad(ix)) {
        const Eigen::RowVectorXd gamma_v = tp.value(ig).row(0);
        Mat dxhat = (g.array().rowwise() * gamma_v.array()).matrix();
        const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.cwiseProduct(xhat)).colwise().sum();
        Mat dx = double(n) * dxhat;
        dx.rowwise() -= sum_dxhat;
        dx -= (xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
        dx.array().rowwise() *= (inv_std / double(n)).array();
        tp.grad(ix) += dx;
      }
    };
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

// ---- SE(3) exponential ----

// h (1 x 6) -> 4 x 3 matrix [R; T] with R row-acting. Backward contracts the
// upstream gradient with the exact 12 x 6 Jacobian.
inline Value se3_exp_op(Value h) {
  Tape& t = *h.tape;
  const bool ng = h.needs_grad();
  const int out = t.next_id(), ih = h.id;
  const TwistVector tw = TwistVector::from_row(h.val());
  const RigidTransform g = se3_exp(tw);
  Mat v(4, 3);
  v.topRows(3) = g.R;
  v.row(3) = g.T;
  std::function<void(Tape&)> bw;
  if (ng) {
    const Eigen::Matrix<double, 12, 6> J = se3_exp_jacobian(tw);
    bw = [out, ih, J](Tape& tp) {
      const Mat& g = tp.grad(out);  // 4 x 3
      Eigen::Matrix<double, 1, 12> flat;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) flat[3 * i + j] = g(i, j);
      for (int j = 0; j < 3; ++j) flat[9 + j] = g(3, j);
      tp.grad(ih) += flat * J;
    };
  }
  return {&t, t.push(std::move(v), ng, std::move(bw))};
}

}  // namespace dp3d::ad
