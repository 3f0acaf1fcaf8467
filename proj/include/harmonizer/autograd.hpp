#pragma once

#include "harmonizer/tensor.hpp"

#include <deque>
#include <functional>
#include <vector>

namespace harmonizer::ag {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  /// Accumulated gradient; zero-sized if nothing flowed into this node.
  const Mat& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep is a valid topological order.
class Tape {
 public:
  Var leaf(Mat value, bool requires_grad);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and sweeps backwards.
  void backward(Var out);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  using BackwardFn = std::function<void(const Mat& out_grad)>;
  Var push(Mat value, bool requires_grad, BackwardFn fn);
  /// Gradient buffer of `id`, zero-initialised on first access.
  Mat& grad_buffer(int id);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x C row vector to every row.
Var add_row(Var a, Var row);
Var gelu(Var a);
Var relu(Var a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);
/// Gradient blocked.
Var detach(Var a);

/// Row-wise layer normalisation with affine gamma/beta (1 x C).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Generic gather: out(flat i) = in(flat index[i]), or 0 when index[i] < 0.
/// Backward scatter-adds. Used for patch crops, space-to-depth and im2col.
Var gather(Var x, const std::vector<int>& index, int rows, int cols);

/// Multi-head self attention on a packed (N x 3D) [q | k | v] matrix.
Var self_attention(Var qkv, int heads);

/// Per-token attention across frames: token i of `q` (N x D) attends over
/// token i of every packed [k | v] matrix (N x 2D) in `kv`.
Var frame_attention(Var q, const std::vector<Var>& kv, int heads);

// Reductions producing 1x1 values.
Var sum(Var a);
Var mean_square(Var a);
Var sum_square(Var a);
/// sum_i w_i * ||row_i||^2 / normaliser
Var weighted_row_square(Var a, const std::vector<double>& row_weight, double normaliser);

}  // namespace harmonizer::ag
