#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace plad::ag {

/// One entry of the tape. Matrices are row-major; scalars are [1,1].
struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first backward touch
  bool requires_grad = false;
  bool backward_ran = false;  // set on a node used as a backward root
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // scatters this->grad into parents

  int size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

using NodeRef = std::shared_ptr<Node>;

/// Value-semantics handle to a tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodeRef n) : node_(std::move(n)) {}

  static Tensor constant(int rows, int cols, std::vector<double> v);
  static Tensor scalar(double v);
  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  /// Leaf with requires_grad set; the unit the optimizer updates.
  static Tensor param(int rows, int cols, std::vector<double> v);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  int size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& value() const { return node_->value; }
  /// Mutable access for optimizers and initialization; leaves only.
  std::vector<double>& raw_value() { return node_->value; }
  const std::vector<double>& grad() const;
  std::vector<double>& raw_grad() { node_->ensure_grad(); return node_->grad; }

  double item() const;
  void zero_grad() { if (node_) node_->grad.assign(node_->value.size(), 0.0); }

  NodeRef node() const { return node_; }

 private:
  NodeRef node_;
};

/// Reverse pass from a scalar root. Every requires_grad tensor reachable from
/// `loss` accumulates its total derivative. Calling twice on the same root
/// without rebuilding the graph throws.
void backward(const Tensor& loss);

// ---- differentiable primitives ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
/// a + row vector b broadcast over rows of a.
Tensor add_rowvec(const Tensor& a, const Tensor& b);
/// s * a + t, elementwise.
Tensor affine(const Tensor& a, double s, double t);
inline Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor take_rows(const Tensor& a, int start, int count);
Tensor softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
/// Elementwise a^c for a > 0.
Tensor powc(const Tensor& a, double c);
/// Clamp with pass-through gradient strictly inside (lo, hi); the clamped
/// (inactive) branch gets zero gradient, including at the kink itself.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Row-wise L2 normalization. Zero rows map to zero rows with zero gradient
/// and raise the `zero_row` flag when a flag pointer is supplied.
Tensor l2_normalize_rows(const Tensor& a, bool* zero_row = nullptr);
/// Cosine similarity of two equally sized tensors viewed as flat vectors.
Tensor cosine_sim(const Tensor& a, const Tensor& b);
/// Max over groups of `group` consecutive rows; gradient routes to the argmax
/// entry only (lowest row index on ties).
Tensor maxpool_rows(const Tensor& a, int group);
Tensor max_all(const Tensor& a);
/// Mean of the k largest entries (ties resolved toward lower flat index).
Tensor topk_mean(const Tensor& a, int k);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Fixed sparse row combination: out[i] = sum_j w[i][j] * x[index[i][j], 0].
/// Used for patch-to-point score interpolation; the map is a constant.
struct SparseMap {
  int out_rows = 0;
  std::vector<std::vector<std::pair<int, double>>> rows;
};
Tensor sparse_combine(const SparseMap& map, const Tensor& x);

/// Multi-head scaled dot-product attention over one sequence.
/// q, k, v: [T, d] with d divisible by heads. The forward pass accumulates
/// softmax denominators and value sums in a canonical order (sorted by score
/// then value row), so the result is bitwise invariant to reordering tokens
/// together with their rows.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int heads);

/// Max over elementwise relative error |fd - analytic| / max(|fd|, |analytic|, 1e-8)
/// between central finite differences of `f` and the gradients produced by one
/// backward pass. `f` must rebuild its graph from `params` on every call.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double h = 1e-5);

}  // namespace plad::ag
