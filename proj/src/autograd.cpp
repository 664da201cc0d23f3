#include "plad/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <unordered_set>

namespace plad::ag {

namespace {

NodeRef make_node(int rows, int cols) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.rows() == b.rows() && a.cols() == b.cols(),
        std::string(op) + ": shape mismatch");
}

// C[m,n] += A[m,k] * B[k,n]; the only gemm kernel, ikj order so the inner
// loop is a pure elementwise update and vectorizes without reassociation.
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double ap = arow[p];
      if (ap == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

std::vector<double> transpose_buf(const double* a, int rows, int cols) {
  std::vector<double> t(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
  return t;
}

Tensor finish(NodeRef n, std::vector<NodeRef> parents,
              std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// exp for arguments in (-inf, ~700]: Cody-Waite reduction plus a degree-11
// Taylor polynomial (max relative error around 1e-14). Pure arithmetic, so
// the compiler can inline and vectorize it; libm's exp stalls badly when
// interleaved with the sorting the attention op does, and pinning the exact
// bit pattern here keeps results independent of the libm build.
inline double detexp(double x) {
  if (x < -700.0) return 0.0;  // true value is below 1e-304; vanishes in any sum
  const double log2e = 1.4426950408889634074;
  const double ln2hi = 0.693147180369123816490;
  const double ln2lo = 1.90821492927058770002e-10;
  const double shift = 6755399441055744.0;  // 1.5 * 2^52, round-to-nearest trick
  double kd = x * log2e + shift;
  const long long ki = static_cast<long long>((kd - shift));
  kd -= shift;
  const double r = (x - kd * ln2hi) - kd * ln2lo;
  double p = 1.0 / 39916800.0;  // 1/11!
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  uint64_t bits = static_cast<uint64_t>(1023 + ki) << 52;
  double scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

}  // namespace

Tensor Tensor::constant(int rows, int cols, std::vector<double> v) {
  check(static_cast<int>(v.size()) == rows * cols, "constant: value size mismatch");
  auto n = make_node(rows, cols);
  n->value = std::move(v);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return constant(1, 1, {v}); }

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::param(int rows, int cols, std::vector<double> v) {
  Tensor t = constant(rows, cols, std::move(v));
  t.node()->requires_grad = true;
  return t;
}

const std::vector<double>& Tensor::grad() const {
  check(!node_->grad.empty(), "grad: no gradient recorded (run backward first)");
  return node_->grad;
}

double Tensor::item() const {
  check(size() == 1, "item: tensor is not scalar");
  return node_->value[0];
}

void backward(const Tensor& loss) {
  check(loss.defined() && loss.size() == 1, "backward: loss must be scalar");
  NodeRef root = loss.node();
  if (root->backward_ran)
    throw std::runtime_error("backward: already ran on this root; rebuild the graph");
  root->backward_ran = true;
  if (!root->requires_grad) return;  // constant loss, nothing to do

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  auto out = make_node(a.rows(), b.cols());
  gemm_nn_acc(a.value().data(), b.value().data(), out->value.data(), a.rows(),
              a.cols(), b.cols());
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn](Node& n) {
    const int m = an->rows, k = an->cols, c = bn->cols;
    if (an->requires_grad) {
      an->ensure_grad();  // dA += dC * B^T
      auto bt = transpose_buf(bn->value.data(), k, c);
      gemm_nn_acc(n.grad.data(), bt.data(), an->grad.data(), m, c, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();  // dB += A^T * dC
      auto at = transpose_buf(an->value.data(), m, k);
      gemm_nn_acc(at.data(), n.grad.data(), bn->grad.data(), k, m, c);
    }
  });
}

Tensor transpose(const Tensor& a) {
  auto out = make_node(a.cols(), a.rows());
  out->value = transpose_buf(a.value().data(), a.rows(), a.cols());
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    auto gt = transpose_buf(n.grad.data(), n.rows, n.cols);
    for (size_t i = 0; i < gt.size(); ++i) an->grad[i] += gt[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out->value[i] = a.value()[i] + b.value()[i];
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn](Node& n) {
    for (const NodeRef& p : {an, bn}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  check(b.rows() == 1 && b.cols() == a.cols(), "add_rowvec: bad row vector");
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out->value[static_cast<size_t>(i) * a.cols() + j] =
          a.value()[static_cast<size_t>(i) * a.cols() + j] + b.value()[j];
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < n.rows; ++i)
        for (int j = 0; j < n.cols; ++j)
          bn->grad[j] += n.grad[static_cast<size_t>(i) * n.cols + j];
    }
  });
}

Tensor affine(const Tensor& a, double s, double t) {
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out->value[i] = s * a.value()[i] + t;
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, s](Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += s * n.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out->value[i] = a.value()[i] * b.value()[i];
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out->value[i] = a.value()[i] / b.value()[i];
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        bn->grad[i] -= n.grad[i] * n.value[i] / bn->value[i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  int rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    check(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  auto out = make_node(rows, cols);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < rows; ++i)
      std::memcpy(out->value.data() + static_cast<size_t>(i) * cols + off,
                  p.value().data() + static_cast<size_t>(i) * p.cols(),
                  sizeof(double) * p.cols());
    off += p.cols();
  }
  std::vector<NodeRef> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  return finish(std::move(out), ps, [ps](Node& n) {
    int off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < p->rows; ++i)
          for (int j = 0; j < p->cols; ++j)
            p->grad[static_cast<size_t>(i) * p->cols + j] +=
                n.grad[static_cast<size_t>(i) * n.cols + off + j];
      }
      off += p->cols;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  int cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) {
    check(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  auto out = make_node(rows, cols);
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out->value.data() + off, p.value().data(), sizeof(double) * p.size());
    off += p.size();
  }
  std::vector<NodeRef> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  return finish(std::move(out), ps, [ps](Node& n) {
    size_t off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < p->size(); ++i) p->grad[i] += n.grad[off + i];
      }
      off += p->size();
    }
  });
}

Tensor take_rows(const Tensor& a, int start, int count) {
  check(start >= 0 && count >= 1 && start + count <= a.rows(), "take_rows: range");
  auto out = make_node(count, a.cols());
  std::memcpy(out->value.data(),
              a.value().data() + static_cast<size_t>(start) * a.cols(),
              sizeof(double) * out->value.size());
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, start](Node& n) {
    an->ensure_grad();
    double* dst = an->grad.data() + static_cast<size_t>(start) * n.cols;
    for (size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

Tensor softmax_rows(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* x = a.value().data() + static_cast<size_t>(i) * c;
    double* y = out->value.data() + static_cast<size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = detexp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= z;
  }
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    const int c = n.cols;
    for (int i = 0; i < n.rows; ++i) {
      const double* y = n.value.data() + static_cast<size_t>(i) * c;
      const double* dy = n.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += y[j] * dy[j];
      double* dx = an->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  auto out = make_node(a.rows(), 1);
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* x = a.value().data() + static_cast<size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += detexp(x[j] - mx);
    out->value[i] = mx + std::log(z);
  }
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    const int c = an->cols;
    for (int i = 0; i < n.rows; ++i) {
      const double* x = an->value.data() + static_cast<size_t>(i) * c;
      double* dx = an->grad.data() + static_cast<size_t>(i) * c;
      const double lse = n.value[i], g = n.grad[i];
      for (int j = 0; j < c; ++j) dx[j] += g * detexp(x[j] - lse);
    }
  });
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double eps) {
  const int c = a.cols();
  check(gain.size() == c && bias.size() == c, "layer_norm: gain/bias size");
  auto out = make_node(a.rows(), c);
  // Per-row mean/inv-std cached for backward.
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(a.rows()) * 2);
  for (int i = 0; i < a.rows(); ++i) {
    const double* x = a.value().data() + static_cast<size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += x[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= c;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * i] = mu;
    (*stats)[2 * i + 1] = istd;
    double* y = out->value.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j)
      y[j] = (x[j] - mu) * istd * gain.value()[j] + bias.value()[j];
  }
  NodeRef an = a.node(), gn = gain.node(), bn = bias.node();
  return finish(std::move(out), {an, gn, bn}, [an, gn, bn, stats](Node& n) {
    const int c = n.cols;
    for (int i = 0; i < n.rows; ++i) {
      const double mu = (*stats)[2 * i], istd = (*stats)[2 * i + 1];
      const double* x = an->value.data() + static_cast<size_t>(i) * c;
      const double* dy = n.grad.data() + static_cast<size_t>(i) * c;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < c; ++j) gn->grad[j] += dy[j] * (x[j] - mu) * istd;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < c; ++j) bn->grad[j] += dy[j];
      }
      if (an->requires_grad) {
        an->ensure_grad();
        double sum_g = 0.0, sum_gx = 0.0;
        for (int j = 0; j < c; ++j) {
          const double g = dy[j] * gn->value[j];
          sum_g += g;
          sum_gx += g * (x[j] - mu) * istd;
        }
        double* dx = an->grad.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double g = dy[j] * gn->value[j];
          const double xn = (x[j] - mu) * istd;
          dx[j] += istd * (g - sum_g / c - xn * sum_gx / c);
        }
      }
    }
  });
}

namespace {

template <class F, class Dfdx>
Tensor elementwise(const Tensor& a, F f, Dfdx dfdx_of_xy) {
  auto out = make_node(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out->value[i] = f(a.value()[i]);
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, dfdx_of_xy](Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      an->grad[i] += n.grad[i] * dfdx_of_xy(an->value[i], n.value[i]);
  });
}

}  // namespace

Tensor relu(const Tensor& a) {
  return elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return elementwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * detexp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor sigmoid(const Tensor& a) {
  return elementwise(
      a,
      [](double x) {
        const double e = detexp(-std::fabs(x));
        return x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  return elementwise(a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
}

Tensor powc(const Tensor& a, double c) {
  return elementwise(a, [c](double x) { return std::pow(x, c); },
                     [c](double x, double) { return c * std::pow(x, c - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  return elementwise(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor l2_normalize_rows(const Tensor& a, bool* zero_row) {
  auto out = make_node(a.rows(), a.cols());
  const int c = a.cols();
  auto norms = std::make_shared<std::vector<double>>(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const double* x = a.value().data() + static_cast<size_t>(i) * c;
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += x[j] * x[j];
    const double nrm = std::sqrt(s);
    (*norms)[i] = nrm;
    double* y = out->value.data() + static_cast<size_t>(i) * c;
    if (nrm == 0.0) {
      if (zero_row) *zero_row = true;
      continue;  // zero row stays zero
    }
    for (int j = 0; j < c; ++j) y[j] = x[j] / nrm;
  }
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, norms](Node& n) {
    an->ensure_grad();
    const int c = n.cols;
    for (int i = 0; i < n.rows; ++i) {
      const double nrm = (*norms)[i];
      if (nrm == 0.0) continue;  // flagged case: gradient defined as zero
      const double* y = n.value.data() + static_cast<size_t>(i) * c;
      const double* dy = n.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += y[j] * dy[j];
      double* dx = an->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += (dy[j] - y[j] * dot) / nrm;
    }
  });
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  check(a.size() == b.size(), "cosine_sim: size mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    ab += a.value()[i] * b.value()[i];
    aa += a.value()[i] * a.value()[i];
    bb += b.value()[i] * b.value()[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  auto out = make_node(1, 1);
  const bool degenerate = (na == 0.0 || nb == 0.0);
  out->value[0] = degenerate ? 0.0 : ab / (na * nb);
  NodeRef an = a.node(), bn = b.node();
  return finish(std::move(out), {an, bn}, [an, bn, na, nb, degenerate](Node& n) {
    if (degenerate) return;
    const double g = n.grad[0], c = n.value[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < an->value.size(); ++i)
        an->grad[i] += g * (bn->value[i] / (na * nb) - c * an->value[i] / (na * na));
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < bn->value.size(); ++i)
        bn->grad[i] += g * (an->value[i] / (na * nb) - c * bn->value[i] / (nb * nb));
    }
  });
}

Tensor maxpool_rows(const Tensor& a, int group) {
  check(group >= 1 && a.rows() % group == 0, "maxpool_rows: bad group size");
  const int g = a.rows() / group, c = a.cols();
  auto out = make_node(g, c);
  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(g) * c);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < c; ++j) {
      int best = i * group;
      double bv = a.value()[static_cast<size_t>(best) * c + j];
      for (int r = 1; r < group; ++r) {
        const double v = a.value()[static_cast<size_t>(i * group + r) * c + j];
        if (v > bv) {  // strict: ties keep the lowest row index
          bv = v;
          best = i * group + r;
        }
      }
      out->value[static_cast<size_t>(i) * c + j] = bv;
      (*arg)[static_cast<size_t>(i) * c + j] = best;
    }
  }
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, arg](Node& n) {
    an->ensure_grad();
    const int c = n.cols;
    for (int i = 0; i < n.rows; ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<size_t>((*arg)[static_cast<size_t>(i) * c + j]) * c + j] +=
            n.grad[static_cast<size_t>(i) * c + j];
  });
}

Tensor max_all(const Tensor& a) {
  check(a.size() >= 1, "max_all: empty");
  int best = 0;
  for (int i = 1; i < a.size(); ++i)
    if (a.value()[i] > a.value()[best]) best = i;
  auto out = make_node(1, 1);
  out->value[0] = a.value()[best];
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, best](Node& n) {
    an->ensure_grad();
    an->grad[best] += n.grad[0];
  });
}

Tensor topk_mean(const Tensor& a, int k) {
  check(k >= 1 && k <= a.size(), "topk_mean: bad k");
  std::vector<int> idx(a.size());
  for (int i = 0; i < a.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
    return a.value()[x] > a.value()[y];  // stable: ties keep lower index first
  });
  auto picked = std::make_shared<std::vector<int>>(idx.begin(), idx.begin() + k);
  double s = 0.0;
  for (int i : *picked) s += a.value()[i];
  auto out = make_node(1, 1);
  out->value[0] = s / k;
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an, picked, k](Node& n) {
    an->ensure_grad();
    for (int i : *picked) an->grad[i] += n.grad[0] / k;
  });
}

Tensor sum(const Tensor& a) {
  auto out = make_node(1, 1);
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.value()[i];
  out->value[0] = s;
  NodeRef an = a.node();
  return finish(std::move(out), {an}, [an](Node& n) {
    an->ensure_grad();
    for (auto& g : an->grad) g += n.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.size()); }

Tensor sparse_combine(const SparseMap& map, const Tensor& x) {
  check(x.cols() == 1, "sparse_combine: x must be a column");
  check(map.out_rows == static_cast<int>(map.rows.size()), "sparse_combine: bad map");
  auto out = make_node(map.out_rows, 1);
  for (int i = 0; i < map.out_rows; ++i) {
    double s = 0.0;
    for (const auto& [j, w] : map.rows[i]) {
      check(j >= 0 && j < x.rows(), "sparse_combine: index out of range");
      s += w * x.value()[j];
    }
    out->value[i] = s;
  }
  NodeRef xn = x.node();
  auto rows = std::make_shared<std::vector<std::vector<std::pair<int, double>>>>(map.rows);
  return finish(std::move(out), {xn}, [xn, rows](Node& n) {
    xn->ensure_grad();
    for (int i = 0; i < n.rows; ++i)
      for (const auto& [j, w] : (*rows)[i]) xn->grad[j] += w * n.grad[i];
  });
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           int heads) {
  const int t = q.rows(), d = q.cols();
  check(k.rows() == t && v.rows() == t && k.cols() == d && v.cols() == d,
        "attention: q/k/v shape mismatch");
  check(heads >= 1 && d % heads == 0, "attention: dim not divisible by heads");
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  auto out = make_node(t, d);
  // Per-head softmax probabilities laid out [h][i][j], kept for backward.
  // Deliberately left uninitialized; every slot is written below.
  auto probs = std::shared_ptr<double[]>(new double[static_cast<size_t>(heads) * t * t]);

  std::vector<double> scores(static_cast<size_t>(t) * t);
  std::vector<double> wexp(t), acc(dh);
  std::vector<std::pair<double, int>> order(t);
  for (int h = 0; h < heads; ++h) {
    const int hoff = h * dh;
    // scores[i,j] = (q_i . k_j) / sqrt(dh), head slice only
    for (int i = 0; i < t; ++i) {
      const double* qi = q.value().data() + static_cast<size_t>(i) * d + hoff;
      for (int j = 0; j < t; ++j) {
        const double* kj = k.value().data() + static_cast<size_t>(j) * d + hoff;
        double s = 0.0;
        for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
        scores[static_cast<size_t>(i) * t + j] = s * inv_sqrt_dh;
      }
    }
    double* p = probs.get() + static_cast<size_t>(h) * t * t;
    for (int i = 0; i < t; ++i) {
      const double* srow = scores.data() + static_cast<size_t>(i) * t;
      // Canonical accumulation order: sort keys by (score, value row) so the
      // sums below do not depend on the caller's token ordering.
      for (int j = 0; j < t; ++j) order[j] = {srow[j], j};
      std::sort(order.begin(), order.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first < y.first;
        const double* vx = v.value().data() + static_cast<size_t>(x.second) * d + hoff;
        const double* vy = v.value().data() + static_cast<size_t>(y.second) * d + hoff;
        return std::lexicographical_compare(vx, vx + dh, vy, vy + dh);
      });
      double mx = srow[0];
      for (int j = 1; j < t; ++j) mx = std::max(mx, srow[j]);
      for (int j = 0; j < t; ++j) wexp[j] = detexp(srow[j] - mx);
      double z = 0.0;
      for (const auto& [s, j] : order) z += wexp[j];
      double* prow = p + static_cast<size_t>(i) * t;
      for (int j = 0; j < t; ++j) prow[j] = wexp[j] / z;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const auto& [s, j] : order) {
        const double w = wexp[j];
        const double* vj = v.value().data() + static_cast<size_t>(j) * d + hoff;
        for (int e = 0; e < dh; ++e) acc[e] += w * vj[e];
      }
      double* orow = out->value.data() + static_cast<size_t>(i) * d + hoff;
      for (int e = 0; e < dh; ++e) orow[e] = acc[e] / z;
    }
  }

  NodeRef qn = q.node(), kn = k.node(), vn = v.node();
  return finish(
      std::move(out), {qn, kn, vn},
      [qn, kn, vn, probs, heads, dh, inv_sqrt_dh](Node& n) {
        const int t = n.rows, d = n.cols;
        if (qn->requires_grad) qn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        if (vn->requires_grad) vn->ensure_grad();
        std::vector<double> dp(static_cast<size_t>(t) * t);
        std::vector<double> ds(static_cast<size_t>(t) * t);
        for (int h = 0; h < heads; ++h) {
          const int hoff = h * dh;
          const double* p = probs.get() + static_cast<size_t>(h) * t * t;
          // dP = dO . V^T ; dV += P^T . dO
          for (int i = 0; i < t; ++i) {
            const double* go = n.grad.data() + static_cast<size_t>(i) * d + hoff;
            for (int j = 0; j < t; ++j) {
              const double* vj = vn->value.data() + static_cast<size_t>(j) * d + hoff;
              double s = 0.0;
              for (int e = 0; e < dh; ++e) s += go[e] * vj[e];
              dp[static_cast<size_t>(i) * t + j] = s;
            }
          }
          if (vn->requires_grad) {
            for (int j = 0; j < t; ++j) {
              double* gv = vn->grad.data() + static_cast<size_t>(j) * d + hoff;
              for (int i = 0; i < t; ++i) {
                const double pij = p[static_cast<size_t>(i) * t + j];
                if (pij == 0.0) continue;
                const double* go = n.grad.data() + static_cast<size_t>(i) * d + hoff;
                for (int e = 0; e < dh; ++e) gv[e] += pij * go[e];
              }
            }
          }
          // softmax backward, then scale into dS
          for (int i = 0; i < t; ++i) {
            const double* prow = p + static_cast<size_t>(i) * t;
            const double* dprow = dp.data() + static_cast<size_t>(i) * t;
            double dot = 0.0;
            for (int j = 0; j < t; ++j) dot += prow[j] * dprow[j];
            double* dsrow = ds.data() + static_cast<size_t>(i) * t;
            for (int j = 0; j < t; ++j)
              dsrow[j] = prow[j] * (dprow[j] - dot) * inv_sqrt_dh;
          }
          // dQ += dS . K ; dK += dS^T . Q
          if (qn->requires_grad) {
            for (int i = 0; i < t; ++i) {
              double* gq = qn->grad.data() + static_cast<size_t>(i) * d + hoff;
              const double* dsrow = ds.data() + static_cast<size_t>(i) * t;
              for (int j = 0; j < t; ++j) {
                const double w = dsrow[j];
                if (w == 0.0) continue;
                const double* kj = kn->value.data() + static_cast<size_t>(j) * d + hoff;
                for (int e = 0; e < dh; ++e) gq[e] += w * kj[e];
              }
            }
          }
          if (kn->requires_grad) {
            for (int i = 0; i < t; ++i) {
              const double* qi = qn->value.data() + static_cast<size_t>(i) * d + hoff;
              const double* dsrow = ds.data() + static_cast<size_t>(i) * t;
              for (int j = 0; j < t; ++j) {
                const double w = dsrow[j];
                if (w == 0.0) continue;
                double* gk = kn->grad.data() + static_cast<size_t>(j) * d + hoff;
                for (int e = 0; e < dh; ++e) gk[e] += w * qi[e];
              }
            }
          }
        }
      });
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double h) {
  check(h >= 1e-7 && h <= 1e-3, "grad_check: h outside [1e-7, 1e-3]");
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params)
    analytic.push_back(p.node()->grad.empty()
                           ? std::vector<double>(p.size(), 0.0)
                           : p.node()->grad);

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].raw_value();
    for (size_t e = 0; e < vals.size(); ++e) {
      const double x0 = vals[e];
      vals[e] = x0 + h;
      const double fp = f().item();
      vals[e] = x0 - h;
      const double fm = f().item();
      vals[e] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[pi][e];
      const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace plad::ag
