#include "plad/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "plad/nn_ops.hpp"

namespace plad {

namespace {

constexpr double kProbMargin = 1e-7;

void check_prob_vector(const ag::Tensor& probs, const char* who) {
  if (!probs.defined() || probs.cols() != 1 || probs.rows() < 1)
    throw std::invalid_argument(std::string(who) + ": expected a nonempty column");
  for (double p : probs.value())
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument(std::string(who) + ": probability outside [0, 1]");
}

std::vector<double> label_doubles(const std::vector<std::uint8_t>& labels,
                                  const char* who) {
  std::vector<double> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1)
      throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    y[i] = labels[i];
  }
  return y;
}

int topk_count(int patch_count) {
  return std::max(1, static_cast<int>(std::ceil(0.1 * patch_count)));
}

}  // namespace

void LossConfig::validate() const {
  if (focal_gamma < 0.0) throw std::invalid_argument("loss: focal_gamma < 0");
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0))
    throw std::invalid_argument("loss: focal_alpha outside (0, 1)");
  if (!(dice_eps > 0.0)) throw std::invalid_argument("loss: dice_eps must be positive");
  if (!(fusion_alpha >= 0.0 && fusion_alpha <= 1.0))
    throw std::invalid_argument("loss: fusion_alpha outside [0, 1]");
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw std::invalid_argument("loss: lambda weights must be nonnegative");
  if (!(infonce_tau > 0.0)) throw std::invalid_argument("loss: infonce_tau must be positive");
}

ag::Tensor focal_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                      double gamma, double alpha) {
  check_prob_vector(probs, "focal_loss");
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw std::invalid_argument("focal_loss: size mismatch");
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma < 0");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("focal_loss: alpha outside (0, 1)");

  const int n = probs.rows();
  std::vector<double> y = label_doubles(labels, "focal_loss");
  std::vector<double> ny(y.size()), at(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    ny[i] = 1.0 - y[i];
    at[i] = alpha * y[i] + (1.0 - alpha) * ny[i];
  }
  ag::Tensor yc = ag::Tensor::constant(n, 1, std::move(y));
  ag::Tensor nyc = ag::Tensor::constant(n, 1, std::move(ny));
  ag::Tensor alpha_t = ag::Tensor::constant(n, 1, std::move(at));

  ag::Tensor p = ag::clamp(probs, kProbMargin, 1.0 - kProbMargin);
  ag::Tensor pt = ag::add(ag::mul(yc, p), ag::mul(nyc, ag::affine(p, -1.0, 1.0)));
  ag::Tensor mod = ag::powc(ag::affine(pt, -1.0, 1.0), gamma);
  ag::Tensor terms = ag::mul(alpha_t, ag::mul(mod, ag::log(pt)));
  return ag::scale(ag::mean(terms), -1.0);
}

ag::Tensor dice_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                     double eps) {
  check_prob_vector(probs, "dice_loss");
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw std::invalid_argument("dice_loss: size mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("dice_loss: eps must be positive");

  const int n = probs.rows();
  std::vector<double> y = label_doubles(labels, "dice_loss");
  double ysum = 0.0;
  for (double v : y) ysum += v;
  ag::Tensor yc = ag::Tensor::constant(n, 1, std::move(y));
  ag::Tensor inter = ag::sum(ag::mul(probs, yc));
  ag::Tensor denom = ag::affine(ag::sum(probs), 1.0, ysum + eps);
  return ag::affine(ag::div(ag::affine(inter, 2.0, eps), denom), -1.0, 1.0);
}

ag::Tensor local_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                      const LossConfig& cfg) {
  return ag::add(focal_loss(probs, labels, cfg.focal_gamma, cfg.focal_alpha),
                 dice_loss(probs, labels, cfg.dice_eps));
}

GlobalScore object_score(const std::vector<double>& point_scores,
                         const std::vector<double>& patch_scores, int label,
                         double alpha) {
  if (point_scores.empty() || patch_scores.empty())
    throw std::invalid_argument("object_score: empty scores");
  if (label != 0 && label != 1)
    throw std::invalid_argument("object_score: label must be 0 or 1");
  for (double s : point_scores)
    if (!(s >= 0.0 && s <= 1.0))
      throw std::invalid_argument("object_score: score outside [0, 1]");
  for (double s : patch_scores)
    if (!(s >= 0.0 && s <= 1.0))
      throw std::invalid_argument("object_score: score outside [0, 1]");

  GlobalScore gs;
  gs.y = label;
  gs.y_pt = *std::max_element(point_scores.begin(), point_scores.end());
  std::vector<double> sorted(patch_scores);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const int k = topk_count(static_cast<int>(sorted.size()));
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += sorted[i];
  gs.y_patch = acc / k;
  gs.y_hat = alpha * gs.y_pt + (1.0 - alpha) * gs.y_patch;
  return gs;
}

ag::Tensor global_loss(const ag::Tensor& point_scores, const ag::Tensor& patch_scores,
                       int label, const LossConfig& cfg) {
  check_prob_vector(point_scores, "global_loss");
  check_prob_vector(patch_scores, "global_loss");
  if (label != 0 && label != 1)
    throw std::invalid_argument("global_loss: label must be 0 or 1");

  ag::Tensor y_pt = ag::max_all(point_scores);
  ag::Tensor y_patch = ag::topk_mean(patch_scores, topk_count(patch_scores.rows()));
  ag::Tensor y_hat = ag::add(ag::scale(y_pt, cfg.fusion_alpha),
                             ag::scale(y_patch, 1.0 - cfg.fusion_alpha));
  y_hat = ag::clamp(y_hat, kProbMargin, 1.0 - kProbMargin);
  if (label == 1) return ag::scale(ag::log(y_hat), -1.0);
  return ag::scale(ag::log(ag::affine(y_hat, -1.0, 1.0)), -1.0);
}

ag::Tensor geo_loss(const ag::Tensor& geo, const ag::Tensor& head_w,
                    const ag::Tensor& head_b, const ag::Tensor& targets, double tau) {
  if (!geo.defined() || geo.rows() < 2)
    throw std::invalid_argument("geo_loss: need at least 2 patches");
  if (!(tau > 0.0)) throw std::invalid_argument("geo_loss: tau must be positive");
  if (!targets.defined() || targets.rows() != geo.rows())
    throw std::invalid_argument("geo_loss: target count mismatch");
  if (head_w.cols() != targets.cols())
    throw std::invalid_argument("geo_loss: head width does not match targets");

  const int g = geo.rows();
  ag::Tensor phi = ag::l2_normalize_rows(nn::linear(geo, head_w, head_b));
  ag::Tensor logits = ag::scale(ag::matmul(phi, ag::transpose(targets)), 1.0 / tau);
  ag::Tensor lse = ag::logsumexp_rows(logits);  // [G, 1]

  std::vector<double> eye(static_cast<std::size_t>(g) * g, 0.0);
  for (int i = 0; i < g; ++i) eye[static_cast<std::size_t>(i) * g + i] = 1.0;
  ag::Tensor diag_mask = ag::Tensor::constant(g, g, std::move(eye));
  ag::Tensor ones_col = ag::Tensor::constant(g, 1, std::vector<double>(g, 1.0));
  ag::Tensor diag = ag::matmul(ag::mul(logits, diag_mask), ones_col);  // [G, 1]
  return ag::mean(ag::add(lse, ag::scale(diag, -1.0)));
}

ag::Tensor total_loss(const ag::Tensor& local, const ag::Tensor& global,
                      const ag::Tensor& geo, const LossConfig& cfg) {
  if (local.size() != 1 || global.size() != 1 || geo.size() != 1)
    throw std::invalid_argument("total_loss: parts must be scalars");
  return ag::add(ag::add(local, ag::scale(global, cfg.lambda1)),
                 ag::scale(geo, cfg.lambda2));
}

}  // namespace plad
