#pragma once

#include <cstdint>
#include <vector>

#include "plad/autograd.hpp"

namespace plad {

struct LossConfig {
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;   // weight of the positive class
  double dice_eps = 1.0;
  double fusion_alpha = 0.5;   // object score: alpha*max(point) + (1-alpha)*top-k patch mean
  double lambda1 = 0.5;        // weight of the object-level loss
  double lambda2 = 0.1;        // weight of the geometry alignment loss
  double infonce_tau = 0.07;

  void validate() const;
};

// Mean of -alpha_t * (1-p_t)^gamma * log(p_t). Probabilities are clamped to
// [1e-7, 1-1e-7]; raw values outside [0, 1] are an error.
ag::Tensor focal_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                      double gamma, double alpha);

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps).
ag::Tensor dice_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                     double eps);

// focal + dice on per-point probabilities.
ag::Tensor local_loss(const ag::Tensor& probs, const std::vector<std::uint8_t>& labels,
                      const LossConfig& cfg);

// Fused object score: alpha * max point score + (1-alpha) * mean of the
// top-10% patch scores (at least one patch). Plain-value mirror of the
// in-graph aggregation, for reports.
struct GlobalScore {
  double y_pt = 0.0;
  double y_patch = 0.0;
  double y_hat = 0.0;
  int y = 0;
};
GlobalScore object_score(const std::vector<double>& point_scores,
                         const std::vector<double>& patch_scores, int label,
                         double alpha);

// Binary cross-entropy between the fused object score and the object label.
ag::Tensor global_loss(const ag::Tensor& point_scores, const ag::Tensor& patch_scores,
                       int label, const LossConfig& cfg);

// InfoNCE alignment of projected geometric features against per-patch
// descriptor targets: row i of `targets` is patch i's positive, every other
// row is a negative. `targets` rows are expected unit (or zero) norm;
// projection = L2-normalized linear head applied to `geo`.
ag::Tensor geo_loss(const ag::Tensor& geo, const ag::Tensor& head_w,
                    const ag::Tensor& head_b, const ag::Tensor& targets, double tau);

// local + lambda1 * global + lambda2 * geo.
ag::Tensor total_loss(const ag::Tensor& local, const ag::Tensor& global,
                      const ag::Tensor& geo, const LossConfig& cfg);

}  // namespace plad
