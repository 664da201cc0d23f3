#include "plad/fusion.hpp"

#include <stdexcept>

#include "plad/nn_ops.hpp"

namespace plad {

void FusionConfig::validate() const {
  if (tap_count < 1) throw std::invalid_argument("fusion: tap_count < 1");
  if (encoder_dim < 1 || geo_dim < 1 || out_dim < 1)
    throw std::invalid_argument("fusion: widths must be positive");
}

FeatureFusion::FeatureFusion(const FusionConfig& cfg, ParamRegistry& reg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.out_dim;
  layer_logits_ = reg.add("fusion.layer_logits", 1, cfg_.tap_count,
                          constant_fill(1, cfg_.tap_count, 0.0));
  sem_w_ = reg.add("fusion.sem.w", cfg_.encoder_dim, d,
                   glorot_fill(rng, cfg_.encoder_dim, d));
  sem_b_ = reg.add("fusion.sem.b", 1, d, constant_fill(1, d, 0.0), false);
  geo_w_ = reg.add("fusion.geo.w", cfg_.geo_dim, d, glorot_fill(rng, cfg_.geo_dim, d));
  geo_b_ = reg.add("fusion.geo.b", 1, d, constant_fill(1, d, 0.0), false);
  cls_w_ = reg.add("fusion.cls.w", cfg_.encoder_dim, d,
                   glorot_fill(rng, cfg_.encoder_dim, d));
  cls_b_ = reg.add("fusion.cls.b", 1, d, constant_fill(1, d, 0.0), false);
  out_w_ = reg.add("fusion.out.w", 3 * d, d, glorot_fill(rng, 3 * d, d));
  out_b_ = reg.add("fusion.out.b", 1, d, constant_fill(1, d, 0.0), false);
}

ag::Tensor FeatureFusion::tap_weights() const {
  return ag::softmax_rows(layer_logits_);
}

ag::Tensor FeatureFusion::fuse(const FeaturePyramid& pyramid,
                               const ag::Tensor& geo) const {
  if (static_cast<int>(pyramid.taps.size()) != cfg_.tap_count)
    throw std::invalid_argument("fusion: tap count mismatch");
  if (!geo.defined() || geo.cols() != cfg_.geo_dim)
    throw std::invalid_argument("fusion: geo width mismatch");
  const int g = geo.rows();
  for (const ag::Tensor& tap : pyramid.taps)
    if (tap.rows() != g || tap.cols() != cfg_.encoder_dim)
      throw std::invalid_argument("fusion: tap shape mismatch");
  if (!pyramid.cls.defined() || pyramid.cls.rows() != 1 ||
      pyramid.cls.cols() != cfg_.encoder_dim)
    throw std::invalid_argument("fusion: cls shape mismatch");

  const int d = cfg_.out_dim;
  ag::Tensor alpha = tap_weights();
  ag::Tensor sem;
  for (int l = 0; l < cfg_.tap_count; ++l) {
    ag::Tensor proj = nn::linear(pyramid.taps[l], sem_w_, sem_b_);
    ag::Tensor al = nn::take_col(alpha, l);  // [1, 1]
    ag::Tensor weighted = ag::mul(proj, nn::broadcast_scalar(al, g, d));
    sem = l == 0 ? weighted : ag::add(sem, weighted);
  }
  ag::Tensor geo_proj = nn::linear(geo, geo_w_, geo_b_);
  ag::Tensor cls_proj = nn::broadcast_row(nn::linear(pyramid.cls, cls_w_, cls_b_), g);
  ag::Tensor fused = nn::linear(ag::concat_cols({sem, geo_proj, cls_proj}),
                                out_w_, out_b_);
  bool zero_row = false;
  ag::Tensor z = ag::l2_normalize_rows(fused, &zero_row);
  if (zero_row)
    throw std::runtime_error("fusion: a patch embedding collapsed to the zero vector");
  return z;
}

}  // namespace plad
