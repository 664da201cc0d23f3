#pragma once

#include "plad/autograd.hpp"
#include "plad/params.hpp"
#include "plad/point_cloud.hpp"
#include "plad/rng.hpp"

namespace plad {

struct GeoNetConfig {
  int hidden1 = 32;
  int hidden2 = 64;
  int out_dim = 32;

  void validate() const;
};

// Learnable per-patch geometric descriptor: center-relative member coordinates
// through a shared point-wise MLP (linear, per-point layer norm, ReLU at each
// stage), max pooled over the patch, then a fully connected projection.
class GeoNet {
 public:
  GeoNet(const GeoNetConfig& cfg, ParamRegistry& reg, Rng& rng);

  // [G, out_dim] patch features.
  ag::Tensor forward(const PointCloud& cloud, const PatchSet& patches) const;

  const GeoNetConfig& config() const { return cfg_; }

 private:
  GeoNetConfig cfg_;
  ag::Tensor w1_, b1_, ln1_g_, ln1_b_;
  ag::Tensor w2_, b2_, ln2_g_, ln2_b_;
  ag::Tensor w3_, b3_, ln3_g_, ln3_b_;
  ag::Tensor phi_w_, phi_b_;
};

}  // namespace plad
