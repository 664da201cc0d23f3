#pragma once

#include "plad/autograd.hpp"
#include "plad/encoder.hpp"
#include "plad/params.hpp"
#include "plad/rng.hpp"

namespace plad {

struct FusionConfig {
  int tap_count = 4;     // number of captured encoder layers
  int encoder_dim = 64;  // width of tap rows and of the CLS state
  int geo_dim = 32;      // width of the geometric features
  int out_dim = 32;      // shared projection width and final embedding width

  void validate() const;
};

// Fuses the tapped encoder layers (softmax-weighted), the geometric patch
// features, and the broadcast CLS state into one embedding per patch, aligned
// with the text embedding space. Strictly row-local: patch i's output depends
// only on patch i's inputs and the CLS state.
class FeatureFusion {
 public:
  FeatureFusion(const FusionConfig& cfg, ParamRegistry& reg, Rng& rng);

  // Softmax over the layer logits, [1, tap_count].
  ag::Tensor tap_weights() const;

  // [G, out_dim] with unit-norm rows.
  ag::Tensor fuse(const FeaturePyramid& pyramid, const ag::Tensor& geo) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  ag::Tensor layer_logits_;
  ag::Tensor sem_w_, sem_b_;
  ag::Tensor geo_w_, geo_b_;
  ag::Tensor cls_w_, cls_b_;
  ag::Tensor out_w_, out_b_;
};

}  // namespace plad
