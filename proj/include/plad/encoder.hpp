#pragma once

#include <vector>

#include "plad/autograd.hpp"
#include "plad/params.hpp"
#include "plad/point_cloud.hpp"
#include "plad/rng.hpp"

namespace plad {

struct EncoderConfig {
  int num_layers = 12;
  int embed_dim = 64;
  int heads = 4;
  std::vector<int> tap_layers{2, 5, 8, 11};  // 1-based, strictly increasing
  int out_dim = 32;                          // width of the global embedding
  int token_hidden = 32;                     // tokenizer MLP hidden width

  // Throws std::invalid_argument on a bad combination.
  void validate() const;
};

// Per-cloud multi-level features produced by the encoder.
struct FeaturePyramid {
  std::vector<ag::Tensor> taps;  // one [G, embed_dim] matrix per tap layer
  ag::Tensor cls;                // [1, embed_dim], final-layer CLS state
  ag::Tensor global;             // [1, out_dim], unit L2 norm
};

// Transformer over patch tokens with a prepended CLS token. Intermediate
// layers listed in tap_layers are captured as per-patch feature matrices; the
// final CLS state doubles as the whole-cloud embedding after projection.
class PointEncoder {
 public:
  PointEncoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng);

  // Center-relative member coordinates through the shared point MLP, max
  // pooled per patch. [G, embed_dim], no positional term yet.
  ag::Tensor pooled_tokens(const PointCloud& cloud, const PatchSet& patches) const;

  // pooled_tokens plus the positional encoding of each patch center, with the
  // learned CLS token prepended. [G+1, embed_dim], CLS first.
  ag::Tensor tokenize(const PointCloud& cloud, const PatchSet& patches) const;

  // Pre-norm transformer stack. Taps are captured after their block's
  // residual add (G non-CLS rows); the CLS row passes a final layer norm and
  // a linear projection to out_dim followed by L2 normalization.
  FeaturePyramid encode(const ag::Tensor& tokens) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    ag::Tensor ln1_g, ln1_b;
    ag::Tensor wq, bq, wk, wv, bv, wo, bo;
    ag::Tensor ln2_g, ln2_b;
    ag::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  };

  EncoderConfig cfg_;
  ag::Tensor tok_w1_, tok_b1_, tok_w2_, tok_b2_;
  ag::Tensor pos_w_, pos_b_;
  ag::Tensor cls_;
  std::vector<Layer> layers_;
  ag::Tensor final_ln_g_, final_ln_b_;
  ag::Tensor proj_w_, proj_b_;
};

}  // namespace plad
