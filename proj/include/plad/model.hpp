#pragma once

#include <cstdint>
#include <vector>

#include "plad/encoder.hpp"
#include "plad/fusion.hpp"
#include "plad/geonet.hpp"
#include "plad/losses.hpp"
#include "plad/params.hpp"
#include "plad/pipeline.hpp"
#include "plad/prompts.hpp"

namespace plad {

struct ModelConfig {
  EncoderConfig encoder;
  GeoNetConfig geonet;
  PromptConfig prompts;
  LossConfig loss;

  // Fusion dimensions are implied: tap_count = |encoder.tap_layers|,
  // encoder_dim = encoder.embed_dim, geo_dim = geonet.out_dim,
  // out_dim = encoder.out_dim. Throws when the widths disagree with the
  // prompt embedding width.
  FusionConfig fusion() const;
  void validate() const;
};

// The full trainable network: point encoder, geometric feature branch,
// multi-granularity fusion, prompt embeddings, and the descriptor alignment
// head. All parameters live in one registry in construction order, so
// checkpoints, the optimizer, and gradient checks share one stable list.
class AnomalyModel {
 public:
  AnomalyModel(const ModelConfig& cfg, std::uint64_t seed);

  struct Forward {
    FeaturePyramid pyramid;
    ag::Tensor geo;     // [G, geo_dim]
    ag::Tensor z;       // [G, D], unit rows
    TextEmbeddings text;
    PointScores scores;  // patch [G,1] and point [N,1] defect probabilities
  };
  Forward forward(const PipelineSample& sample) const;

  struct LossParts {
    ag::Tensor local, global, geo, total;
  };
  // Requires per-point labels on the sample's cloud.
  LossParts loss(const Forward& fw, const PipelineSample& sample) const;

  // Plain-value scoring for evaluation and reports.
  struct Scored {
    std::vector<double> point_scores;  // [N]
    std::vector<double> patch_scores;  // [G]
    GlobalScore object;
    std::vector<double> class_probs;   // whole-cloud (P(normal), P(defective))
  };
  Scored score(const PipelineSample& sample) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const PointEncoder& encoder() const { return *encoder_; }
  const GeoNet& geonet() const { return *geonet_; }
  const FeatureFusion& fusion() const { return *fusion_; }
  const PromptModel& prompts() const { return *prompts_; }
  const ag::Tensor& align_w() const { return align_w_; }
  const ag::Tensor& align_b() const { return align_b_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  std::unique_ptr<PointEncoder> encoder_;
  std::unique_ptr<GeoNet> geonet_;
  std::unique_ptr<FeatureFusion> fusion_;
  std::unique_ptr<PromptModel> prompts_;
  ag::Tensor align_w_, align_b_;  // geo_dim -> 33 descriptor space
};

}  // namespace plad
