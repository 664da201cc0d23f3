#include "plad/model.hpp"

#include <stdexcept>

#include "plad/fpfh.hpp"

namespace plad {

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.tap_count = static_cast<int>(encoder.tap_layers.size());
  f.encoder_dim = encoder.embed_dim;
  f.geo_dim = geonet.out_dim;
  f.out_dim = encoder.out_dim;
  return f;
}

void ModelConfig::validate() const {
  encoder.validate();
  geonet.validate();
  prompts.validate();
  loss.validate();
  fusion().validate();
  if (prompts.out_dim != encoder.out_dim)
    throw std::invalid_argument(
        "model: prompt embedding width must equal the encoder output width");
}

AnomalyModel::AnomalyModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng root(seed);
  Rng enc_rng = root.fork(1);
  Rng geo_rng = root.fork(2);
  Rng fus_rng = root.fork(3);
  Rng prm_rng = root.fork(4);
  Rng aln_rng = root.fork(5);

  encoder_ = std::make_unique<PointEncoder>(cfg_.encoder, reg_, enc_rng);
  geonet_ = std::make_unique<GeoNet>(cfg_.geonet, reg_, geo_rng);
  fusion_ = std::make_unique<FeatureFusion>(cfg_.fusion(), reg_, fus_rng);
  prompts_ = std::make_unique<PromptModel>(cfg_.prompts, reg_, prm_rng);

  const int gd = cfg_.geonet.out_dim;
  align_w_ = reg_.add("align.w", gd, kFpfhSize, glorot_fill(aln_rng, gd, kFpfhSize));
  align_b_ = reg_.add("align.b", 1, kFpfhSize, constant_fill(1, kFpfhSize, 0.0), false);
}

AnomalyModel::Forward AnomalyModel::forward(const PipelineSample& sample) const {
  Forward fw;
  ag::Tensor tokens = encoder_->tokenize(sample.cloud, sample.patches);
  fw.pyramid = encoder_->encode(tokens);
  fw.geo = geonet_->forward(sample.cloud, sample.patches);
  fw.z = fusion_->fuse(fw.pyramid, fw.geo);
  fw.text = prompts_->encode();
  fw.scores = score_points(fw.z, fw.text, sample.cloud, sample.patches,
                           sample.interp_k);
  return fw;
}

AnomalyModel::LossParts AnomalyModel::loss(const Forward& fw,
                                           const PipelineSample& sample) const {
  if (!sample.cloud.has_labels())
    throw std::invalid_argument("model: training sample carries no point labels");
  LossParts parts;
  parts.local = local_loss(fw.scores.point, sample.cloud.labels, cfg_.loss);
  parts.global = global_loss(fw.scores.point, fw.scores.patch, sample.label, cfg_.loss);
  parts.geo = geo_loss(fw.geo, align_w_, align_b_, sample.targets, cfg_.loss.infonce_tau);
  parts.total = total_loss(parts.local, parts.global, parts.geo, cfg_.loss);
  return parts;
}

AnomalyModel::Scored AnomalyModel::score(const PipelineSample& sample) const {
  Forward fw = forward(sample);
  ag::Tensor probs = classify_global(fw.pyramid.global, fw.text);

  Scored out;
  out.point_scores = fw.scores.point.value();
  out.patch_scores = fw.scores.patch.value();
  out.class_probs = probs.value();
  out.object = object_score(out.point_scores, out.patch_scores, sample.label,
                            cfg_.loss.fusion_alpha);
  return out;
}

}  // namespace plad
