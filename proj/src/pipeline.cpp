#include "plad/pipeline.hpp"

#include <stdexcept>
#include <string>

namespace plad {

void PipelineConfig::validate() const {
  if (sample_points < 1) throw std::invalid_argument("pipeline: sample_points must be >= 1");
  if (patch_count < 1) throw std::invalid_argument("pipeline: patch_count must be >= 1");
  if (patch_size < 3) throw std::invalid_argument("pipeline: patch_size must be >= 3");
  if (normals_k < 3) throw std::invalid_argument("pipeline: normals_k must be >= 3");
  if (fpfh_k < 2) throw std::invalid_argument("pipeline: fpfh_k must be >= 2");
  if (interp_k < 1) throw std::invalid_argument("pipeline: interp_k must be >= 1");
  if (patch_count > sample_points)
    throw std::invalid_argument("pipeline: patch_count exceeds sample_points");
  if (patch_size > sample_points)
    throw std::invalid_argument("pipeline: patch_size exceeds sample_points");
}

PipelineSample prepare_sample(const PointCloud& raw, const PipelineConfig& cfg,
                              int object_label) {
  cfg.validate();
  if (raw.size() == 0) throw std::invalid_argument("prepare_sample: empty cloud");
  const int n = static_cast<int>(raw.size());
  if (n < cfg.patch_size)
    throw std::invalid_argument("prepare_sample: cloud smaller than one patch (" +
                                std::to_string(n) + " points)");

  PointCloud cloud = normalize_cloud(raw);

  if (n > cfg.sample_points) {
    std::vector<int> keep = farthest_point_sampling(cloud, cfg.sample_points);
    PointCloud sampled;
    sampled.points.reserve(keep.size());
    if (cloud.has_labels()) sampled.labels.reserve(keep.size());
    for (int idx : keep) {
      sampled.points.push_back(cloud.points[idx]);
      if (cloud.has_labels()) sampled.labels.push_back(cloud.labels[idx]);
    }
    cloud = std::move(sampled);
  }

  // Normals are estimated on the sampled cloud, never inherited: the input
  // may carry normals from a different neighborhood scale.
  const int nk = std::min(cfg.normals_k, static_cast<int>(cloud.size()));
  cloud = estimate_normals(cloud, nk);

  const int g = std::min(cfg.patch_count, static_cast<int>(cloud.size()));
  std::vector<int> centers = farthest_point_sampling(cloud, g);
  PatchSet patches = knn_group(cloud, centers, cfg.patch_size);

  std::vector<FpfhDescriptor> descriptors = fpfh(cloud, cfg.fpfh_k);
  std::vector<FpfhDescriptor> patch_targets = patch_fpfh(descriptors, patches);

  std::vector<double> flat(static_cast<std::size_t>(g) * kFpfhSize);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < kFpfhSize; ++j)
      flat[static_cast<std::size_t>(i) * kFpfhSize + j] = patch_targets[i][j];

  PipelineSample sample;
  sample.cloud = std::move(cloud);
  sample.patches = std::move(patches);
  sample.targets = ag::Tensor::constant(g, kFpfhSize, std::move(flat));
  sample.label = object_label;
  sample.interp_k = cfg.interp_k;
  return sample;
}

}  // namespace plad
