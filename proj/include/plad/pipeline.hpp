#pragma once

#include "plad/autograd.hpp"
#include "plad/fpfh.hpp"
#include "plad/point_cloud.hpp"

namespace plad {

struct PipelineConfig {
  int sample_points = 2048;  // clouds larger than this are FPS-downsampled
  int patch_count = 128;
  int patch_size = 32;
  int normals_k = 16;
  int fpfh_k = 8;
  int interp_k = 3;  // patch-to-point score interpolation neighbors

  void validate() const;
};

// One cloud ready for the model: normalized, downsampled, with estimated
// normals, patches, and the per-patch descriptor targets for the geometry
// alignment loss. Labels, when the source cloud carries them, follow the
// sampled subset.
struct PipelineSample {
  PointCloud cloud;
  PatchSet patches;
  ag::Tensor targets;  // [G, 33] constant unit (or zero) rows
  int label = 0;       // object level
  int interp_k = 3;    // carried from the preparing config
};

PipelineSample prepare_sample(const PointCloud& raw, const PipelineConfig& cfg,
                              int object_label);

}  // namespace plad
