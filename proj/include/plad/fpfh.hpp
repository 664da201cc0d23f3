#pragma once

#include <array>
#include <vector>

#include "plad/point_cloud.hpp"

namespace plad {

constexpr int kFpfhBins = 11;
constexpr int kFpfhSize = 3 * kFpfhBins;

/// Three concatenated 11-bin angle histograms (alpha, phi, theta).
using FpfhDescriptor = std::array<double, kFpfhSize>;

/// Darboux-frame angle features of one oriented point pair, with the usual
/// source/target swap so the source normal is the one better aligned with
/// the displacement (alignment ties within 1e-9 keep the caller's roles, and
/// a theta numerator below 1e-9 of its denominator snaps to +0, so degenerate
/// normal pairs bin identically under any rigid motion). Returns false for
/// degenerate pairs (coincident points, or displacement parallel to the
/// source normal) where no frame exists.
bool pair_features(const Vec3& ps, const Vec3& ns, const Vec3& pt, const Vec3& nt,
                   double& alpha, double& phi, double& theta, double& dist);

/// Histogram of pair features from `index` to each listed neighbor; each
/// 11-bin block normalized to sum 1, or all-zero if every pair degenerates.
FpfhDescriptor spfh(const PointCloud& cloud, int index,
                    const std::vector<int>& neighbors);

/// Per-point FPFH over the k nearest neighbors (self excluded): own SPFH
/// plus distance-weighted neighbor SPFHs, renormalized per block. A
/// coincident neighbor has its weight clamped at 1e-12; `clamped` reports
/// whether that happened anywhere.
std::vector<FpfhDescriptor> fpfh(const PointCloud& cloud, int k,
                                 bool* clamped = nullptr);

/// Per-patch contrastive target: mean of member descriptors, L2-normalized
/// as a 33-vector (zero mean stays zero).
std::vector<FpfhDescriptor> patch_fpfh(const std::vector<FpfhDescriptor>& descriptors,
                                       const PatchSet& patches);

}  // namespace plad
