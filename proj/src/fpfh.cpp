#include "plad/fpfh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "plad/kdtree.hpp"

namespace plad {

namespace {

constexpr double kPi = 3.14159265358979323846;

int bin11(double value, double lo, double hi) {
  const int b = static_cast<int>(std::floor(kFpfhBins * (value - lo) / (hi - lo)));
  return std::clamp(b, 0, kFpfhBins - 1);
}

void normalize_blocks(FpfhDescriptor& h) {
  for (int blk = 0; blk < 3; ++blk) {
    double s = 0.0;
    for (int b = 0; b < kFpfhBins; ++b) s += h[blk * kFpfhBins + b];
    if (s > 0.0)
      for (int b = 0; b < kFpfhBins; ++b) h[blk * kFpfhBins + b] /= s;
  }
}

}  // namespace

bool pair_features(const Vec3& ps, const Vec3& ns, const Vec3& pt, const Vec3& nt,
                   double& alpha, double& phi, double& theta, double& dist) {
  Vec3 d = pt - ps;
  dist = d.norm();
  if (dist == 0.0) return false;

  Vec3 n1 = ns, n2 = nt;
  const double angle1 = n1.dot(d) / dist;
  const double angle2 = n2.dot(d) / dist;
  // The frame is built on whichever normal aligns better with the line. When
  // the two alignments agree to within 1e-9 (near-identical or antiparallel
  // normals, where the raw comparison is decided by rounding noise and would
  // flip the sign of phi under a rigid motion) the source keeps its role.
  if (std::fabs(angle2) - std::fabs(angle1) > 1e-9) {
    n1 = nt;
    n2 = ns;
    d = d * -1.0;
    phi = -angle2;
  } else {
    phi = angle1;
  }

  Vec3 v = d.cross(n1);
  const double vn = v.norm();
  if (vn == 0.0) return false;  // displacement parallel to the frame normal
  v = v * (1.0 / vn);
  const Vec3 w = n1.cross(v);
  alpha = v.dot(n2);
  double ty = w.dot(n2);
  const double tx = n1.dot(n2);
  // Antiparallel normals put theta on the atan2 branch cut with a numerator of
  // +-epsilon; snap it to +0 so the answer is +pi rather than a coin flip.
  if (std::fabs(ty) < 1e-9 * std::fabs(tx)) ty = 0.0;
  theta = std::atan2(ty, tx);
  return true;
}

FpfhDescriptor spfh(const PointCloud& cloud, int index,
                    const std::vector<int>& neighbors) {
  if (!cloud.has_normals()) throw std::invalid_argument("spfh: cloud lacks normals");
  if (neighbors.empty()) throw std::invalid_argument("spfh: empty neighbor list");
  const int n = static_cast<int>(cloud.size());
  if (index < 0 || index >= n) throw std::invalid_argument("spfh: index out of range");

  FpfhDescriptor h{};
  int valid = 0;
  for (int j : neighbors) {
    if (j == index) throw std::invalid_argument("spfh: neighbor list contains the source");
    if (j < 0 || j >= n) throw std::invalid_argument("spfh: neighbor out of range");
    double alpha, phi, theta, dist;
    if (!pair_features(cloud.points[index], cloud.normals[index], cloud.points[j],
                       cloud.normals[j], alpha, phi, theta, dist))
      continue;
    h[bin11(alpha, -1.0, 1.0)] += 1.0;
    h[kFpfhBins + bin11(phi, -1.0, 1.0)] += 1.0;
    h[2 * kFpfhBins + bin11(theta, -kPi, kPi)] += 1.0;
    ++valid;
  }
  if (valid > 0)
    for (double& b : h) b /= valid;
  return h;
}

std::vector<FpfhDescriptor> fpfh(const PointCloud& cloud, int k, bool* clamped) {
  if (k < 2) throw std::invalid_argument("fpfh: k < 2");
  if (!cloud.has_normals()) throw std::invalid_argument("fpfh: cloud lacks normals");
  const int n = static_cast<int>(cloud.size());
  if (n < k + 1) throw std::invalid_argument("fpfh: cloud smaller than k + 1");
  if (clamped) *clamped = false;

  KdTree tree(cloud.points);
  std::vector<std::vector<int>> nbrs(n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> found = tree.knn_indices(cloud.points[i], k + 1);
    auto self = std::find(found.begin(), found.end(), i);
    if (self != found.end())
      found.erase(self);
    else
      found.pop_back();  // i displaced by coincident duplicates; keep k nearest
    nbrs[i] = std::move(found);
  }

  std::vector<FpfhDescriptor> spfhs(n);
  for (int i = 0; i < n; ++i) spfhs[i] = spfh(cloud, i, nbrs[i]);

  std::vector<FpfhDescriptor> out(n);
  for (int i = 0; i < n; ++i) {
    FpfhDescriptor h = spfhs[i];
    for (int j : nbrs[i]) {
      double w = std::sqrt(dist2(cloud.points[i], cloud.points[j]));
      if (w < 1e-12) {
        w = 1e-12;
        if (clamped) *clamped = true;
      }
      const double scale = 1.0 / (k * w);
      for (int b = 0; b < kFpfhSize; ++b) h[b] += scale * spfhs[j][b];
    }
    normalize_blocks(h);
    out[i] = h;
  }
  return out;
}

std::vector<FpfhDescriptor> patch_fpfh(const std::vector<FpfhDescriptor>& descriptors,
                                       const PatchSet& patches) {
  std::vector<FpfhDescriptor> out(patches.centers.size());
  for (size_t g = 0; g < patches.members.size(); ++g) {
    const auto& row = patches.members[g];
    FpfhDescriptor mean{};
    for (int idx : row) {
      if (idx < 0 || idx >= static_cast<int>(descriptors.size()))
        throw std::invalid_argument("patch_fpfh: member index out of range");
      for (int b = 0; b < kFpfhSize; ++b) mean[b] += descriptors[idx][b];
    }
    for (double& v : mean) v /= static_cast<double>(row.size());
    double nrm = 0.0;
    for (double v : mean) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (nrm > 0.0)
      for (double& v : mean) v /= nrm;
    out[g] = mean;
  }
  return out;
}

}  // namespace plad
