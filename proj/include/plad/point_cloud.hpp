#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace plad {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(norm2()); }
};

/// Squared distance, deliberately compiled once (not inline) so the sampled
/// pipeline, the kd-tree, and test oracles all see bit-identical values and
/// deterministic tie handling.
double dist2(const Vec3& a, const Vec3& b);

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;        // empty or size() == points.size()
  std::vector<uint8_t> labels;      // empty or per-point 1 = anomalous

  size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
  bool has_labels() const { return !labels.empty(); }
};

/// G patches of M member indices each; centers[i] is always inside row i.
struct PatchSet {
  std::vector<int> centers;
  std::vector<std::vector<int>> members;

  int patch_count() const { return static_cast<int>(centers.size()); }
  int patch_size() const { return members.empty() ? 0 : static_cast<int>(members[0].size()); }
};

Vec3 centroid(const std::vector<Vec3>& pts);

/// Center at the centroid and scale so the farthest point sits on the unit
/// sphere. A cloud of identical points collapses to all-zeros. Normals and
/// labels pass through untouched.
PointCloud normalize_cloud(const PointCloud& cloud);

/// Deterministic farthest-point sampling. The seed is the point farthest
/// from the centroid; every later pick maximizes the minimum distance to the
/// picked set. All ties resolve to the lowest index.
std::vector<int> farthest_point_sampling(const PointCloud& cloud, int count);

/// For each center, the m nearest cloud points (self included) ordered by
/// (distance, index). If more than m points coincide with the center the
/// center index is still forced into its own row.
PatchSet knn_group(const PointCloud& cloud, const std::vector<int>& centers, int m);

/// PCA normals over the k-neighborhood (query included), oriented away from
/// the cloud centroid; an exactly tangent normal keeps the sign that makes
/// its first nonzero component positive. Rank-deficient (collinear)
/// neighborhoods produce an arbitrary orthogonal unit normal and set the
/// per-point flag when `degenerate` is supplied.
PointCloud estimate_normals(const PointCloud& cloud, int k,
                            std::vector<uint8_t>* degenerate = nullptr);

/// Eigen-decomposition of a symmetric 3x3 matrix (row-major, upper part
/// read). Returns eigenvalues ascending with matching unit eigenvectors.
void jacobi_eig3(const std::array<double, 9>& m, std::array<double, 3>& eigenvalues,
                 std::array<std::array<double, 3>, 3>& eigenvectors);

}  // namespace plad
