#include "plad/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "plad/kdtree.hpp"

namespace plad {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c;
  for (const Vec3& p : pts) c += p;
  const double inv = 1.0 / static_cast<double>(pts.size());
  return c * inv;
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.points.empty()) throw std::invalid_argument("normalize_cloud: empty cloud");
  for (const Vec3& p : cloud.points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("normalize_cloud: non-finite coordinate");

  PointCloud out = cloud;
  const Vec3 c = centroid(cloud.points);
  double maxn = 0.0;
  for (Vec3& p : out.points) {
    p = p - c;
    maxn = std::max(maxn, p.norm());
  }
  if (maxn > 0.0) {
    const double inv = 1.0 / maxn;
    for (Vec3& p : out.points) p = p * inv;
  }
  return out;
}

std::vector<int> farthest_point_sampling(const PointCloud& cloud, int count) {
  const int n = static_cast<int>(cloud.size());
  if (count < 1 || count > n)
    throw std::invalid_argument("farthest_point_sampling: count out of range");

  const Vec3 c = centroid(cloud.points);
  int seed = 0;
  double best = dist2(cloud.points[0], c);
  for (int i = 1; i < n; ++i) {
    const double d = dist2(cloud.points[i], c);
    if (d > best) {
      best = d;
      seed = i;
    }
  }

  std::vector<int> picked;
  picked.reserve(count);
  picked.push_back(seed);
  // min squared distance to the picked set; -1 marks already-picked
  std::vector<double> mind2(n);
  for (int i = 0; i < n; ++i) mind2[i] = dist2(cloud.points[i], cloud.points[seed]);
  mind2[seed] = -1.0;

  while (static_cast<int>(picked.size()) < count) {
    int next = -1;
    double bestd = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      if (mind2[i] > bestd) {
        bestd = mind2[i];
        next = i;
      }
    picked.push_back(next);
    mind2[next] = -1.0;
    for (int i = 0; i < n; ++i)
      if (mind2[i] >= 0.0)
        mind2[i] = std::min(mind2[i], dist2(cloud.points[i], cloud.points[next]));
  }
  return picked;
}

PatchSet knn_group(const PointCloud& cloud, const std::vector<int>& centers, int m) {
  const int n = static_cast<int>(cloud.size());
  if (centers.empty()) throw std::invalid_argument("knn_group: no centers");
  if (m < 1 || m > n) throw std::invalid_argument("knn_group: m out of range");
  for (int c : centers)
    if (c < 0 || c >= n) throw std::invalid_argument("knn_group: center out of range");

  KdTree tree(cloud.points);
  PatchSet patches;
  patches.centers = centers;
  patches.members.reserve(centers.size());
  for (int c : centers) {
    std::vector<int> row = tree.knn_indices(cloud.points[c], m);
    // With > m coincident points the center itself can be displaced by
    // lower-index duplicates; it must still belong to its own patch. All m
    // entries are then at distance zero, so order stays valid.
    if (std::find(row.begin(), row.end(), c) == row.end()) row.back() = c;
    patches.members.push_back(std::move(row));
  }
  return patches;
}

void jacobi_eig3(const std::array<double, 9>& m, std::array<double, 3>& eigenvalues,
                 std::array<std::array<double, 3>, 3>& eigenvectors) {
  double a[3][3] = {{m[0], m[1], m[2]}, {m[3], m[4], m[5]}, {m[6], m[7], m[8]}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const double scale = std::fabs(a[0][0]) + std::fabs(a[1][1]) + std::fabs(a[2][2]) +
                       std::numeric_limits<double>::min();

  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off <= scale * scale * 1e-30) break;
    static const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pq : pairs) {
      const int p = pq[0], q = pq[1];
      if (a[p][q] == 0.0) continue;
      const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
      const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                       (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      const double app = a[p][p], aqq = a[q][q], apq = a[p][q];
      a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
      a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
      a[p][q] = a[q][p] = 0.0;
      const int r = 3 - p - q;  // the remaining axis
      const double arp = a[r][p], arq = a[r][q];
      a[r][p] = a[p][r] = c * arp - s * arq;
      a[r][q] = a[q][r] = s * arp + c * arq;
      for (int i = 0; i < 3; ++i) {
        const double vip = v[i][p], viq = v[i][q];
        v[i][p] = c * vip - s * viq;
        v[i][q] = s * vip + c * viq;
      }
    }
  }

  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int x, int y) {
    if (a[x][x] != a[y][y]) return a[x][x] < a[y][y];
    return x < y;
  });
  for (int j = 0; j < 3; ++j) {
    eigenvalues[j] = a[order[j]][order[j]];
    Vec3 col{v[0][order[j]], v[1][order[j]], v[2][order[j]]};
    const double nrm = col.norm();
    eigenvectors[j] = {col.x / nrm, col.y / nrm, col.z / nrm};
  }
}

PointCloud estimate_normals(const PointCloud& cloud, int k,
                            std::vector<uint8_t>* degenerate) {
  const int n = static_cast<int>(cloud.size());
  if (k < 3) throw std::invalid_argument("estimate_normals: k < 3");
  if (n < k) throw std::invalid_argument("estimate_normals: cloud smaller than k");

  KdTree tree(cloud.points);
  const Vec3 c0 = centroid(cloud.points);
  PointCloud out = cloud;
  out.normals.assign(n, Vec3{});
  if (degenerate) degenerate->assign(n, 0);

  for (int i = 0; i < n; ++i) {
    const std::vector<int> nbrs = tree.knn_indices(cloud.points[i], k);
    Vec3 mean;
    for (int j : nbrs) mean += cloud.points[j];
    mean = mean * (1.0 / k);
    std::array<double, 9> cov{};
    for (int j : nbrs) {
      const Vec3 d = cloud.points[j] - mean;
      cov[0] += d.x * d.x; cov[1] += d.x * d.y; cov[2] += d.x * d.z;
      cov[4] += d.y * d.y; cov[5] += d.y * d.z; cov[8] += d.z * d.z;
    }
    cov[3] = cov[1]; cov[6] = cov[2]; cov[7] = cov[5];
    for (double& e : cov) e /= k;

    std::array<double, 3> eval;
    std::array<std::array<double, 3>, 3> evec;
    jacobi_eig3(cov, eval, evec);
    Vec3 nrm{evec[0][0], evec[0][1], evec[0][2]};
    if (degenerate && eval[1] <= 1e-12 * std::max(eval[2], 1e-300)) (*degenerate)[i] = 1;

    const double side = nrm.dot(cloud.points[i] - c0);
    if (side < 0.0) {
      nrm = nrm * -1.0;
    } else if (side == 0.0) {
      // exactly tangent: pick the sign giving a positive first nonzero entry
      double lead = nrm.x != 0.0 ? nrm.x : (nrm.y != 0.0 ? nrm.y : nrm.z);
      if (lead < 0.0) nrm = nrm * -1.0;
    }
    out.normals[i] = nrm;
  }
  return out;
}

}  // namespace plad
