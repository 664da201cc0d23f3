#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>

#include "plad/dataset.hpp"
#include "plad/kdtree.hpp"
#include "plad/rng.hpp"

namespace plad {

namespace {

constexpr double kPi = 3.14159265358979323846;
// fraction of the geodesic radius used as the crack slab's half-thickness
constexpr double kCrackSlabFraction = 0.2;

Vec3 sample_sphere(Rng& rng) {
  while (true) {
    Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double n = v.norm();
    if (n > 1e-12) return v * (1.0 / n);
  }
}

Vec3 sample_cube(Rng& rng) {
  const int face = rng.uniform_int(0, 5);
  const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
  switch (face) {
    case 0: return {+1.0, u, v};
    case 1: return {-1.0, u, v};
    case 2: return {u, +1.0, v};
    case 3: return {u, -1.0, v};
    case 4: return {u, v, +1.0};
    default: return {u, v, -1.0};
  }
}

Vec3 sample_cylinder(Rng& rng) {
  // unit radius, height 2: side area 4*pi, each cap pi, total 6*pi
  const double pick = rng.uniform01();
  if (pick < 2.0 / 3.0) {
    const double th = rng.uniform(0.0, 2.0 * kPi);
    return {std::cos(th), std::sin(th), rng.uniform(-1.0, 1.0)};
  }
  const double z = pick < 5.0 / 6.0 ? 1.0 : -1.0;
  const double r = std::sqrt(rng.uniform01());
  const double th = rng.uniform(0.0, 2.0 * kPi);
  return {r * std::cos(th), r * std::sin(th), z};
}

}  // namespace

PointCloud synth_base_cloud(const std::string& shape, int n, double jitter_sigma,
                            std::uint64_t sample_seed) {
  if (n <= 0) throw std::invalid_argument("synth_base_cloud: n <= 0");
  if (jitter_sigma < 0.0) throw std::invalid_argument("synth_base_cloud: negative jitter");
  Vec3 (*sampler)(Rng&) = nullptr;
  if (shape == "sphere")
    sampler = sample_sphere;
  else if (shape == "cube")
    sampler = sample_cube;
  else if (shape == "cylinder")
    sampler = sample_cylinder;
  else
    throw std::invalid_argument("synth_base_cloud: unknown shape '" + shape + "'");

  Rng rng(sample_seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (int i = 0; i < n; ++i) cloud.points.push_back(sampler(rng));
  if (jitter_sigma > 0.0)
    for (Vec3& p : cloud.points) {
      p.x += rng.gaussian() * jitter_sigma;
      p.y += rng.gaussian() * jitter_sigma;
      p.z += rng.gaussian() * jitter_sigma;
    }
  return cloud;
}

std::vector<double> geodesic_distances(const PointCloud& cloud, int source, int graph_k) {
  const int n = static_cast<int>(cloud.size());
  if (n == 0) throw std::invalid_argument("geodesic_distances: empty cloud");
  if (source < 0 || source >= n)
    throw std::invalid_argument("geodesic_distances: source out of range");
  if (graph_k < 1 || graph_k >= n)
    throw std::invalid_argument("geodesic_distances: graph_k out of range");

  KdTree tree(cloud.points);
  std::vector<std::set<int>> adj(n);
  for (int i = 0; i < n; ++i)
    for (int j : tree.knn_indices(cloud.points[i], graph_k + 1)) {
      if (j == i) continue;
      adj[i].insert(j);
      adj[j].insert(i);
    }

  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  dist[source] = 0.0;
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap;
  heap.push({0.0, source});
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (int v : adj[u]) {
      const double nd = d + std::sqrt(dist2(cloud.points[u], cloud.points[v]));
      if (nd < dist[v]) {
        dist[v] = nd;
        heap.push({nd, v});
      }
    }
  }
  return dist;
}

PointCloud apply_anomalies(const PointCloud& base,
                           const std::vector<AnomalyInstance>& anomalies, int graph_k) {
  const int n = static_cast<int>(base.size());
  if (n == 0) throw std::invalid_argument("apply_anomalies: empty cloud");

  PointCloud out;
  out.points = base.points;
  out.labels.assign(n, 0);
  if (anomalies.empty()) return out;

  // displacement directions and neighborhoods come from the undeformed cloud
  const PointCloud with_normals = estimate_normals(base, std::min(16, n - 1));
  for (const auto& a : anomalies) {
    if (a.seed_index < 0 || a.seed_index >= n)
      throw std::invalid_argument("apply_anomalies: seed index out of range");
    if (!(a.radius > 0.0)) throw std::invalid_argument("apply_anomalies: radius <= 0");
    double sign;
    if (a.type == "bump")
      sign = 1.0;
    else if (a.type == "dent" || a.type == "crack")
      sign = -1.0;
    else
      throw std::invalid_argument("apply_anomalies: unknown type '" + a.type + "'");
    const bool slab = a.type == "crack";
    Vec3 slab_n{0, 0, 0};
    if (slab) {
      const double sn = a.slab_normal.norm();
      if (sn < 1e-12)
        throw std::invalid_argument("apply_anomalies: crack without slab normal");
      slab_n = a.slab_normal * (1.0 / sn);
    }

    const auto gd = geodesic_distances(base, a.seed_index, graph_k);
    const Vec3 seed_point = base.points[a.seed_index];
    const double half_thickness = kCrackSlabFraction * a.radius;
    for (int i = 0; i < n; ++i) {
      if (!(gd[i] <= a.radius)) continue;
      if (slab && std::fabs((base.points[i] - seed_point).dot(slab_n)) > half_thickness)
        continue;
      const double fall = 1.0 - gd[i] / a.radius;
      out.points[i] += with_normals.normals[i] * (sign * a.magnitude * fall * fall);
      out.labels[i] = 1;
    }
  }
  return out;
}

namespace {

std::uint64_t chain_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = seed;
  for (char c : tag) h = splitmix64(h ^ static_cast<unsigned char>(c));
  return h;
}

void validate_spec(const SynthSpec& s) {
  if (s.shape != "sphere" && s.shape != "cube" && s.shape != "cylinder")
    throw std::invalid_argument("synth_generate: unknown shape '" + s.shape + "'");
  if (s.anomaly != "bump" && s.anomaly != "dent" && s.anomaly != "crack")
    throw std::invalid_argument("synth_generate: unknown anomaly '" + s.anomaly + "'");
  if (s.points_per_cloud < 16)
    throw std::invalid_argument("synth_generate: points_per_cloud < 16");
  if (s.count_min < 0 || s.count_max < s.count_min)
    throw std::invalid_argument("synth_generate: bad anomaly count range");
  if (!(s.radius_min > 0.0) || s.radius_max < s.radius_min)
    throw std::invalid_argument("synth_generate: bad anomaly radius range");
  if (s.radius_max >= 1.0)
    throw std::invalid_argument("synth_generate: anomaly radius reaches the shape scale");
  if (s.jitter_sigma < 0.0) throw std::invalid_argument("synth_generate: negative jitter");
  if (s.train_normal < 0 || s.test_normal < 0 || s.test_anomalous < 0)
    throw std::invalid_argument("synth_generate: negative sample count");
}

}  // namespace

std::vector<SampleRecord> synth_generate(const std::vector<SynthSpec>& specs,
                                         const std::string& out_dir) {
  if (specs.empty()) throw std::invalid_argument("synth_generate: no specs");
  std::set<std::string> seen;
  for (const auto& s : specs) {
    validate_spec(s);
    if (!seen.insert(s.shape).second)
      throw std::invalid_argument("synth_generate: duplicate category '" + s.shape + "'");
  }

  namespace fs = std::filesystem;
  std::vector<SampleRecord> records;
  for (const auto& spec : specs) {
    const std::uint64_t cat_seed = chain_seed(spec.seed, spec.shape);
    fs::create_directories(fs::path(out_dir) / spec.shape / "train");
    fs::create_directories(fs::path(out_dir) / spec.shape / "test");

    int ordinal = 0;
    auto emit = [&](const std::string& split, const std::string& stem, int index,
                    bool anomalous) {
      SampleRecord rec;
      rec.sample_seed = splitmix64(cat_seed + static_cast<std::uint64_t>(ordinal++));
      rec.category = spec.shape;
      rec.split = split;

      PointCloud base = synth_base_cloud(spec.shape, spec.points_per_cloud,
                                         spec.jitter_sigma, rec.sample_seed);
      if (anomalous) {
        Rng arng(splitmix64(rec.sample_seed ^ 0xA5A5A5A5A5A5A5A5ull));
        const int count = arng.uniform_int(spec.count_min, spec.count_max);
        for (int a = 0; a < count; ++a) {
          AnomalyInstance inst;
          inst.type = spec.anomaly;
          inst.seed_index = arng.uniform_int(0, spec.points_per_cloud - 1);
          inst.radius = arng.uniform(spec.radius_min, spec.radius_max);
          inst.magnitude = 0.5 * inst.radius;
          if (spec.anomaly == "crack") inst.slab_normal = sample_sphere(arng);
          rec.anomalies.push_back(inst);
        }
      }
      PointCloud cloud = apply_anomalies(base, rec.anomalies);
      rec.label = rec.anomalies.empty() ? 0 : 1;
      if (rec.label == 1 &&
          std::none_of(cloud.labels.begin(), cloud.labels.end(), [](uint8_t l) { return l; }))
        throw std::logic_error("synth_generate: anomalous sample without labeled points");

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d.ply", stem.c_str(), index);
      rec.cloud_path = spec.shape + "/" + split + "/" + name;
      save_ply(cloud, (fs::path(out_dir) / rec.cloud_path).string());
      records.push_back(std::move(rec));
    };

    for (int i = 0; i < spec.train_normal; ++i) emit("train", "normal", i, false);
    for (int i = 0; i < spec.test_normal; ++i) emit("test", "normal", i, false);
    for (int i = 0; i < spec.test_anomalous; ++i) emit("test", "anomalous", i, true);
  }
  write_manifest((fs::path(out_dir) / "manifest.json").string(), specs, records);
  return records;
}

}  // namespace plad
