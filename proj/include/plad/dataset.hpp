#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plad/point_cloud.hpp"

namespace plad {

/// Reads an ASCII PLY file. Requires x,y,z vertex properties; picks up
/// nx,ny,nz and label when declared; tolerates and skips any other declared
/// vertex property (red, green, blue, score, ...). Malformed headers, count
/// mismatches, and bad tokens raise std::runtime_error naming the line.
PointCloud load_ply(const std::string& path);

/// Writes a cloud as ASCII PLY with 9 decimal digits: x y z, plus nx ny nz
/// when normals are present and label when labels are present.
void save_ply(const PointCloud& cloud, const std::string& path);

/// Writes vertices colored by a fixed blue-to-red linear colormap:
/// red = round-half-up(255*s), green = 0, blue = round-half-up(255*(1-s)),
/// with the raw score kept as a scalar property. Scores are clamped to [0,1].
void save_heatmap_ply(const PointCloud& cloud, const std::vector<double>& point_scores,
                      const std::string& path);

// One deformation applied to a base cloud. The seed log in the manifest keeps
// enough of this to recompute which points were labeled.
struct AnomalyInstance {
  std::string type;       // bump | dent | crack
  int seed_index = 0;     // index of the seed point in the base cloud
  double radius = 0.0;    // geodesic radius of the deformed neighborhood
  double magnitude = 0.0; // peak displacement along the normal
  Vec3 slab_normal{0, 0, 0};  // crack only: normal of the slab plane
};

struct SampleRecord {
  std::string cloud_path;  // relative to the manifest directory
  std::string mask_path;   // empty: the mask lives in the cloud's label column
  std::string category;
  int label = 0;  // object level: 1 when any anomaly was applied
  std::string split;  // train | test
  std::uint64_t sample_seed = 0;
  std::vector<AnomalyInstance> anomalies;
};

struct SynthSpec {
  std::string shape = "sphere";  // sphere | cube | cylinder, also the category name
  int points_per_cloud = 2048;
  std::string anomaly = "bump";  // bump | dent | crack
  int count_min = 1, count_max = 1;
  double radius_min = 0.15, radius_max = 0.3;
  double jitter_sigma = 0.005;
  std::uint64_t seed = 0;
  int train_normal = 40, test_normal = 20, test_anomalous = 20;
};

/// Samples `n` points uniformly on the unit-scale base surface and jitters
/// each coordinate with Gaussian noise. Deterministic in `sample_seed`.
PointCloud synth_base_cloud(const std::string& shape, int n, double jitter_sigma,
                            std::uint64_t sample_seed);

/// Shortest-path distances from `source` over the symmetrized k-nearest-
/// neighbor graph with Euclidean edge weights; unreachable points get +inf.
std::vector<double> geodesic_distances(const PointCloud& cloud, int source, int graph_k = 8);

/// Deforms geodesic neighborhoods of the base cloud and labels the affected
/// points: bump pushes along the outward normal, dent pulls inward, crack
/// restricts the dent to a thin slab through the seed point. Displacement
/// falls off as (1 - d/radius)^2 in geodesic distance d.
PointCloud apply_anomalies(const PointCloud& base,
                           const std::vector<AnomalyInstance>& anomalies,
                           int graph_k = 8);

/// Generates the benchmark for every spec under `out_dir` (one subdirectory
/// per category with train/ and test/ splits), writes `manifest.json`, and
/// returns the records. Per-sample seeds chain from each spec's seed, so the
/// same specs produce bitwise-identical files.
std::vector<SampleRecord> synth_generate(const std::vector<SynthSpec>& specs,
                                         const std::string& out_dir);

/// Serializes records (plus the generating specs) as a JSON manifest.
void write_manifest(const std::string& path, const std::vector<SynthSpec>& specs,
                    const std::vector<SampleRecord>& records);

/// Parses a manifest written by write_manifest.
std::vector<SampleRecord> read_manifest(const std::string& path);

/// Adapter for externally produced scan datasets. Not implemented: the call
/// documents the directory layout this artifact would expect and throws.
/// Expected layout: <root>/<category>/{train,test}/*.ply with embedded label
/// columns, plus <root>/manifest.json listing every sample as in
/// write_manifest.
std::vector<SampleRecord> load_external_dataset(const std::string& root);

}  // namespace plad
