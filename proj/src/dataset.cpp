#include "plad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace plad {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

double parse_number(const std::string& tok, const std::string& path, int line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    fail(path, line, "non-numeric token '" + tok + "'");
  }
  if (used != tok.size()) fail(path, line, "non-numeric token '" + tok + "'");
  return v;
}

int round_half_up_255(double s) {
  return static_cast<int>(std::floor(255.0 * s + 0.5));
}

}  // namespace

PointCloud load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");

  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
    return true;
  };

  if (!next_line() || line != "ply") fail(path, lineno ? lineno : 1, "missing 'ply' magic");
  if (!next_line() || line != "format ascii 1.0")
    fail(path, lineno ? lineno : 2, "expected 'format ascii 1.0'");

  long vertex_count = -1;
  std::vector<std::string> props;
  bool in_vertex_element = false, header_done = false;
  while (!header_done) {
    if (!next_line()) fail(path, lineno, "header ended before end_header");
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word.empty()) continue;
    if (word == "element") {
      std::string name;
      long count = 0;
      if (!(ls >> name >> count)) fail(path, lineno, "malformed element line");
      if (name != "vertex") fail(path, lineno, "unsupported element '" + name + "'");
      if (vertex_count >= 0) fail(path, lineno, "duplicate vertex element");
      vertex_count = count;
      in_vertex_element = true;
    } else if (word == "property") {
      if (!in_vertex_element) fail(path, lineno, "property outside vertex element");
      std::string type, name;
      if (!(ls >> type >> name)) fail(path, lineno, "malformed property line");
      if (type == "list") fail(path, lineno, "list properties are not supported");
      props.push_back(name);
    } else if (word == "end_header") {
      header_done = true;
    } else {
      fail(path, lineno, "unrecognized header line '" + word + "'");
    }
  }
  if (vertex_count < 0) fail(path, lineno, "no vertex element declared");

  auto prop_index = [&](const char* name) {
    const auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
  if (ix < 0 || iy < 0 || iz < 0) fail(path, lineno, "missing x/y/z properties");
  const int inx = prop_index("nx"), iny = prop_index("ny"), inz = prop_index("nz");
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
  if ((inx >= 0 || iny >= 0 || inz >= 0) && !with_normals)
    fail(path, lineno, "incomplete nx/ny/nz properties");
  const int il = prop_index("label");

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  std::vector<double> row(props.size());
  for (long v = 0; v < vertex_count; ++v) {
    if (!next_line())
      fail(path, lineno, "declared " + std::to_string(vertex_count) + " vertices, found " +
                             std::to_string(v));
    std::istringstream ls(line);
    std::string tok;
    for (std::size_t p = 0; p < props.size(); ++p) {
      if (!(ls >> tok))
        fail(path, lineno, "row has " + std::to_string(p) + " of " +
                               std::to_string(props.size()) + " values");
      row[p] = parse_number(tok, path, lineno);
    }
    if (ls >> tok) fail(path, lineno, "trailing token '" + tok + "'");
    cloud.points.push_back({row[ix], row[iy], row[iz]});
    if (with_normals) cloud.normals.push_back({row[inx], row[iny], row[inz]});
    if (il >= 0) cloud.labels.push_back(row[il] != 0.0 ? 1 : 0);
  }
  return cloud;
}

namespace {

void write_ply_header(std::FILE* f, std::size_t n, bool normals, bool labels,
                      bool colors_and_score) {
  std::fprintf(f, "ply\nformat ascii 1.0\nelement vertex %zu\n", n);
  std::fprintf(f, "property double x\nproperty double y\nproperty double z\n");
  if (normals)
    std::fprintf(f, "property double nx\nproperty double ny\nproperty double nz\n");
  if (labels) std::fprintf(f, "property uchar label\n");
  if (colors_and_score)
    std::fprintf(f,
                 "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                 "property double score\n");
  std::fprintf(f, "end_header\n");
}

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void save_ply(const PointCloud& cloud, const std::string& path) {
  if (cloud.has_normals() && cloud.normals.size() != cloud.size())
    throw std::invalid_argument("save_ply: normals size mismatch");
  if (cloud.has_labels() && cloud.labels.size() != cloud.size())
    throw std::invalid_argument("save_ply: labels size mismatch");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  FileCloser closer{f};

  write_ply_header(f, cloud.size(), cloud.has_normals(), cloud.has_labels(), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    std::fprintf(f, "%.9f %.9f %.9f", p.x, p.y, p.z);
    if (cloud.has_normals()) {
      const Vec3& n = cloud.normals[i];
      std::fprintf(f, " %.9f %.9f %.9f", n.x, n.y, n.z);
    }
    if (cloud.has_labels()) std::fprintf(f, " %d", static_cast<int>(cloud.labels[i]));
    std::fprintf(f, "\n");
  }
  if (std::ferror(f)) throw std::runtime_error(path + ": write failed");
}

void save_heatmap_ply(const PointCloud& cloud, const std::vector<double>& point_scores,
                      const std::string& path) {
  if (point_scores.size() != cloud.size())
    throw std::invalid_argument("save_heatmap_ply: scores size mismatch");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  FileCloser closer{f};

  write_ply_header(f, cloud.size(), false, false, true);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const double s = std::clamp(point_scores[i], 0.0, 1.0);
    std::fprintf(f, "%.9f %.9f %.9f %d 0 %d %.9f\n", p.x, p.y, p.z, round_half_up_255(s),
                 round_half_up_255(1.0 - s), s);
  }
  if (std::ferror(f)) throw std::runtime_error(path + ": write failed");
}

namespace {

nlohmann::ordered_json spec_json(const SynthSpec& s) {
  return nlohmann::ordered_json{{"shape", s.shape},
                                {"points_per_cloud", s.points_per_cloud},
                                {"anomaly", s.anomaly},
                                {"count_min", s.count_min},
                                {"count_max", s.count_max},
                                {"radius_min", s.radius_min},
                                {"radius_max", s.radius_max},
                                {"jitter_sigma", s.jitter_sigma},
                                {"seed", s.seed},
                                {"train_normal", s.train_normal},
                                {"test_normal", s.test_normal},
                                {"test_anomalous", s.test_anomalous}};
}

nlohmann::ordered_json record_json(const SampleRecord& r) {
  nlohmann::ordered_json anomalies = nlohmann::ordered_json::array();
  for (const auto& a : r.anomalies)
    anomalies.push_back({{"type", a.type},
                         {"seed_index", a.seed_index},
                         {"radius", a.radius},
                         {"magnitude", a.magnitude},
                         {"slab_normal", {a.slab_normal.x, a.slab_normal.y, a.slab_normal.z}}});
  return nlohmann::ordered_json{{"cloud", r.cloud_path},   {"mask", r.mask_path},
                                {"category", r.category},  {"label", r.label},
                                {"split", r.split},        {"sample_seed", r.sample_seed},
                                {"anomalies", anomalies}};
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<SynthSpec>& specs,
                    const std::vector<SampleRecord>& records) {
  nlohmann::ordered_json j;
  j["specs"] = nlohmann::ordered_json::array();
  for (const auto& s : specs) j["specs"].push_back(spec_json(s));
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& r : records) j["samples"].push_back(record_json(r));
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<SampleRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!j.contains("samples") || !j["samples"].is_array())
    throw std::runtime_error(path + ": manifest lacks a samples array");

  std::vector<SampleRecord> records;
  for (const auto& s : j["samples"]) {
    SampleRecord r;
    r.cloud_path = s.at("cloud").get<std::string>();
    r.mask_path = s.value("mask", std::string());
    r.category = s.at("category").get<std::string>();
    r.label = s.at("label").get<int>();
    r.split = s.at("split").get<std::string>();
    r.sample_seed = s.value("sample_seed", std::uint64_t{0});
    for (const auto& a : s.value("anomalies", nlohmann::json::array())) {
      AnomalyInstance inst;
      inst.type = a.at("type").get<std::string>();
      inst.seed_index = a.at("seed_index").get<int>();
      inst.radius = a.at("radius").get<double>();
      inst.magnitude = a.at("magnitude").get<double>();
      const auto& sn = a.at("slab_normal");
      inst.slab_normal = {sn.at(0).get<double>(), sn.at(1).get<double>(),
                          sn.at(2).get<double>()};
      r.anomalies.push_back(inst);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SampleRecord> load_external_dataset(const std::string& root) {
  throw std::runtime_error(
      "load_external_dataset: no adapter is implemented. Expected layout under '" + root +
      "': <category>/{train,test}/*.ply with label columns embedded per point, and " +
      "manifest.json at the root listing every sample (cloud, category, label, split).");
}

}  // namespace plad
