#include "plad/geonet.hpp"

#include <stdexcept>

#include "plad/nn_ops.hpp"

namespace plad {

void GeoNetConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1 || out_dim < 1)
    throw std::invalid_argument("geonet: widths must be positive");
}

GeoNet::GeoNet(const GeoNetConfig& cfg, ParamRegistry& reg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int h1 = cfg_.hidden1, h2 = cfg_.hidden2, d = cfg_.out_dim;
  w1_ = reg.add("geo.l1.w", 3, h1, glorot_fill(rng, 3, h1));
  b1_ = reg.add("geo.l1.b", 1, h1, constant_fill(1, h1, 0.0), false);
  ln1_g_ = reg.add("geo.l1.ln.g", 1, h1, constant_fill(1, h1, 1.0), false);
  ln1_b_ = reg.add("geo.l1.ln.b", 1, h1, constant_fill(1, h1, 0.0), false);
  w2_ = reg.add("geo.l2.w", h1, h2, glorot_fill(rng, h1, h2));
  b2_ = reg.add("geo.l2.b", 1, h2, constant_fill(1, h2, 0.0), false);
  ln2_g_ = reg.add("geo.l2.ln.g", 1, h2, constant_fill(1, h2, 1.0), false);
  ln2_b_ = reg.add("geo.l2.ln.b", 1, h2, constant_fill(1, h2, 0.0), false);
  w3_ = reg.add("geo.l3.w", h2, d, glorot_fill(rng, h2, d));
  b3_ = reg.add("geo.l3.b", 1, d, constant_fill(1, d, 0.0), false);
  ln3_g_ = reg.add("geo.l3.ln.g", 1, d, constant_fill(1, d, 1.0), false);
  ln3_b_ = reg.add("geo.l3.ln.b", 1, d, constant_fill(1, d, 0.0), false);
  phi_w_ = reg.add("geo.phi.w", d, d, glorot_fill(rng, d, d));
  phi_b_ = reg.add("geo.phi.b", 1, d, constant_fill(1, d, 0.0), false);
}

ag::Tensor GeoNet::forward(const PointCloud& cloud, const PatchSet& patches) const {
  const int g = patches.patch_count();
  const int m = patches.patch_size();
  if (g < 1 || m < 1) throw std::invalid_argument("geonet: empty patch set");
  const int n = static_cast<int>(cloud.points.size());

  std::vector<double> rel(static_cast<std::size_t>(g) * m * 3);
  for (int i = 0; i < g; ++i) {
    if (static_cast<int>(patches.members[i].size()) != m)
      throw std::invalid_argument("geonet: ragged patch set");
    const int ci = patches.centers[i];
    if (ci < 0 || ci >= n) throw std::invalid_argument("geonet: center index out of range");
    const Vec3 c = cloud.points[ci];
    for (int j = 0; j < m; ++j) {
      const int pj = patches.members[i][j];
      if (pj < 0 || pj >= n) throw std::invalid_argument("geonet: member index out of range");
      const Vec3 p = cloud.points[pj] - c;
      double* r = rel.data() + (static_cast<std::size_t>(i) * m + j) * 3;
      r[0] = p.x; r[1] = p.y; r[2] = p.z;
    }
  }
  ag::Tensor x = ag::Tensor::constant(g * m, 3, std::move(rel));
  x = ag::relu(ag::layer_norm_rows(nn::linear(x, w1_, b1_), ln1_g_, ln1_b_));
  x = ag::relu(ag::layer_norm_rows(nn::linear(x, w2_, b2_), ln2_g_, ln2_b_));
  x = ag::relu(ag::layer_norm_rows(nn::linear(x, w3_, b3_), ln3_g_, ln3_b_));
  ag::Tensor pooled = ag::maxpool_rows(x, m);
  return nn::linear(pooled, phi_w_, phi_b_);
}

}  // namespace plad
