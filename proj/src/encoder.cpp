#include "plad/encoder.hpp"

#include <stdexcept>
#include <string>

#include "plad/nn_ops.hpp"

namespace plad {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("encoder: num_layers < 1");
  if (embed_dim < 1) throw std::invalid_argument("encoder: embed_dim < 1");
  if (heads < 1 || embed_dim % heads != 0)
    throw std::invalid_argument("encoder: embed_dim not divisible by heads");
  if (out_dim < 1) throw std::invalid_argument("encoder: out_dim < 1");
  if (token_hidden < 1) throw std::invalid_argument("encoder: token_hidden < 1");
  if (tap_layers.empty()) throw std::invalid_argument("encoder: no tap layers");
  int prev = 0;
  for (int t : tap_layers) {
    if (t <= prev) throw std::invalid_argument("encoder: tap layers must be strictly increasing");
    if (t < 1 || t > num_layers)
      throw std::invalid_argument("encoder: tap layer " + std::to_string(t) + " out of range");
    prev = t;
  }
}

PointEncoder::PointEncoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.embed_dim;
  const int h = cfg_.token_hidden;

  tok_w1_ = reg.add("encoder.tok.w1", 3, h, glorot_fill(rng, 3, h));
  tok_b1_ = reg.add("encoder.tok.b1", 1, h, constant_fill(1, h, 0.0), false);
  tok_w2_ = reg.add("encoder.tok.w2", h, d, glorot_fill(rng, h, d));
  tok_b2_ = reg.add("encoder.tok.b2", 1, d, constant_fill(1, d, 0.0), false);
  pos_w_ = reg.add("encoder.pos.w", 3, d, glorot_fill(rng, 3, d));
  pos_b_ = reg.add("encoder.pos.b", 1, d, constant_fill(1, d, 0.0), false);
  cls_ = reg.add("encoder.cls", 1, d, gaussian_fill(rng, 1, d, 0.02));

  layers_.resize(cfg_.num_layers);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "encoder.l" + std::to_string(l + 1) + ".";
    Layer& ly = layers_[l];
    ly.ln1_g = reg.add(p + "ln1.g", 1, d, constant_fill(1, d, 1.0), false);
    ly.ln1_b = reg.add(p + "ln1.b", 1, d, constant_fill(1, d, 0.0), false);
    ly.wq = reg.add(p + "attn.wq", d, d, glorot_fill(rng, d, d));
    ly.bq = reg.add(p + "attn.bq", 1, d, constant_fill(1, d, 0.0), false);
    // No key bias: softmax scores are invariant to a shared shift of the
    // keys, so such a parameter could never receive gradient.
    ly.wk = reg.add(p + "attn.wk", d, d, glorot_fill(rng, d, d));
    ly.wv = reg.add(p + "attn.wv", d, d, glorot_fill(rng, d, d));
    ly.bv = reg.add(p + "attn.bv", 1, d, constant_fill(1, d, 0.0), false);
    ly.wo = reg.add(p + "attn.wo", d, d, glorot_fill(rng, d, d));
    ly.bo = reg.add(p + "attn.bo", 1, d, constant_fill(1, d, 0.0), false);
    ly.ln2_g = reg.add(p + "ln2.g", 1, d, constant_fill(1, d, 1.0), false);
    ly.ln2_b = reg.add(p + "ln2.b", 1, d, constant_fill(1, d, 0.0), false);
    ly.ff1_w = reg.add(p + "ffn.w1", d, 2 * d, glorot_fill(rng, d, 2 * d));
    ly.ff1_b = reg.add(p + "ffn.b1", 1, 2 * d, constant_fill(1, 2 * d, 0.0), false);
    ly.ff2_w = reg.add(p + "ffn.w2", 2 * d, d, glorot_fill(rng, 2 * d, d));
    ly.ff2_b = reg.add(p + "ffn.b2", 1, d, constant_fill(1, d, 0.0), false);
  }

  final_ln_g_ = reg.add("encoder.final_ln.g", 1, d, constant_fill(1, d, 1.0), false);
  final_ln_b_ = reg.add("encoder.final_ln.b", 1, d, constant_fill(1, d, 0.0), false);
  proj_w_ = reg.add("encoder.proj.w", d, cfg_.out_dim, glorot_fill(rng, d, cfg_.out_dim));
  proj_b_ = reg.add("encoder.proj.b", 1, cfg_.out_dim, constant_fill(1, cfg_.out_dim, 0.0), false);
}

ag::Tensor PointEncoder::pooled_tokens(const PointCloud& cloud,
                                       const PatchSet& patches) const {
  const int g = patches.patch_count();
  const int m = patches.patch_size();
  if (g < 1 || m < 1) throw std::invalid_argument("encoder: empty patch set");
  const int n = static_cast<int>(cloud.points.size());

  // All member coordinates relative to their patch center, stacked so the
  // shared MLP runs as one big matmul and the pool groups M consecutive rows.
  std::vector<double> rel(static_cast<std::size_t>(g) * m * 3);
  for (int i = 0; i < g; ++i) {
    const int ci = patches.centers[i];
    if (ci < 0 || ci >= n) throw std::invalid_argument("encoder: center index out of range");
    if (static_cast<int>(patches.members[i].size()) != m)
      throw std::invalid_argument("encoder: ragged patch set");
    const Vec3 c = cloud.points[ci];
    for (int j = 0; j < m; ++j) {
      const int pj = patches.members[i][j];
      if (pj < 0 || pj >= n) throw std::invalid_argument("encoder: member index out of range");
      const Vec3 p = cloud.points[pj] - c;
      double* r = rel.data() + (static_cast<std::size_t>(i) * m + j) * 3;
      r[0] = p.x; r[1] = p.y; r[2] = p.z;
    }
  }
  ag::Tensor coords = ag::Tensor::constant(g * m, 3, std::move(rel));
  ag::Tensor h1 = ag::gelu(nn::linear(coords, tok_w1_, tok_b1_));
  ag::Tensor h2 = nn::linear(h1, tok_w2_, tok_b2_);
  return ag::maxpool_rows(h2, m);
}

ag::Tensor PointEncoder::tokenize(const PointCloud& cloud,
                                  const PatchSet& patches) const {
  ag::Tensor pooled = pooled_tokens(cloud, patches);
  const int g = pooled.rows();
  std::vector<double> cent(static_cast<std::size_t>(g) * 3);
  for (int i = 0; i < g; ++i) {
    const Vec3 c = cloud.points[patches.centers[i]];
    cent[3 * i] = c.x; cent[3 * i + 1] = c.y; cent[3 * i + 2] = c.z;
  }
  ag::Tensor centers = ag::Tensor::constant(g, 3, std::move(cent));
  ag::Tensor body = ag::add(pooled, nn::linear(centers, pos_w_, pos_b_));
  return ag::concat_rows({nn::broadcast_row(cls_, 1), body});
}

FeaturePyramid PointEncoder::encode(const ag::Tensor& tokens) const {
  if (!tokens.defined() || tokens.cols() != cfg_.embed_dim || tokens.rows() < 2)
    throw std::invalid_argument("encoder: token matrix shape mismatch");
  const int t = tokens.rows();

  FeaturePyramid out;
  ag::Tensor x = tokens;
  std::size_t next_tap = 0;
  for (int l = 1; l <= cfg_.num_layers; ++l) {
    const Layer& ly = layers_[l - 1];
    ag::Tensor h = ag::layer_norm_rows(x, ly.ln1_g, ly.ln1_b);
    ag::Tensor a = ag::multihead_attention(nn::linear(h, ly.wq, ly.bq),
                                           ag::matmul(h, ly.wk),
                                           nn::linear(h, ly.wv, ly.bv),
                                           cfg_.heads);
    x = ag::add(x, nn::linear(a, ly.wo, ly.bo));
    ag::Tensor h2 = ag::layer_norm_rows(x, ly.ln2_g, ly.ln2_b);
    ag::Tensor f = nn::linear(ag::gelu(nn::linear(h2, ly.ff1_w, ly.ff1_b)),
                              ly.ff2_w, ly.ff2_b);
    x = ag::add(x, f);
    if (next_tap < cfg_.tap_layers.size() && cfg_.tap_layers[next_tap] == l) {
      out.taps.push_back(ag::take_rows(x, 1, t - 1));
      ++next_tap;
    }
  }

  ag::Tensor final_state = ag::layer_norm_rows(x, final_ln_g_, final_ln_b_);
  out.cls = ag::take_rows(final_state, 0, 1);
  bool zero_row = false;
  out.global = ag::l2_normalize_rows(nn::linear(out.cls, proj_w_, proj_b_), &zero_row);
  if (zero_row)
    throw std::runtime_error("encoder: global embedding projected to the zero vector");
  return out;
}

}  // namespace plad
