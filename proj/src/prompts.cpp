#include "plad/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "plad/kdtree.hpp"
#include "plad/nn_ops.hpp"

namespace plad {

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

constexpr double kTauLo = 1e-3;
constexpr double kTauHi = 1.0;

}  // namespace

void PromptConfig::validate() const {
  if (context_length < 0) throw std::invalid_argument("prompts: context_length < 0");
  if (text_layers < 1) throw std::invalid_argument("prompts: text_layers < 1");
  if (text_dim < 1 || text_heads < 1 || text_dim % text_heads != 0)
    throw std::invalid_argument("prompts: text_dim not divisible by text_heads");
  if (out_dim < 1) throw std::invalid_argument("prompts: out_dim < 1");
  if (!(tau_init > 0.0)) throw std::invalid_argument("prompts: tau_init must be positive");
  if (split_words(suffix_normal).empty() && split_words(prefix_normal).empty() &&
      context_length == 0)
    throw std::invalid_argument("prompts: normal prompt sequence is empty");
  if (split_words(suffix_defect).empty() && split_words(prefix_defect).empty() &&
      context_length == 0)
    throw std::invalid_argument("prompts: defect prompt sequence is empty");
}

Vocabulary::Vocabulary(const std::vector<std::string>& sentences) {
  std::set<std::string> uniq;
  for (const std::string& s : sentences)
    for (const std::string& w : split_words(s)) uniq.insert(w);
  words_.assign(uniq.begin(), uniq.end());
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) ids_[words_[i]] = i;
}

std::vector<int> Vocabulary::tokenize(const std::string& sentence) const {
  std::vector<int> out;
  for (const std::string& w : split_words(sentence)) {
    auto it = ids_.find(w);
    if (it == ids_.end())
      throw std::invalid_argument("unknown word in template: " + w);
    out.push_back(it->second);
  }
  return out;
}

PromptModel::PromptModel(const PromptConfig& cfg, ParamRegistry& reg, Rng& rng)
    : cfg_(cfg),
      vocab_({cfg.prefix_normal, cfg.suffix_normal, cfg.prefix_defect,
              cfg.suffix_defect}) {
  cfg_.validate();
  prefix_ids_[0] = vocab_.tokenize(cfg_.prefix_normal);
  suffix_ids_[0] = vocab_.tokenize(cfg_.suffix_normal);
  prefix_ids_[1] = vocab_.tokenize(cfg_.prefix_defect);
  suffix_ids_[1] = vocab_.tokenize(cfg_.suffix_defect);

  const int dt = cfg_.text_dim;
  std::size_t max_len = 0;
  for (int c = 0; c < 2; ++c)
    max_len = std::max(max_len, prefix_ids_[c].size() + cfg_.context_length +
                                    suffix_ids_[c].size());
  if (max_len == 0) throw std::invalid_argument("prompts: empty prompt sequence");

  embed_ = reg.add("prompts.embed", vocab_.size(), dt,
                   gaussian_fill(rng, vocab_.size(), dt, 0.02));
  if (cfg_.context_length > 0)
    context_ = reg.add("prompts.context", cfg_.context_length, dt,
                       gaussian_fill(rng, cfg_.context_length, dt, 0.02), false);
  pos_ = reg.add("prompts.pos", static_cast<int>(max_len), dt,
                 gaussian_fill(rng, static_cast<int>(max_len), dt, 0.02));

  layers_.resize(cfg_.text_layers);
  for (int l = 0; l < cfg_.text_layers; ++l) {
    const std::string p = "prompts.txt.l" + std::to_string(l + 1) + ".";
    Layer& ly = layers_[l];
    ly.ln1_g = reg.add(p + "ln1.g", 1, dt, constant_fill(1, dt, 1.0), false);
    ly.ln1_b = reg.add(p + "ln1.b", 1, dt, constant_fill(1, dt, 0.0), false);
    ly.wq = reg.add(p + "attn.wq", dt, dt, glorot_fill(rng, dt, dt));
    ly.bq = reg.add(p + "attn.bq", 1, dt, constant_fill(1, dt, 0.0), false);
    // No key bias, same reasoning as the point encoder: it cannot train.
    ly.wk = reg.add(p + "attn.wk", dt, dt, glorot_fill(rng, dt, dt));
    ly.wv = reg.add(p + "attn.wv", dt, dt, glorot_fill(rng, dt, dt));
    ly.bv = reg.add(p + "attn.bv", 1, dt, constant_fill(1, dt, 0.0), false);
    ly.wo = reg.add(p + "attn.wo", dt, dt, glorot_fill(rng, dt, dt));
    ly.bo = reg.add(p + "attn.bo", 1, dt, constant_fill(1, dt, 0.0), false);
    ly.ln2_g = reg.add(p + "ln2.g", 1, dt, constant_fill(1, dt, 1.0), false);
    ly.ln2_b = reg.add(p + "ln2.b", 1, dt, constant_fill(1, dt, 0.0), false);
    ly.ff1_w = reg.add(p + "ffn.w1", dt, 2 * dt, glorot_fill(rng, dt, 2 * dt));
    ly.ff1_b = reg.add(p + "ffn.b1", 1, 2 * dt, constant_fill(1, 2 * dt, 0.0), false);
    ly.ff2_w = reg.add(p + "ffn.w2", 2 * dt, dt, glorot_fill(rng, 2 * dt, dt));
    ly.ff2_b = reg.add(p + "ffn.b2", 1, dt, constant_fill(1, dt, 0.0), false);
  }
  final_ln_g_ = reg.add("prompts.final_ln.g", 1, dt, constant_fill(1, dt, 1.0), false);
  final_ln_b_ = reg.add("prompts.final_ln.b", 1, dt, constant_fill(1, dt, 0.0), false);
  proj_w_ = reg.add("prompts.proj.w", dt, cfg_.out_dim, glorot_fill(rng, dt, cfg_.out_dim));
  proj_b_ = reg.add("prompts.proj.b", 1, cfg_.out_dim,
                    constant_fill(1, cfg_.out_dim, 0.0), false);
  tau_ = reg.add("prompts.tau", 1, 1, constant_fill(1, 1, cfg_.tau_init), false);
}

const std::vector<int>& PromptModel::prefix_ids(int cls) const {
  if (cls < 0 || cls > 1) throw std::invalid_argument("prompts: class must be 0 or 1");
  return prefix_ids_[cls];
}

const std::vector<int>& PromptModel::suffix_ids(int cls) const {
  if (cls < 0 || cls > 1) throw std::invalid_argument("prompts: class must be 0 or 1");
  return suffix_ids_[cls];
}

ag::Tensor PromptModel::build_sequence(int cls) const {
  const std::vector<int>& pre = prefix_ids(cls);
  const std::vector<int>& suf = suffix_ids(cls);
  std::vector<ag::Tensor> rows;
  for (int id : pre) rows.push_back(ag::take_rows(embed_, id, 1));
  for (int i = 0; i < cfg_.context_length; ++i)
    rows.push_back(ag::take_rows(context_, i, 1));
  for (int id : suf) rows.push_back(ag::take_rows(embed_, id, 1));
  if (rows.empty()) throw std::invalid_argument("prompts: empty prompt sequence");
  ag::Tensor seq = rows.size() == 1 ? rows[0] : ag::concat_rows(rows);
  return ag::add(seq, ag::take_rows(pos_, 0, seq.rows()));
}

ag::Tensor PromptModel::encode_sequence(const ag::Tensor& seq) const {
  if (!seq.defined() || seq.rows() < 1 || seq.cols() != cfg_.text_dim)
    throw std::invalid_argument("prompts: bad sequence shape");
  ag::Tensor x = seq;
  for (const Layer& ly : layers_) {
    ag::Tensor h = ag::layer_norm_rows(x, ly.ln1_g, ly.ln1_b);
    ag::Tensor a = ag::multihead_attention(nn::linear(h, ly.wq, ly.bq),
                                           ag::matmul(h, ly.wk),
                                           nn::linear(h, ly.wv, ly.bv),
                                           cfg_.text_heads);
    x = ag::add(x, nn::linear(a, ly.wo, ly.bo));
    ag::Tensor h2 = ag::layer_norm_rows(x, ly.ln2_g, ly.ln2_b);
    x = ag::add(x, nn::linear(ag::gelu(nn::linear(h2, ly.ff1_w, ly.ff1_b)),
                              ly.ff2_w, ly.ff2_b));
  }
  ag::Tensor last = ag::take_rows(ag::layer_norm_rows(x, final_ln_g_, final_ln_b_),
                                  x.rows() - 1, 1);
  bool zero_row = false;
  ag::Tensor out = ag::l2_normalize_rows(nn::linear(last, proj_w_, proj_b_), &zero_row);
  if (zero_row)
    throw std::runtime_error("prompts: text embedding projected to the zero vector");
  return out;
}

TextEmbeddings PromptModel::encode() const {
  TextEmbeddings te;
  te.normal = encode_sequence(build_sequence(0));
  te.defect = encode_sequence(build_sequence(1));
  te.tau = ag::clamp(tau_, kTauLo, kTauHi);
  return te;
}

ag::Tensor classify_global(const ag::Tensor& global, const TextEmbeddings& text) {
  if (!global.defined() || global.rows() != 1)
    throw std::invalid_argument("classify_global: expected one row");
  if (global.cols() != text.normal.cols() || global.cols() != text.defect.cols())
    throw std::invalid_argument("classify_global: width mismatch");
  double norm2 = 0.0;
  for (double v : global.value()) norm2 += v * v;
  if (std::fabs(std::sqrt(norm2) - 1.0) > 1e-6)
    throw std::invalid_argument("classify_global: input row is not unit norm");
  ag::Tensor logits = ag::concat_cols({ag::cosine_sim(global, text.normal),
                                       ag::cosine_sim(global, text.defect)});
  ag::Tensor tau2 = ag::concat_cols({text.tau, text.tau});
  return ag::softmax_rows(ag::div(logits, tau2));
}

ag::SparseMap interpolation_map(const PointCloud& cloud, const PatchSet& patches,
                                int k_up) {
  const int g = patches.patch_count();
  const int n = static_cast<int>(cloud.points.size());
  if (g < 1) throw std::invalid_argument("interpolation_map: empty patch set");
  if (n < 1) throw std::invalid_argument("interpolation_map: empty cloud");
  if (k_up < 1) throw std::invalid_argument("interpolation_map: k_up < 1");

  std::vector<Vec3> centers(g);
  for (int i = 0; i < g; ++i) centers[i] = cloud.points[patches.centers[i]];
  KdTree tree(centers);
  const int k = std::min(k_up, g);

  ag::SparseMap map;
  map.out_rows = n;
  map.rows.resize(n);
  for (int p = 0; p < n; ++p) {
    const auto nn_list = tree.knn(cloud.points[p], k);
    double wsum = 0.0;
    std::vector<std::pair<int, double>> row;
    row.reserve(nn_list.size());
    for (const auto& [d2, idx] : nn_list) {
      const double w = 1.0 / (std::sqrt(d2) + 1e-8);
      row.emplace_back(idx, w);
      wsum += w;
    }
    for (auto& [idx, w] : row) w /= wsum;
    map.rows[p] = std::move(row);
  }
  return map;
}

PointScores score_points(const ag::Tensor& z, const TextEmbeddings& text,
                         const PointCloud& cloud, const PatchSet& patches,
                         int k_up) {
  const int g = patches.patch_count();
  if (g < 1) throw std::invalid_argument("score_points: empty patch set");
  if (!z.defined() || z.rows() != g || z.cols() != text.normal.cols())
    throw std::invalid_argument("score_points: embedding shape mismatch");

  ag::Tensor sim_n = ag::matmul(z, ag::transpose(text.normal));  // [G, 1]
  ag::Tensor sim_d = ag::matmul(z, ag::transpose(text.defect));
  ag::Tensor logits = ag::concat_cols({sim_n, sim_d});
  ag::Tensor probs = ag::softmax_rows(
      ag::div(logits, nn::broadcast_scalar(text.tau, g, 2)));

  PointScores out;
  out.patch = nn::take_col(probs, 1);
  out.point = ag::sparse_combine(interpolation_map(cloud, patches, k_up), out.patch);
  return out;
}

}  // namespace plad
