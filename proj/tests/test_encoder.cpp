#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

#include "plad/encoder.hpp"
#include "plad/params.hpp"
#include "plad/point_cloud.hpp"
#include "plad/rng.hpp"

using namespace plad;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const ag::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j)
      m[i][j] = t.value()[static_cast<std::size_t>(i) * t.cols() + j];
  return m;
}

Mat to_mat(const std::vector<double>& v, int rows, int cols) {
  Mat m(rows, std::vector<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m[i][j] = v[static_cast<std::size_t>(i) * cols + j];
  return m;
}

Mat matmul_ref(const Mat& a, const Mat& b) {
  const int n = static_cast<int>(a.size());
  const int k = static_cast<int>(b.size());
  const int c = static_cast<int>(b[0].size());
  Mat out(n, std::vector<double>(c, 0.0));
  for (int i = 0; i < n; ++i)
    for (int x = 0; x < k; ++x)
      for (int j = 0; j < c; ++j) out[i][j] += a[i][x] * b[x][j];
  return out;
}

Mat linear_ref(const Mat& x, const Mat& w, const Mat& b) {
  Mat out = matmul_ref(x, w);
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[0][j];
  return out;
}

Mat add_ref(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  return out;
}

Mat layer_norm_ref(const Mat& x, const Mat& g, const Mat& b, double eps = 1e-5) {
  Mat out = x;
  const int c = static_cast<int>(x[0].size());
  for (auto& row : out) {
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= c;
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= c;
    const double istd = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) row[j] = (row[j] - mu) * istd * g[0][j] + b[0][j];
  }
  return out;
}

Mat gelu_ref(const Mat& x) {
  Mat out = x;
  for (auto& row : out)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return out;
}

Mat attention_ref(const Mat& q, const Mat& k, const Mat& v, int heads) {
  const int t = static_cast<int>(q.size());
  const int d = static_cast<int>(q[0].size());
  const int dh = d / heads;
  Mat out(t, std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < t; ++i) {
      std::vector<double> score(t);
      double mx = -1e300;
      for (int j = 0; j < t; ++j) {
        double s = 0.0;
        for (int e = 0; e < dh; ++e) s += q[i][off + e] * k[j][off + e];
        score[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double den = 0.0;
      for (int j = 0; j < t; ++j) den += std::exp(score[j] - mx);
      for (int j = 0; j < t; ++j) {
        const double p = std::exp(score[j] - mx) / den;
        for (int e = 0; e < dh; ++e) out[i][off + e] += p * v[j][off + e];
      }
    }
  }
  return out;
}

struct Toy {
  PointCloud cloud;
  PatchSet patches;
};

Toy make_toy(Rng& rng, int n, int g, int m) {
  Toy t;
  t.cloud.points.resize(n);
  for (Vec3& p : t.cloud.points)
    p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  t.patches.centers.resize(g);
  t.patches.members.assign(g, std::vector<int>(m));
  for (int i = 0; i < g; ++i) {
    t.patches.centers[i] = static_cast<int>(rng.uniform_int(0, n - 1));
    for (int j = 0; j < m; ++j)
      t.patches.members[i][j] = static_cast<int>(rng.uniform_int(0, n - 1));
  }
  return t;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.tap_layers = {1, 2};
  cfg.out_dim = 4;
  cfg.token_hidden = 6;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("encoder");

TEST_CASE("config validation rejects bad combinations") {
  EncoderConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  EncoderConfig bad = cfg;
  bad.heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.tap_layers = {2, 2};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.tap_layers = {0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.tap_layers = {3};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.tap_layers = {};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.num_layers = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zeroed output projections make a block the identity") {
  EncoderConfig cfg = tiny_config();
  cfg.num_layers = 1;
  cfg.tap_layers = {1};
  ParamRegistry reg;
  Rng rng(3);
  PointEncoder enc(cfg, reg, rng);

  // With W_o = 0 and the second FFN matrix = 0 both residual branches add
  // exactly zero, so the block output is the input.
  for (const char* name : {"encoder.l1.attn.wo", "encoder.l1.ffn.w2"}) {
    ag::Tensor t = reg.at(name).tensor;
    std::fill(t.raw_value().begin(), t.raw_value().end(), 0.0);
  }

  Rng data_rng(17);
  Toy toy = make_toy(data_rng, 30, 5, 4);
  ag::Tensor tokens = enc.tokenize(toy.cloud, toy.patches);
  FeaturePyramid pyr = enc.encode(tokens);

  REQUIRE(pyr.taps.size() == 1);
  REQUIRE(pyr.taps[0].rows() == 5);
  const auto& tok = tokens.value();
  const auto& tap = pyr.taps[0].value();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < cfg.embed_dim; ++j)
      CHECK(tap[static_cast<std::size_t>(i) * cfg.embed_dim + j] ==
            tok[static_cast<std::size_t>(i + 1) * cfg.embed_dim + j]);
}

TEST_CASE("permuting patches permutes taps and leaves cls and global bitwise") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(5);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(23);
  const int g = 6;
  Toy toy = make_toy(data_rng, 40, g, 4);
  FeaturePyramid a = enc.encode(enc.tokenize(toy.cloud, toy.patches));

  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  Toy shuffled = toy;
  for (int i = 0; i < g; ++i) {
    shuffled.patches.centers[i] = toy.patches.centers[perm[i]];
    shuffled.patches.members[i] = toy.patches.members[perm[i]];
  }
  FeaturePyramid b = enc.encode(enc.tokenize(shuffled.cloud, shuffled.patches));

  for (std::size_t l = 0; l < a.taps.size(); ++l) {
    const int d = cfg.embed_dim;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < d; ++j)
        CHECK(b.taps[l].value()[static_cast<std::size_t>(i) * d + j] ==
              a.taps[l].value()[static_cast<std::size_t>(perm[i]) * d + j]);
  }
  for (int j = 0; j < cfg.embed_dim; ++j) CHECK(a.cls.value()[j] == b.cls.value()[j]);
  for (int j = 0; j < cfg.out_dim; ++j)
    CHECK(a.global.value()[j] == b.global.value()[j]);
}

TEST_CASE("identical patches produce identical tokens") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(9);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(31);
  Toy toy = make_toy(data_rng, 25, 4, 5);
  toy.patches.centers[2] = toy.patches.centers[0];
  toy.patches.members[2] = toy.patches.members[0];

  ag::Tensor tokens = enc.tokenize(toy.cloud, toy.patches);
  const int d = cfg.embed_dim;
  for (int j = 0; j < d; ++j)
    CHECK(tokens.value()[static_cast<std::size_t>(1) * d + j] ==
          tokens.value()[static_cast<std::size_t>(3) * d + j]);
}

TEST_CASE("rigid translation leaves pooled tokens unchanged") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(13);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(41);
  Toy toy = make_toy(data_rng, 30, 5, 4);
  ag::Tensor before = enc.pooled_tokens(toy.cloud, toy.patches);

  Toy moved = toy;
  const Vec3 t{0.37, -1.42, 2.09};
  for (Vec3& p : moved.cloud.points) p += t;
  ag::Tensor after = enc.pooled_tokens(moved.cloud, moved.patches);

  for (int i = 0; i < before.size(); ++i)
    CHECK(after.value()[i] == doctest::Approx(before.value()[i]).epsilon(1e-9));
}

TEST_CASE("tokenize matches an explicit MLP and max-pool recomputation") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(21);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(55);
  Toy toy = make_toy(data_rng, 20, 3, 4);
  ag::Tensor tokens = enc.tokenize(toy.cloud, toy.patches);

  const Mat w1 = to_mat(reg.at("encoder.tok.w1").tensor);
  const Mat b1 = to_mat(reg.at("encoder.tok.b1").tensor);
  const Mat w2 = to_mat(reg.at("encoder.tok.w2").tensor);
  const Mat b2 = to_mat(reg.at("encoder.tok.b2").tensor);
  const Mat pw = to_mat(reg.at("encoder.pos.w").tensor);
  const Mat pb = to_mat(reg.at("encoder.pos.b").tensor);
  const Mat cls = to_mat(reg.at("encoder.cls").tensor);
  const int d = cfg.embed_dim;

  for (int j = 0; j < d; ++j) CHECK(tokens.value()[j] == cls[0][j]);
  for (int i = 0; i < 3; ++i) {
    const Vec3 c = toy.cloud.points[toy.patches.centers[i]];
    Mat rel;
    for (int m : toy.patches.members[i]) {
      const Vec3 p = toy.cloud.points[m] - c;
      rel.push_back({p.x, p.y, p.z});
    }
    const Mat h = linear_ref(gelu_ref(linear_ref(rel, w1, b1)), w2, b2);
    std::vector<double> pooled(d, -1e300);
    for (const auto& row : h)
      for (int j = 0; j < d; ++j) pooled[j] = std::max(pooled[j], row[j]);
    const Mat pos = linear_ref({{c.x, c.y, c.z}}, pw, pb);
    for (int j = 0; j < d; ++j)
      CHECK(tokens.value()[static_cast<std::size_t>(i + 1) * d + j] ==
            doctest::Approx(pooled[j] + pos[0][j]).epsilon(1e-12));
  }
}

TEST_CASE("encode matches a step-by-step reference forward") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(33);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(77);
  Toy toy = make_toy(data_rng, 24, 3, 4);
  ag::Tensor tokens = enc.tokenize(toy.cloud, toy.patches);
  FeaturePyramid pyr = enc.encode(tokens);

  Mat x = to_mat(tokens);
  std::vector<Mat> tap_ref;
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const std::string p = "encoder.l" + std::to_string(l) + ".";
    auto P = [&](const std::string& s) { return to_mat(reg.at(p + s).tensor); };
    const Mat h = layer_norm_ref(x, P("ln1.g"), P("ln1.b"));
    const Mat a = attention_ref(linear_ref(h, P("attn.wq"), P("attn.bq")),
                                matmul_ref(h, P("attn.wk")),
                                linear_ref(h, P("attn.wv"), P("attn.bv")), cfg.heads);
    x = add_ref(x, linear_ref(a, P("attn.wo"), P("attn.bo")));
    const Mat h2 = layer_norm_ref(x, P("ln2.g"), P("ln2.b"));
    x = add_ref(x, linear_ref(gelu_ref(linear_ref(h2, P("ffn.w1"), P("ffn.b1"))),
                              P("ffn.w2"), P("ffn.b2")));
    tap_ref.push_back(Mat(x.begin() + 1, x.end()));
  }

  REQUIRE(pyr.taps.size() == tap_ref.size());
  for (std::size_t l = 0; l < tap_ref.size(); ++l) {
    const Mat got = to_mat(pyr.taps[l]);
    for (std::size_t i = 0; i < tap_ref[l].size(); ++i)
      for (std::size_t j = 0; j < tap_ref[l][i].size(); ++j)
        CHECK(got[i][j] == doctest::Approx(tap_ref[l][i][j]).epsilon(1e-12));
  }

  const Mat fin = layer_norm_ref(x, to_mat(reg.at("encoder.final_ln.g").tensor),
                                 to_mat(reg.at("encoder.final_ln.b").tensor));
  const Mat cls_ref = {fin[0]};
  for (int j = 0; j < cfg.embed_dim; ++j)
    CHECK(pyr.cls.value()[j] == doctest::Approx(cls_ref[0][j]).epsilon(1e-12));

  Mat proj = linear_ref(cls_ref, to_mat(reg.at("encoder.proj.w").tensor),
                        to_mat(reg.at("encoder.proj.b").tensor));
  double norm = 0.0;
  for (double v : proj[0]) norm += v * v;
  norm = std::sqrt(norm);
  double check_norm = 0.0;
  for (int j = 0; j < cfg.out_dim; ++j) {
    CHECK(pyr.global.value()[j] == doctest::Approx(proj[0][j] / norm).epsilon(1e-12));
    check_norm += pyr.global.value()[j] * pyr.global.value()[j];
  }
  CHECK(std::fabs(std::sqrt(check_norm) - 1.0) < 1e-9);
}

TEST_CASE("encoder parameters pass the finite-difference check") {
  EncoderConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(49);
  PointEncoder enc(cfg, reg, rng);

  Rng data_rng(91);
  Toy toy = make_toy(data_rng, 20, 3, 4);

  auto f = [&]() {
    FeaturePyramid pyr = enc.encode(enc.tokenize(toy.cloud, toy.patches));
    ag::Tensor acc = ag::mean(pyr.global);
    for (const ag::Tensor& tap : pyr.taps) acc = ag::add(acc, ag::mean(tap));
    return ag::add(acc, ag::mean(pyr.cls));
  };
  CHECK(ag::grad_check(f, reg.tensors()) < 1e-4);
}

TEST_SUITE_END();
