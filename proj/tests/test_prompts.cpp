#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "plad/nn_ops.hpp"
#include "plad/params.hpp"
#include "plad/prompts.hpp"
#include "plad/rng.hpp"

using namespace plad;

namespace {

PromptConfig tiny_config() {
  PromptConfig cfg;
  cfg.context_length = 2;
  cfg.text_layers = 1;
  cfg.text_dim = 8;
  cfg.text_heads = 2;
  cfg.out_dim = 6;
  return cfg;
}

ag::Tensor unit_row(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  const int cols = static_cast<int>(v.size());
  return ag::Tensor::constant(1, cols, std::move(v));
}

std::vector<double> random_unit(Rng& rng, int d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (double& x : v) {
    x = rng.gaussian();
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

TextEmbeddings make_text(std::vector<double> normal, std::vector<double> defect,
                         double tau) {
  TextEmbeddings te;
  te.normal = unit_row(std::move(normal));
  te.defect = unit_row(std::move(defect));
  te.tau = ag::Tensor::scalar(tau);
  return te;
}

// Row-wise layer norm mirror, population variance, eps inside the sqrt.
std::vector<double> layer_norm_ref(const std::vector<double>& row,
                                   const std::vector<double>& g,
                                   const std::vector<double>& b) {
  const int d = static_cast<int>(row.size());
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= d;
  double var = 0.0;
  for (double v : row) var += (v - mean) * (v - mean);
  var /= d;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> out(d);
  for (int j = 0; j < d; ++j) out[j] = (row[j] - mean) * inv * g[j] + b[j];
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("prompts");

TEST_CASE("vocabulary assigns sorted ids and rejects unknown words") {
  Vocabulary vocab({"a point cloud of a", "normal object", "defective object"});
  const std::vector<std::string> expect = {"a",      "cloud",  "defective",
                                           "normal", "object", "of", "point"};
  REQUIRE(vocab.words() == expect);
  CHECK(vocab.size() == 7);
  CHECK(vocab.tokenize("normal object") == std::vector<int>({3, 4}));
  CHECK(vocab.tokenize("a point cloud of a") == std::vector<int>({0, 6, 1, 5, 0}));
  CHECK_THROWS_WITH_AS(vocab.tokenize("a broken object"),
                       "unknown word in template: broken", std::invalid_argument);
}

TEST_CASE("sequence length is template length plus the context length") {
  ParamRegistry reg;
  Rng rng(101);
  PromptModel model(tiny_config(), reg, rng);
  // Prefix has 5 words, suffix 2, context 2.
  CHECK(model.build_sequence(0).rows() == 9);
  CHECK(model.build_sequence(1).rows() == 9);

  PromptConfig no_ctx = tiny_config();
  no_ctx.context_length = 0;
  ParamRegistry reg2;
  Rng rng2(101);
  PromptModel pure(no_ctx, reg2, rng2);
  CHECK(pure.build_sequence(0).rows() == 7);
  CHECK_FALSE(reg2.contains("prompts.context"));
}

TEST_CASE("class sequences differ exactly where template ids differ") {
  ParamRegistry reg;
  Rng rng(103);
  PromptConfig cfg = tiny_config();
  PromptModel model(cfg, reg, rng);
  ag::Tensor s0 = model.build_sequence(0);
  ag::Tensor s1 = model.build_sequence(1);
  REQUIRE(s0.rows() == s1.rows());
  const int d = cfg.text_dim;
  // Rows 0..6: shared prefix and context. Row 7: "normal" vs "defective".
  // Row 8: the shared word "object" at the same position.
  for (int i = 0; i < s0.rows(); ++i) {
    bool same = true;
    for (int j = 0; j < d; ++j)
      if (s0.value()[static_cast<std::size_t>(i) * d + j] !=
          s1.value()[static_cast<std::size_t>(i) * d + j])
        same = false;
    CHECK(same == (i != 7));
  }
}

TEST_CASE("built sequences are embedding lookups plus positions") {
  ParamRegistry reg;
  Rng rng(107);
  PromptConfig cfg = tiny_config();
  PromptModel model(cfg, reg, rng);
  const ag::Tensor embed = reg.at("prompts.embed").tensor;
  const ag::Tensor context = reg.at("prompts.context").tensor;
  const ag::Tensor pos = reg.at("prompts.pos").tensor;
  const int d = cfg.text_dim;

  for (int cls = 0; cls < 2; ++cls) {
    ag::Tensor seq = model.build_sequence(cls);
    std::vector<int> ids = model.prefix_ids(cls);
    const int ctx_at = static_cast<int>(ids.size());
    for (int i = 0; i < cfg.context_length; ++i) ids.push_back(-1);
    for (int id : model.suffix_ids(cls)) ids.push_back(id);
    REQUIRE(seq.rows() == static_cast<int>(ids.size()));
    for (int i = 0; i < seq.rows(); ++i) {
      for (int j = 0; j < d; ++j) {
        const double base =
            ids[i] >= 0
                ? embed.value()[static_cast<std::size_t>(ids[i]) * d + j]
                : context.value()[static_cast<std::size_t>(i - ctx_at) * d + j];
        const double want = base + pos.value()[static_cast<std::size_t>(i) * d + j];
        CHECK(seq.value()[static_cast<std::size_t>(i) * d + j] == want);
      }
    }
  }
}

TEST_CASE("encode is deterministic and yields unit embeddings") {
  ParamRegistry reg;
  Rng rng(109);
  PromptModel model(tiny_config(), reg, rng);
  TextEmbeddings a = model.encode();
  TextEmbeddings b = model.encode();
  CHECK(a.normal.value() == b.normal.value());
  CHECK(a.defect.value() == b.defect.value());
  CHECK(a.tau.value() == b.tau.value());

  for (const ag::Tensor& e : {a.normal, a.defect}) {
    double n = 0.0;
    for (double v : e.value()) n += v * v;
    CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-9);
  }
  // Distinct suffix words should separate the two class embeddings.
  CHECK(a.normal.value() != a.defect.value());
}

TEST_CASE("temperature is clamped into [1e-3, 1]") {
  ParamRegistry reg;
  Rng rng(113);
  PromptModel model(tiny_config(), reg, rng);
  CHECK(model.encode().tau.item() == 0.07);

  reg.at("prompts.tau").tensor.raw_value()[0] = 5.0;
  CHECK(model.encode().tau.item() == 1.0);
  reg.at("prompts.tau").tensor.raw_value()[0] = 1e-9;
  CHECK(model.encode().tau.item() == 1e-3);
}

TEST_CASE("with zeroed residual branches the encoder reduces to a projection") {
  PromptConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(127);
  PromptModel model(cfg, reg, rng);
  for (double& v : reg.at("prompts.txt.l1.attn.wo").tensor.raw_value()) v = 0.0;
  for (double& v : reg.at("prompts.txt.l1.ffn.w2").tensor.raw_value()) v = 0.0;

  ag::Tensor seq = model.build_sequence(1);
  ag::Tensor out = model.encode_sequence(seq);

  const int d = cfg.text_dim;
  const int last = seq.rows() - 1;
  std::vector<double> row(d);
  for (int j = 0; j < d; ++j)
    row[j] = seq.value()[static_cast<std::size_t>(last) * d + j];
  const std::vector<double> normed =
      layer_norm_ref(row, reg.at("prompts.final_ln.g").tensor.value(),
                     reg.at("prompts.final_ln.b").tensor.value());
  const ag::Tensor pw = reg.at("prompts.proj.w").tensor;
  const ag::Tensor pb = reg.at("prompts.proj.b").tensor;
  std::vector<double> proj(cfg.out_dim, 0.0);
  for (int j = 0; j < cfg.out_dim; ++j) {
    for (int k = 0; k < d; ++k)
      proj[j] += normed[k] * pw.value()[static_cast<std::size_t>(k) * cfg.out_dim + j];
    proj[j] += pb.value()[j];
  }
  double n = 0.0;
  for (double v : proj) n += v * v;
  n = std::sqrt(n);
  REQUIRE(out.size() == cfg.out_dim);
  for (int j = 0; j < cfg.out_dim; ++j)
    CHECK(out.value()[j] == doctest::Approx(proj[j] / n).epsilon(1e-12));
}

TEST_CASE("classification is an exact coin flip for symmetric similarities") {
  TextEmbeddings te = make_text({1.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}, 0.07);
  ag::Tensor g = unit_row({0.3, -0.2, 0.9, 0.1});
  ag::Tensor probs = classify_global(g, te);
  REQUIRE(probs.size() == 2);
  CHECK(probs.value()[0] == 0.5);
  CHECK(probs.value()[1] == 0.5);
}

TEST_CASE("classification matches the two-class closed form") {
  // cos(g, normal) = 0, cos(g, defect) = 1, tau = 1: softmax([0, 1]).
  TextEmbeddings te = make_text({1.0, 0.0}, {0.0, 1.0}, 1.0);
  ag::Tensor g = unit_row({0.0, 1.0});
  ag::Tensor probs = classify_global(g, te);
  const double e = std::exp(1.0);
  CHECK(probs.value()[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  CHECK(probs.value()[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("class probabilities are a strict distribution") {
  Rng rng(131);
  for (int trial = 0; trial < 50; ++trial) {
    TextEmbeddings te = make_text(random_unit(rng, 8), random_unit(rng, 8), 0.07);
    ag::Tensor g = ag::Tensor::constant(1, 8, random_unit(rng, 8));
    ag::Tensor probs = classify_global(g, te);
    CHECK(std::fabs(probs.value()[0] + probs.value()[1] - 1.0) < 1e-12);
    CHECK(probs.value()[0] > 0.0);
    CHECK(probs.value()[0] < 1.0);
  }
}

TEST_CASE("defective probability grows with similarity to the defect prompt") {
  TextEmbeddings te = make_text({1.0, 0.0}, {0.0, 1.0}, 0.07);
  double prev = -1.0;
  for (int s = 1; s < 16; ++s) {
    const double theta = s * (1.5707963267948966 / 16.0);
    ag::Tensor g = unit_row({std::cos(theta), std::sin(theta)});
    const double p = classify_global(g, te).value()[1];
    CHECK(p > prev);
    prev = p;
  }
}

TEST_CASE("temperature rescaling never flips the decision") {
  Rng rng(137);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> n = random_unit(rng, 8);
    std::vector<double> d = random_unit(rng, 8);
    std::vector<double> g = random_unit(rng, 8);
    TextEmbeddings cold = make_text(n, d, 0.013);
    TextEmbeddings warm = make_text(n, d, 0.91);
    ag::Tensor gv = ag::Tensor::constant(1, 8, g);
    // Keep the result tensors alive; value() references their node storage.
    ag::Tensor cold_probs = classify_global(gv, cold);
    ag::Tensor warm_probs = classify_global(gv, warm);
    const auto& pc = cold_probs.value();
    const auto& pw = warm_probs.value();
    CHECK((pc[1] > pc[0]) == (pw[1] > pw[0]));
  }
}

TEST_CASE("classification validates its inputs") {
  TextEmbeddings te = make_text({1.0, 0.0}, {0.0, 1.0}, 0.07);
  std::vector<double> long_row = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(classify_global(ag::Tensor::constant(1, 3, long_row), te),
                  std::invalid_argument);
  std::vector<double> big = {2.0, 0.0};
  CHECK_THROWS_AS(classify_global(ag::Tensor::constant(1, 2, big), te),
                  std::invalid_argument);
}

namespace {

struct ScoreFixture {
  PointCloud cloud;
  PatchSet patches;
};

// Four patch centers at generic positions plus off-center query points.
ScoreFixture make_score_fixture() {
  ScoreFixture fx;
  fx.cloud.points = {
      {0.0, 0.0, 0.0},   {1.1, 0.2, -0.3}, {-0.4, 0.9, 0.7}, {0.5, -0.8, 1.3},
      {0.21, 0.13, 0.4}, {0.9, 0.1, 0.02}, {-0.2, 0.5, 0.55}};
  fx.patches.centers = {0, 1, 2, 3};
  fx.patches.members = {{0, 4}, {1, 5}, {2, 6}, {3, 4}};
  return fx;
}

ag::Tensor embeddings_for(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) {
    double n = 0.0;
    for (double v : r) n += v * v;
    n = std::sqrt(n);
    for (double v : r) flat.push_back(v / n);
  }
  return ag::Tensor::constant(static_cast<int>(rows.size()),
                              static_cast<int>(rows[0].size()), std::move(flat));
}

}  // namespace

TEST_CASE("a constant patch field interpolates to a constant point field") {
  ScoreFixture fx = make_score_fixture();
  ag::Tensor z = embeddings_for({{0.6, -0.1, 0.4}, {0.6, -0.1, 0.4},
                                 {0.6, -0.1, 0.4}, {0.6, -0.1, 0.4}});
  TextEmbeddings te = make_text({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, 0.07);
  PointScores ps = score_points(z, te, fx.cloud, fx.patches);
  REQUIRE(ps.patch.size() == 4);
  REQUIRE(ps.point.size() == static_cast<int>(fx.cloud.points.size()));
  const double c = ps.patch.value()[0];
  for (double v : ps.patch.value()) CHECK(v == c);
  for (double v : ps.point.value()) CHECK(v == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("a point on a patch center takes that patch's score") {
  ScoreFixture fx = make_score_fixture();
  ag::Tensor z = embeddings_for({{0.9, 0.1, 0.0}, {-0.2, 0.8, 0.1},
                                 {0.3, -0.5, 0.7}, {0.0, 0.4, -0.6}});
  TextEmbeddings te = make_text({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, 0.07);
  PointScores ps = score_points(z, te, fx.cloud, fx.patches);
  // Points 0..3 coincide with centers 0..3; the 1/(d+1e-8) weight dominates.
  for (int p = 0; p < 4; ++p)
    CHECK(std::fabs(ps.point.value()[p] - ps.patch.value()[p]) < 1e-6);
}

TEST_CASE("point scores match a direct interpolation oracle") {
  ScoreFixture fx = make_score_fixture();
  ag::Tensor z = embeddings_for({{0.9, 0.1, 0.0}, {-0.2, 0.8, 0.1},
                                 {0.3, -0.5, 0.7}, {0.0, 0.4, -0.6}});
  TextEmbeddings te = make_text({0.7, -0.4, 0.2}, {-0.3, 0.5, 0.9}, 0.21);
  const int k_up = 3;
  PointScores ps = score_points(z, te, fx.cloud, fx.patches, k_up);

  // Patch scores: softmax over (cos/tau) pairs, defective entry.
  const double tau = 0.21;
  std::vector<double> patch_ref(4);
  for (int i = 0; i < 4; ++i) {
    double sn = 0.0, sd = 0.0;
    for (int j = 0; j < 3; ++j) {
      sn += z.value()[static_cast<std::size_t>(i) * 3 + j] * te.normal.value()[j];
      sd += z.value()[static_cast<std::size_t>(i) * 3 + j] * te.defect.value()[j];
    }
    const double mx = std::max(sn, sd);
    const double en = std::exp((sn - mx) / tau), ed = std::exp((sd - mx) / tau);
    patch_ref[i] = ed / (en + ed);
  }
  for (int i = 0; i < 4; ++i)
    CHECK(ps.patch.value()[i] == doctest::Approx(patch_ref[i]).epsilon(1e-12));

  for (std::size_t p = 0; p < fx.cloud.points.size(); ++p) {
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < 4; ++i) {
      const Vec3 c = fx.cloud.points[fx.patches.centers[i]];
      const Vec3 q = fx.cloud.points[p];
      const double dx = q.x - c.x, dy = q.y - c.y, dz = q.z - c.z;
      dist.push_back({std::sqrt(dx * dx + dy * dy + dz * dz), i});
    }
    std::sort(dist.begin(), dist.end());
    double wsum = 0.0, acc = 0.0;
    for (int j = 0; j < k_up; ++j) {
      const double w = 1.0 / (dist[j].first + 1e-8);
      wsum += w;
      acc += w * patch_ref[dist[j].second];
    }
    CHECK(ps.point.value()[p] == doctest::Approx(acc / wsum).epsilon(1e-12));
  }
}

TEST_CASE("interpolated scores stay inside the patch score range") {
  ScoreFixture fx = make_score_fixture();
  Rng rng(139);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 4; ++i) rows.push_back(random_unit(rng, 5));
  ag::Tensor z = embeddings_for(rows);
  TextEmbeddings te = make_text(random_unit(rng, 5), random_unit(rng, 5), 0.07);
  PointScores ps = score_points(z, te, fx.cloud, fx.patches, 2);
  const auto& patch = ps.patch.value();
  const double lo = *std::min_element(patch.begin(), patch.end());
  const double hi = *std::max_element(patch.begin(), patch.end());
  for (double v : ps.point.value()) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("scoring validates patches and embedding shapes") {
  ScoreFixture fx = make_score_fixture();
  TextEmbeddings te = make_text({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, 0.07);
  ag::Tensor z3 = embeddings_for({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}});
  CHECK_THROWS_AS(score_points(z3, te, fx.cloud, fx.patches), std::invalid_argument);

  PatchSet empty;
  ag::Tensor z4 = embeddings_for(
      {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 0.0}});
  CHECK_THROWS_AS(score_points(z4, te, fx.cloud, empty), std::invalid_argument);
  CHECK_THROWS_AS(interpolation_map(fx.cloud, fx.patches, 0), std::invalid_argument);
}

TEST_CASE("prompt parameters pass the finite-difference check") {
  PromptConfig cfg = tiny_config();
  ParamRegistry reg;
  Rng rng(149);
  PromptModel model(cfg, reg, rng);
  ag::Tensor g = unit_row({0.4, -0.2, 0.55, 0.1, -0.7, 0.3});

  auto f = [&]() {
    return ag::mean(nn::take_col(classify_global(g, model.encode()), 1));
  };
  CHECK(ag::grad_check(f, reg.tensors()) < 1e-4);
}

TEST_SUITE_END();
