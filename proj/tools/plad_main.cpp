#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "plad/config.hpp"
#include "plad/dataset.hpp"
#include "plad/fpfh.hpp"
#include "plad/model.hpp"
#include "plad/pipeline.hpp"
#include "plad/trainer.hpp"

namespace fs = std::filesystem;
using namespace plad;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration JSON file");
  cmd->add_option("--out", args.out_dir, "Output directory (overrides the config)");
  cmd->add_option("overrides", args.overrides,
                  "Config overrides of the form key.path=value");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? default_run_config()
                                           : load_run_config(args.config_path);
  for (const std::string& o : args.overrides) apply_override(cfg, o);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error(p.string() + ": cannot create directory");
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

PipelineSample prepare_record(const RunConfig& cfg, const SampleRecord& rec) {
  const fs::path cloud_path = fs::path(cfg.data_dir) / rec.cloud_path;
  PointCloud cloud = load_ply(cloud_path.string());
  return prepare_sample(cloud, cfg.pipeline, rec.label);
}

// Test split of every category except the training one, in manifest order.
std::vector<CategoryData> heldout_categories(const RunConfig& cfg,
                                             const std::vector<SampleRecord>& records) {
  std::vector<CategoryData> cats;
  for (const auto& rec : records) {
    if (rec.category == cfg.train_category || rec.split != "test") continue;
    auto it = std::find_if(cats.begin(), cats.end(),
                           [&](const CategoryData& c) { return c.name == rec.category; });
    if (it == cats.end()) {
      cats.push_back({rec.category, {}});
      it = cats.end() - 1;
    }
    it->samples.push_back(prepare_record(cfg, rec));
  }
  return cats;
}

int cmd_synth(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> records = synth_generate(cfg.synth, cfg.data_dir);
  int train_count = 0, test_count = 0;
  for (const auto& r : records) (r.split == "train" ? train_count : test_count)++;
  std::printf("wrote %d train and %d test clouds under %s\n", train_count, test_count,
              cfg.data_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> records =
      read_manifest((fs::path(cfg.data_dir) / "manifest.json").string());

  // The training split: the category's normal train clouds plus its
  // mask-annotated anomalous clouds. Everything else stays unseen.
  std::vector<PipelineSample> train_set;
  for (const auto& rec : records) {
    if (rec.category != cfg.train_category) continue;
    if (rec.split == "train" || rec.label == 1)
      train_set.push_back(prepare_record(cfg, rec));
  }
  std::vector<CategoryData> eval_cats = heldout_categories(cfg, records);

  AnomalyModel model(cfg.model_config(), cfg.train.seed);
  Trainer trainer(model, cfg.train);
  std::vector<std::string> log = trainer.fit(train_set, eval_cats);

  const fs::path out(cfg.out_dir);
  std::string log_text;
  for (const auto& line : log) log_text += line + "\n";
  write_text(out / "logs" / "train.jsonl", log_text);

  ensure_dir(out / "checkpoint");
  save_checkpoint((out / "checkpoint" / "model.ckpt").string(), model.params());

  EvalReport report = trainer.last_report();
  report.seed = cfg.train.seed;
  report.config_hash = config_hash(cfg);
  write_text(out / "reports" / "train_report.json", report_to_json(report));
  if (!eval_cats.empty()) std::printf("%s", report_table(report).c_str());
  std::printf("checkpoint: %s\n", (out / "checkpoint" / "model.ckpt").c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, bool random_baseline) {
  RunConfig cfg = resolve_config(args);
  if (checkpoint.empty() && !random_baseline)
    throw std::invalid_argument("eval: need --checkpoint or --random-baseline");

  std::vector<SampleRecord> records =
      read_manifest((fs::path(cfg.data_dir) / "manifest.json").string());
  std::vector<CategoryData> eval_cats = heldout_categories(cfg, records);
  if (eval_cats.empty()) throw std::invalid_argument("eval: no held-out categories");

  EvalReport report;
  if (random_baseline) {
    Rng rng = Rng(cfg.train.seed).fork(0xba5eULL);
    report = evaluate_scored(eval_cats, [&rng](const PipelineSample& sample) {
      std::vector<double> pts(sample.cloud.size());
      for (double& v : pts) v = rng.uniform01();
      return std::make_pair(rng.uniform01(), std::move(pts));
    });
  } else {
    AnomalyModel model(cfg.model_config(), cfg.train.seed);
    load_checkpoint(checkpoint, model.params());
    report = evaluate_model(model, eval_cats);
  }
  report.seed = cfg.train.seed;
  report.config_hash = config_hash(cfg);

  write_text(fs::path(cfg.out_dir) / "reports" / "eval.json", report_to_json(report));
  std::printf("%s", report_table(report).c_str());
  return 0;
}

int cmd_score(const CommonArgs& args, const std::string& checkpoint,
              const std::string& cloud_path) {
  RunConfig cfg = resolve_config(args);
  AnomalyModel model(cfg.model_config(), cfg.train.seed);
  load_checkpoint(checkpoint, model.params());

  PointCloud cloud = load_ply(cloud_path);
  PipelineSample sample = prepare_sample(cloud, cfg.pipeline, 0);
  AnomalyModel::Scored scored = model.score(sample);

  const fs::path heatmap = fs::path(cfg.out_dir) / "heatmaps" /
                           (fs::path(cloud_path).stem().string() + "_heatmap.ply");
  ensure_dir(heatmap.parent_path());
  save_heatmap_ply(sample.cloud, scored.point_scores, heatmap.string());

  std::printf("object_score %.6f\n", scored.object.y_hat);
  std::printf("heatmap: %s\n", heatmap.c_str());
  return 0;
}

// Builds the gradient-check toy: 4 patches of 8 members over a 16-point
// cloud, 8-wide embeddings everywhere, random unit descriptor targets.
PipelineSample gradcheck_sample(Rng& rng) {
  PointCloud cloud;
  for (int i = 0; i < 16; ++i)
    cloud.points.push_back(
        {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  cloud.labels.assign(16, 0);
  cloud.labels[3] = cloud.labels[7] = 1;
  cloud = normalize_cloud(cloud);

  PipelineSample sample;
  std::vector<int> centers = farthest_point_sampling(cloud, 4);
  sample.patches = knn_group(cloud, centers, 8);
  sample.cloud = std::move(cloud);
  std::vector<double> targets(4 * kFpfhSize);
  for (int i = 0; i < 4; ++i) {
    double norm = 0.0;
    for (int j = 0; j < kFpfhSize; ++j) {
      targets[i * kFpfhSize + j] = rng.gaussian();
      norm += targets[i * kFpfhSize + j] * targets[i * kFpfhSize + j];
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < kFpfhSize; ++j) targets[i * kFpfhSize + j] /= norm;
  }
  sample.targets = ag::Tensor::constant(4, kFpfhSize, std::move(targets));
  sample.label = 1;
  return sample;
}

ModelConfig gradcheck_model_config() {
  ModelConfig mc;
  mc.encoder.num_layers = 2;
  mc.encoder.embed_dim = 8;
  mc.encoder.heads = 2;
  mc.encoder.tap_layers = {1, 2};
  mc.encoder.out_dim = 8;
  mc.encoder.token_hidden = 8;
  mc.geonet.hidden1 = 8;
  mc.geonet.hidden2 = 8;
  mc.geonet.out_dim = 8;
  mc.prompts.context_length = 2;
  mc.prompts.text_layers = 1;
  mc.prompts.text_dim = 8;
  mc.prompts.text_heads = 2;
  mc.prompts.out_dim = 8;
  return mc;
}

int cmd_gradcheck() {
  AnomalyModel model(gradcheck_model_config(), 97);
  Rng rng(811);
  PipelineSample sample = gradcheck_sample(rng);

  // Nudge every parameter off the zero-bias init: center-relative rows are
  // exactly zero there and would sit on the relu kink, where the documented
  // zero subgradient and the one-sided difference quotient disagree.
  Rng jitter(53);
  for (const auto& e : model.params().entries()) {
    ag::Tensor t = e.tensor;
    for (double& v : t.raw_value()) v += jitter.uniform(-0.25, 0.25);
  }

  // The training objective leaves the global-classification path (the CLS
  // projection) without gradient, so a small classification term rides along
  // to cover those parameters too.
  auto objective = [&]() {
    AnomalyModel::Forward fw = model.forward(sample);
    AnomalyModel::LossParts parts = model.loss(fw, sample);
    ag::Tensor cls_probs = classify_global(fw.pyramid.global, fw.text);
    ag::Tensor defect_prob = ag::take_rows(ag::transpose(cls_probs), 1, 1);
    return ag::add(parts.total, ag::scale(defect_prob, 0.01));
  };

  const std::vector<std::pair<std::string, std::string>> modules = {
      {"encoder", "encoder."}, {"geometry", "geo."},   {"fusion", "fusion."},
      {"prompts", "prompts."}, {"alignment", "align."}};

  bool ok = true;
  std::printf("%-10s  %10s  %s\n", "module", "params", "max_rel_err");
  for (const auto& [label, prefix] : modules) {
    std::vector<ag::Tensor> params;
    int count = 0;
    for (const auto& e : model.params().entries()) {
      if (e.name.rfind(prefix, 0) != 0) continue;
      params.push_back(e.tensor);
      count += static_cast<int>(e.tensor.value().size());
    }
    const double err = ag::grad_check(objective, params, 1e-5);
    ok = ok && err < 1e-4;
    std::printf("%-10s  %10d  %.3e%s\n", label.c_str(), count, err,
                err < 1e-4 ? "" : "  FAIL");
  }
  if (!ok) throw NumericalError("gradient check failed");
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& checkpoint) {
  RunConfig cfg = resolve_config(args);
  AnomalyModel model(cfg.model_config(), cfg.train.seed);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model.params());

  const SynthSpec* base_spec = nullptr;
  for (const auto& s : cfg.synth)
    if (s.shape == cfg.train_category) base_spec = &s;

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::printf("%8s  %8s  %8s  %10s\n", "points", "O-AUROC", "P-AUROC", "clouds/s");
  for (int points : {1024, 2048, 4096, 8192}) {
    PipelineConfig pipe = cfg.pipeline;
    pipe.sample_points = points;

    // Two normal and two anomalous clouds at this resolution, derived from
    // the training category's spec so the sweep is deterministic.
    std::vector<PipelineSample> samples;
    Rng rng = Rng(base_spec->seed).fork(0xab1aULL + points);
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 4; ++i) {
      PointCloud cloud = synth_base_cloud(base_spec->shape, points,
                                          base_spec->jitter_sigma, rng.next_u64());
      int label = i >= 2 ? 1 : 0;
      if (label == 1) {
        AnomalyInstance inst;
        inst.type = base_spec->anomaly;
        inst.seed_index = rng.uniform_int(0, points - 1);
        inst.radius = 0.5 * (base_spec->radius_min + base_spec->radius_max);
        inst.magnitude = 0.12;
        inst.slab_normal = {0.0, 0.0, 1.0};
        cloud = apply_anomalies(cloud, {inst});
      } else {
        cloud.labels.assign(points, 0);
      }
      samples.push_back(prepare_sample(cloud, pipe, label));
    }

    std::vector<double> obj_scores, pt_scores;
    std::vector<uint8_t> obj_labels, pt_labels;
    for (const auto& sample : samples) {
      AnomalyModel::Scored scored = model.score(sample);
      obj_scores.push_back(scored.object.y_hat);
      obj_labels.push_back(static_cast<uint8_t>(sample.label));
      for (std::size_t i = 0; i < scored.point_scores.size(); ++i) {
        pt_scores.push_back(scored.point_scores[i]);
        pt_labels.push_back(sample.cloud.has_labels() ? sample.cloud.labels[i] : 0);
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double seconds = std::chrono::duration<double>(t1 - t0).count();
    const double throughput = samples.size() / seconds;
    const double o = auroc(obj_scores, obj_labels);
    const double p = auroc(pt_scores, pt_labels);
    std::printf("%8d  %8.4f  %8.4f  %10.3f\n", points, o, p, throughput);
    rows.push_back(nlohmann::ordered_json{{"points", points},
                                          {"o_auroc", o},
                                          {"p_auroc", p},
                                          {"clouds_per_s", throughput}});
  }

  nlohmann::ordered_json doc{{"rows", rows}, {"config_hash", config_hash(cfg)}};
  write_text(fs::path(cfg.out_dir) / "reports" / "ablation.json", doc.dump(2) + "\n");
  return 0;
}

int cmd_fpfh_dump(const std::string& cloud_path, int k) {
  PointCloud cloud = load_ply(cloud_path);
  cloud = normalize_cloud(cloud);
  if (!cloud.has_normals())
    cloud = estimate_normals(cloud, std::min<int>(16, static_cast<int>(cloud.size())));
  std::vector<FpfhDescriptor> descs = fpfh(cloud, k);
  for (const auto& d : descs) {
    for (int j = 0; j < kFpfhSize; ++j)
      std::printf("%s%.9g", j == 0 ? "" : " ", d[j]);
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud anomaly detection: synthesize, train, evaluate, score"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, score_args, ablate_args;
  std::string eval_checkpoint, score_checkpoint, ablate_checkpoint;
  std::string score_cloud, dump_cloud;
  bool random_baseline = false;
  int dump_k = 8;

  add_common(app.add_subcommand("synth", "Generate the synthetic benchmark"), synth_args);
  add_common(app.add_subcommand("train", "Train on one category"), train_args);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate on held-out categories");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Trained checkpoint");
  eval_cmd->add_flag("--random-baseline", random_baseline,
                     "Score with uniform noise instead of a model");

  CLI::App* score_cmd = app.add_subcommand("score", "Score one cloud, write a heatmap");
  add_common(score_cmd, score_args);
  score_cmd->add_option("--checkpoint", score_checkpoint, "Trained checkpoint")
      ->required();
  score_cmd->add_option("--cloud", score_cloud, "PLY file to score")->required();

  app.add_subcommand("gradcheck",
                     "Finite-difference gradient check of every trainable parameter");

  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Sweep input resolutions and report throughput");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--checkpoint", ablate_checkpoint, "Optional checkpoint");

  CLI::App* dump_cmd = app.add_subcommand("fpfh-dump", "Print descriptors, one row per point");
  dump_cmd->add_option("--cloud", dump_cloud, "PLY file")->required();
  dump_cmd->add_option("--k", dump_k, "Neighborhood size");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("synth")) return cmd_synth(synth_args);
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("eval")) return cmd_eval(eval_args, eval_checkpoint, random_baseline);
    if (app.got_subcommand("score")) return cmd_score(score_args, score_checkpoint, score_cloud);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args, ablate_checkpoint);
    if (app.got_subcommand("fpfh-dump")) return cmd_fpfh_dump(dump_cloud, dump_k);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", e.what()}, {"type", "config"}}.dump() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"type", "numerical"}}.dump() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"type", "config"}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"type", "io"}}.dump() << "\n";
    return 3;
  }
}
