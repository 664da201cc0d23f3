#include "plad/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace plad {

namespace {

using nlohmann::ordered_json;

ordered_json pipeline_json(const PipelineConfig& p) {
  return ordered_json{{"sample_points", p.sample_points}, {"patch_count", p.patch_count},
                      {"patch_size", p.patch_size},       {"normals_k", p.normals_k},
                      {"fpfh_k", p.fpfh_k},               {"interp_k", p.interp_k}};
}

ordered_json encoder_json(const EncoderConfig& e) {
  return ordered_json{{"num_layers", e.num_layers}, {"embed_dim", e.embed_dim},
                      {"heads", e.heads},           {"tap_layers", e.tap_layers},
                      {"out_dim", e.out_dim},       {"token_hidden", e.token_hidden}};
}

ordered_json geonet_json(const GeoNetConfig& g) {
  return ordered_json{
      {"hidden1", g.hidden1}, {"hidden2", g.hidden2}, {"out_dim", g.out_dim}};
}

ordered_json prompts_json(const PromptConfig& p) {
  return ordered_json{{"prefix_normal", p.prefix_normal},
                      {"suffix_normal", p.suffix_normal},
                      {"prefix_defect", p.prefix_defect},
                      {"suffix_defect", p.suffix_defect},
                      {"context_length", p.context_length},
                      {"text_layers", p.text_layers},
                      {"text_dim", p.text_dim},
                      {"text_heads", p.text_heads},
                      {"out_dim", p.out_dim},
                      {"tau_init", p.tau_init}};
}

ordered_json loss_json(const LossConfig& l) {
  return ordered_json{{"focal_gamma", l.focal_gamma}, {"focal_alpha", l.focal_alpha},
                      {"dice_eps", l.dice_eps},       {"fusion_alpha", l.fusion_alpha},
                      {"lambda1", l.lambda1},         {"lambda2", l.lambda2},
                      {"infonce_tau", l.infonce_tau}};
}

ordered_json group_json(const GroupConfig& g) {
  return ordered_json{{"weight_decay", g.weight_decay}, {"lr_scale", g.lr_scale}};
}

ordered_json train_json(const TrainConfig& t) {
  return ordered_json{{"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"base_lr", t.base_lr},
                      {"min_lr", t.min_lr},
                      {"warmup_fraction", t.warmup_fraction},
                      {"clip_norm", t.clip_norm},
                      {"eval_every", t.eval_every},
                      {"seed", t.seed},
                      {"encoder_group", group_json(t.encoder_group)},
                      {"geometry_group", group_json(t.geometry_group)},
                      {"prompt_group", group_json(t.prompt_group)}};
}

ordered_json spec_to_json(const SynthSpec& s) {
  return ordered_json{{"shape", s.shape},
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

ordered_json to_json(const RunConfig& cfg) {
  ordered_json j;
  j["data_dir"] = cfg.data_dir;
  j["out_dir"] = cfg.out_dir;
  j["train_category"] = cfg.train_category;
  j["threads"] = cfg.threads;
  j["pipeline"] = pipeline_json(cfg.pipeline);
  j["encoder"] = encoder_json(cfg.encoder);
  j["geonet"] = geonet_json(cfg.geonet);
  j["prompts"] = prompts_json(cfg.prompts);
  j["loss"] = loss_json(cfg.loss);
  j["train"] = train_json(cfg.train);
  j["synth"] = ordered_json::array();
  for (const auto& s : cfg.synth) j["synth"].push_back(spec_to_json(s));
  return j;
}

// Numbers of any width are mutually assignable; everything else must match
// the reference kind exactly.
bool kind_compatible(const ordered_json& ref, const ordered_json& in) {
  if (ref.is_number() && in.is_number()) return true;
  if (ref.is_number() && in.is_boolean()) return false;
  return ref.type() == in.type();
}

void check_unknown_keys(const ordered_json& ref, const ordered_json& in,
                        const std::string& path) {
  if (in.is_object()) {
    if (!ref.is_object())
      throw std::invalid_argument("config: " + path + " is not an object");
    for (const auto& [key, value] : in.items()) {
      const std::string child = path.empty() ? key : path + "." + key;
      if (!ref.contains(key))
        throw std::invalid_argument("config: unknown key " + child);
      check_unknown_keys(ref.at(key), value, child);
    }
    return;
  }
  if (in.is_array()) {
    if (!ref.is_array())
      throw std::invalid_argument("config: " + path + " is not an array");
    // Array entries all follow the shape of the reference's first element;
    // an empty input array is always fine.
    if (ref.empty() || in.empty()) return;
    for (std::size_t i = 0; i < in.size(); ++i)
      check_unknown_keys(ref.at(0), in.at(i), path + "." + std::to_string(i));
    return;
  }
  if (!kind_compatible(ref, in))
    throw std::invalid_argument("config: wrong value type at " + path);
}

void merge_over(ordered_json& base, const ordered_json& in) {
  if (in.is_object() && base.is_object()) {
    for (const auto& [key, value] : in.items()) merge_over(base.at(key), value);
    return;
  }
  // Arrays of objects (the synth specs) merge item-by-item so a partial spec
  // inherits the remaining defaults; extra items start from the first
  // default. Scalar arrays replace wholesale.
  if (in.is_array() && base.is_array() && !base.empty() && base.at(0).is_object()) {
    ordered_json tmpl = base.at(0);
    ordered_json out = ordered_json::array();
    for (std::size_t i = 0; i < in.size(); ++i) {
      ordered_json slot = i < base.size() ? base.at(i) : tmpl;
      merge_over(slot, in.at(i));
      out.push_back(std::move(slot));
    }
    base = std::move(out);
    return;
  }
  base = in;
}

PipelineConfig pipeline_from(const ordered_json& j) {
  PipelineConfig p;
  p.sample_points = j.at("sample_points").get<int>();
  p.patch_count = j.at("patch_count").get<int>();
  p.patch_size = j.at("patch_size").get<int>();
  p.normals_k = j.at("normals_k").get<int>();
  p.fpfh_k = j.at("fpfh_k").get<int>();
  p.interp_k = j.at("interp_k").get<int>();
  return p;
}

EncoderConfig encoder_from(const ordered_json& j) {
  EncoderConfig e;
  e.num_layers = j.at("num_layers").get<int>();
  e.embed_dim = j.at("embed_dim").get<int>();
  e.heads = j.at("heads").get<int>();
  e.tap_layers = j.at("tap_layers").get<std::vector<int>>();
  e.out_dim = j.at("out_dim").get<int>();
  e.token_hidden = j.at("token_hidden").get<int>();
  return e;
}

GeoNetConfig geonet_from(const ordered_json& j) {
  GeoNetConfig g;
  g.hidden1 = j.at("hidden1").get<int>();
  g.hidden2 = j.at("hidden2").get<int>();
  g.out_dim = j.at("out_dim").get<int>();
  return g;
}

PromptConfig prompts_from(const ordered_json& j) {
  PromptConfig p;
  p.prefix_normal = j.at("prefix_normal").get<std::string>();
  p.suffix_normal = j.at("suffix_normal").get<std::string>();
  p.prefix_defect = j.at("prefix_defect").get<std::string>();
  p.suffix_defect = j.at("suffix_defect").get<std::string>();
  p.context_length = j.at("context_length").get<int>();
  p.text_layers = j.at("text_layers").get<int>();
  p.text_dim = j.at("text_dim").get<int>();
  p.text_heads = j.at("text_heads").get<int>();
  p.out_dim = j.at("out_dim").get<int>();
  p.tau_init = j.at("tau_init").get<double>();
  return p;
}

LossConfig loss_from(const ordered_json& j) {
  LossConfig l;
  l.focal_gamma = j.at("focal_gamma").get<double>();
  l.focal_alpha = j.at("focal_alpha").get<double>();
  l.dice_eps = j.at("dice_eps").get<double>();
  l.fusion_alpha = j.at("fusion_alpha").get<double>();
  l.lambda1 = j.at("lambda1").get<double>();
  l.lambda2 = j.at("lambda2").get<double>();
  l.infonce_tau = j.at("infonce_tau").get<double>();
  return l;
}

GroupConfig group_from(const ordered_json& j) {
  GroupConfig g;
  g.weight_decay = j.at("weight_decay").get<double>();
  g.lr_scale = j.at("lr_scale").get<double>();
  return g;
}

TrainConfig train_from(const ordered_json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.base_lr = j.at("base_lr").get<double>();
  t.min_lr = j.at("min_lr").get<double>();
  t.warmup_fraction = j.at("warmup_fraction").get<double>();
  t.clip_norm = j.at("clip_norm").get<double>();
  t.eval_every = j.at("eval_every").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.encoder_group = group_from(j.at("encoder_group"));
  t.geometry_group = group_from(j.at("geometry_group"));
  t.prompt_group = group_from(j.at("prompt_group"));
  return t;
}

SynthSpec spec_from(const ordered_json& j) {
  SynthSpec s;
  s.shape = j.at("shape").get<std::string>();
  s.points_per_cloud = j.at("points_per_cloud").get<int>();
  s.anomaly = j.at("anomaly").get<std::string>();
  s.count_min = j.at("count_min").get<int>();
  s.count_max = j.at("count_max").get<int>();
  s.radius_min = j.at("radius_min").get<double>();
  s.radius_max = j.at("radius_max").get<double>();
  s.jitter_sigma = j.at("jitter_sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_normal = j.at("train_normal").get<int>();
  s.test_normal = j.at("test_normal").get<int>();
  s.test_anomalous = j.at("test_anomalous").get<int>();
  return s;
}

RunConfig from_json(const ordered_json& j) {
  RunConfig cfg;
  cfg.data_dir = j.at("data_dir").get<std::string>();
  cfg.out_dir = j.at("out_dir").get<std::string>();
  cfg.train_category = j.at("train_category").get<std::string>();
  cfg.threads = j.at("threads").get<int>();
  cfg.pipeline = pipeline_from(j.at("pipeline"));
  cfg.encoder = encoder_from(j.at("encoder"));
  cfg.geonet = geonet_from(j.at("geonet"));
  cfg.prompts = prompts_from(j.at("prompts"));
  cfg.loss = loss_from(j.at("loss"));
  cfg.train = train_from(j.at("train"));
  cfg.synth.clear();
  for (const auto& s : j.at("synth")) cfg.synth.push_back(spec_from(s));
  return cfg;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder = encoder;
  m.geonet = geonet;
  m.prompts = prompts;
  m.loss = loss;
  return m;
}

void RunConfig::validate() const {
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  pipeline.validate();
  model_config().validate();
  train.validate();
  if (synth.empty()) throw std::invalid_argument("config: no synth specs");
  for (const auto& s : synth) {
    if (s.shape != "sphere" && s.shape != "cube" && s.shape != "cylinder")
      throw std::invalid_argument("config: unknown shape " + s.shape);
    if (s.anomaly != "bump" && s.anomaly != "dent" && s.anomaly != "crack")
      throw std::invalid_argument("config: unknown anomaly " + s.anomaly);
    if (s.points_per_cloud < pipeline.patch_size)
      throw std::invalid_argument("config: clouds smaller than one patch");
  }
  bool found = false;
  for (const auto& s : synth) found = found || s.shape == train_category;
  if (!found)
    throw std::invalid_argument("config: train_category " + train_category +
                                " has no synth spec");
}

RunConfig default_run_config() {
  RunConfig cfg;
  SynthSpec sphere;
  sphere.shape = "sphere";
  sphere.anomaly = "bump";
  sphere.seed = 11;
  SynthSpec cube;
  cube.shape = "cube";
  cube.anomaly = "dent";
  cube.seed = 22;
  SynthSpec cylinder;
  cylinder.shape = "cylinder";
  cylinder.anomaly = "crack";
  cylinder.seed = 33;
  cfg.synth = {sphere, cube, cylinder};
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  return to_json(cfg).dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json in;
  try {
    in = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!in.is_object()) throw std::invalid_argument("config: document is not an object");
  ordered_json base = to_json(default_run_config());
  check_unknown_keys(base, in, "");
  merge_over(base, in);
  try {
    return from_json(base);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  ordered_json doc = to_json(cfg);
  ordered_json* cursor = &doc;
  std::size_t begin = 0;
  while (begin <= path.size()) {
    const std::size_t dot = path.find('.', begin);
    const std::string part =
        path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (part.empty()) throw std::invalid_argument("override: empty path component");
    if (cursor->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (...) {
        throw std::invalid_argument("override: array index expected at " + part);
      }
      if (idx >= cursor->size())
        throw std::invalid_argument("override: index " + part + " out of range");
      cursor = &cursor->at(idx);
    } else if (cursor->is_object()) {
      if (!cursor->contains(part))
        throw std::invalid_argument("override: unknown key " + part);
      cursor = &cursor->at(part);
    } else {
      throw std::invalid_argument("override: path descends into a scalar at " + part);
    }
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  if (cursor->is_object() || cursor->is_array())
    throw std::invalid_argument("override: path stops at a non-scalar: " + path);

  ordered_json value;
  try {
    value = ordered_json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // plain string
  }
  if (!kind_compatible(*cursor, value))
    throw std::invalid_argument("override: wrong value type for " + path);
  *cursor = value;
  cfg = from_json(doc);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = run_config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace plad
