#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plad/metrics.hpp"
#include "plad/model.hpp"
#include "plad/params.hpp"
#include "plad/pipeline.hpp"

namespace plad {

// Raised when a loss or gradient stops being finite. The command surface
// maps it to its own exit code, distinct from config and I/O failures.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-group optimizer knobs. Entry-level decay flags still apply on top:
// tensors registered with decay=false never decay regardless of the group.
struct GroupConfig {
  double weight_decay = 1e-4;
  double lr_scale = 1.0;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double base_lr = 2e-3;
  double min_lr = 1e-6;
  double warmup_fraction = 0.10;
  double clip_norm = 1.0;
  int eval_every = 1;  // epochs between held-out evaluations (0 = only final)
  std::uint64_t seed = 1;
  GroupConfig encoder_group;
  GroupConfig geometry_group;  // geometric branch, fusion, alignment head
  GroupConfig prompt_group;

  void validate() const;
};

// Linear ramp 0 -> base_lr over the warmup fraction of steps, then cosine
// from base_lr to min_lr. `step` runs in [0, total_steps].
double lr_at(int step, int total_steps, const TrainConfig& cfg);

// Scales every gradient so the global L2 norm is at most `clip_norm`.
// Returns the pre-clip norm. Throws NumericalError on a non-finite gradient.
double clip_global_norm(ParamRegistry& reg, double clip_norm);

struct ParamGroup {
  std::string name;
  std::vector<int> entries;  // indices into the registry
  GroupConfig cfg;
};

// Splits the registry by name prefix: encoder.* / geo.* fusion.* align.* /
// prompts.*. Throws if any entry matches none of them.
std::vector<ParamGroup> default_param_groups(const ParamRegistry& reg,
                                             const TrainConfig& cfg);

// Decoupled-weight-decay Adam, beta = (0.9, 0.999), eps = 1e-8. Moments are
// kept per tensor; one shared step counter drives bias correction.
class AdamW {
 public:
  AdamW(ParamRegistry& reg, std::vector<ParamGroup> groups, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the gradients currently in the registry.
  void step(double lr);

  int steps_taken() const { return t_; }

 private:
  ParamRegistry& reg_;
  std::vector<ParamGroup> groups_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // indexed like reg_.entries()
};

// Evaluation, grouped by category.
struct CategoryData {
  std::string name;
  std::vector<PipelineSample> samples;
};

// Object metrics over fused object scores, point metrics over pooled
// per-point scores of every cloud in the category; AUPRO regions come from
// single-linkage clustering per cloud with ids offset so clouds never merge.
// `overall` pools every category.
EvalReport evaluate_model(const AnomalyModel& model,
                          const std::vector<CategoryData>& categories);

// Same aggregation with an external scorer (object score, per-point scores);
// the random baseline plugs in here.
using SampleScorer =
    std::function<std::pair<double, std::vector<double>>(const PipelineSample&)>;
EvalReport evaluate_scored(const std::vector<CategoryData>& categories,
                           const SampleScorer& scorer);

class Trainer {
 public:
  Trainer(AnomalyModel& model, const TrainConfig& cfg);

  // Runs the full schedule and returns JSON log lines (one per step, plus
  // one per evaluation pass). Deterministic: identical model state, config,
  // and data produce identical lines and final parameters.
  std::vector<std::string> fit(const std::vector<PipelineSample>& train_set,
                               const std::vector<CategoryData>& eval_categories);

  const EvalReport& last_report() const { return last_report_; }

 private:
  AnomalyModel& model_;
  TrainConfig cfg_;
  EvalReport last_report_;
};

}  // namespace plad
