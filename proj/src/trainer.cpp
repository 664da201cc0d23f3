#include "plad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace plad {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train: base_lr must be > 0");
  if (!(min_lr >= 0.0) || min_lr > base_lr)
    throw std::invalid_argument("train: need 0 <= min_lr <= base_lr");
  if (!(warmup_fraction >= 0.0) || warmup_fraction >= 1.0)
    throw std::invalid_argument("train: warmup_fraction must be in [0, 1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be > 0");
  if (eval_every < 0) throw std::invalid_argument("train: eval_every must be >= 0");
  for (const GroupConfig* g : {&encoder_group, &geometry_group, &prompt_group}) {
    if (g->weight_decay < 0.0)
      throw std::invalid_argument("train: weight_decay must be >= 0");
    if (!(g->lr_scale > 0.0))
      throw std::invalid_argument("train: lr_scale must be > 0");
  }
}

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  if (total_steps < 1) throw std::invalid_argument("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  const double warmup = cfg.warmup_fraction * total_steps;
  if (static_cast<double>(step) < warmup)
    return cfg.base_lr * (static_cast<double>(step) / warmup);
  if (step == total_steps) return cfg.min_lr;
  const double progress = (static_cast<double>(step) - warmup) /
                          (static_cast<double>(total_steps) - warmup);
  return cfg.min_lr +
         0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double clip_global_norm(ParamRegistry& reg, double clip_norm) {
  double sq = 0.0;
  for (const auto& e : reg.entries()) {
    ag::Tensor t = e.tensor;
    for (double g : t.raw_grad()) {
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient in " + e.name);
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0.0) {
    const double scale = clip_norm / norm;
    for (const auto& e : reg.entries()) {
      ag::Tensor t = e.tensor;
      for (double& g : t.raw_grad()) g *= scale;
    }
  }
  return norm;
}

std::vector<ParamGroup> default_param_groups(const ParamRegistry& reg,
                                             const TrainConfig& cfg) {
  ParamGroup enc{"encoder", {}, cfg.encoder_group};
  ParamGroup geo{"geometry", {}, cfg.geometry_group};
  ParamGroup prm{"prompts", {}, cfg.prompt_group};
  const auto& entries = reg.entries();
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    const std::string& n = entries[i].name;
    if (n.rfind("encoder.", 0) == 0) {
      enc.entries.push_back(i);
    } else if (n.rfind("geo.", 0) == 0 || n.rfind("fusion.", 0) == 0 ||
               n.rfind("align.", 0) == 0) {
      geo.entries.push_back(i);
    } else if (n.rfind("prompts.", 0) == 0) {
      prm.entries.push_back(i);
    } else {
      throw std::invalid_argument("param group: unclaimed parameter " + n);
    }
  }
  return {enc, geo, prm};
}

AdamW::AdamW(ParamRegistry& reg, std::vector<ParamGroup> groups, double beta1,
             double beta2, double eps)
    : reg_(reg), groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(reg_.entries().size());
  v_.resize(reg_.entries().size());
  std::vector<bool> claimed(reg_.entries().size(), false);
  for (const auto& g : groups_) {
    for (int idx : g.entries) {
      if (idx < 0 || idx >= static_cast<int>(reg_.entries().size()))
        throw std::invalid_argument("optimizer: group index out of range");
      if (claimed[idx])
        throw std::invalid_argument("optimizer: parameter claimed twice: " +
                                    reg_.entries()[idx].name);
      claimed[idx] = true;
    }
  }
  for (std::size_t i = 0; i < claimed.size(); ++i)
    if (!claimed[i])
      throw std::invalid_argument("optimizer: parameter in no group: " +
                                  reg_.entries()[i].name);
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (const auto& group : groups_) {
    const double lr_g = lr * group.cfg.lr_scale;
    for (int idx : group.entries) {
      const auto& entry = reg_.entries()[idx];
      ag::Tensor t = entry.tensor;
      std::vector<double>& val = t.raw_value();
      std::vector<double>& grad = t.raw_grad();
      std::vector<double>& m = m_[idx];
      std::vector<double>& v = v_[idx];
      if (m.empty()) {
        m.assign(val.size(), 0.0);
        v.assign(val.size(), 0.0);
      }
      const double decay = entry.decay ? group.cfg.weight_decay : 0.0;
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = grad[j];
        if (!std::isfinite(g))
          throw NumericalError("non-finite gradient in " + entry.name);
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        val[j] -= lr_g * decay * val[j];
        val[j] -= lr_g * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }
}

namespace {

// Region ids per pooled point vector, offset per cloud so regions from
// different clouds stay distinct.
void pool_scored_cloud(const PipelineSample& sample, const std::vector<double>& scores,
                       std::vector<double>& pooled_scores,
                       std::vector<uint8_t>& pooled_labels,
                       std::vector<int>& pooled_regions, int& next_region) {
  std::vector<uint8_t> labels = sample.cloud.has_labels()
                                    ? sample.cloud.labels
                                    : std::vector<uint8_t>(sample.cloud.size(), 0);
  std::vector<int> regions = single_linkage_regions(sample.cloud.points, labels);
  int max_id = -1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pooled_scores.push_back(scores[i]);
    pooled_labels.push_back(labels[i]);
    const int rid = regions[i] < 0 ? -1 : regions[i] + next_region;
    pooled_regions.push_back(rid);
    max_id = std::max(max_id, rid);
  }
  if (max_id >= next_region) next_region = max_id + 1;
}

MetricSet compute_metric_set(const std::vector<double>& obj_scores,
                             const std::vector<uint8_t>& obj_labels,
                             const std::vector<double>& pt_scores,
                             const std::vector<uint8_t>& pt_labels,
                             const std::vector<int>& pt_regions) {
  MetricSet m;
  m.o_auroc = auroc(obj_scores, obj_labels);
  m.o_ap = average_precision(obj_scores, obj_labels);
  m.o_f1 = f1_max(obj_scores, obj_labels);
  m.p_auroc = auroc(pt_scores, pt_labels);
  m.p_ap = average_precision(pt_scores, pt_labels);
  m.p_aupro = aupro(pt_scores, pt_labels, pt_regions);
  return m;
}

}  // namespace

EvalReport evaluate_scored(const std::vector<CategoryData>& categories,
                           const SampleScorer& scorer) {
  if (categories.empty())
    throw std::invalid_argument("evaluate: no categories");

  EvalReport report;
  std::vector<double> all_obj_scores, all_pt_scores;
  std::vector<uint8_t> all_obj_labels, all_pt_labels;
  std::vector<int> all_pt_regions;
  int next_region = 0;

  for (const auto& cat : categories) {
    if (cat.samples.empty())
      throw std::invalid_argument("evaluate: empty category " + cat.name);
    std::vector<double> obj_scores, pt_scores;
    std::vector<uint8_t> obj_labels, pt_labels;
    std::vector<int> pt_regions;
    int cat_next_region = 0;
    for (const auto& sample : cat.samples) {
      auto [object_score, point_scores] = scorer(sample);
      obj_scores.push_back(object_score);
      obj_labels.push_back(static_cast<uint8_t>(sample.label));
      pool_scored_cloud(sample, point_scores, pt_scores, pt_labels,
                        pt_regions, cat_next_region);
    }
    report.per_category[cat.name] =
        compute_metric_set(obj_scores, obj_labels, pt_scores, pt_labels, pt_regions);

    all_obj_scores.insert(all_obj_scores.end(), obj_scores.begin(), obj_scores.end());
    all_obj_labels.insert(all_obj_labels.end(), obj_labels.begin(), obj_labels.end());
    all_pt_scores.insert(all_pt_scores.end(), pt_scores.begin(), pt_scores.end());
    all_pt_labels.insert(all_pt_labels.end(), pt_labels.begin(), pt_labels.end());
    for (int rid : pt_regions)
      all_pt_regions.push_back(rid < 0 ? -1 : rid + next_region);
    next_region += cat_next_region;
  }

  report.overall = compute_metric_set(all_obj_scores, all_obj_labels, all_pt_scores,
                                      all_pt_labels, all_pt_regions);
  return report;
}

EvalReport evaluate_model(const AnomalyModel& model,
                          const std::vector<CategoryData>& categories) {
  return evaluate_scored(categories, [&model](const PipelineSample& sample) {
    AnomalyModel::Scored scored = model.score(sample);
    return std::make_pair(scored.object.y_hat, std::move(scored.point_scores));
  });
}

Trainer::Trainer(AnomalyModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg) {
  cfg_.validate();
}

std::vector<std::string> Trainer::fit(const std::vector<PipelineSample>& train_set,
                                      const std::vector<CategoryData>& eval_categories) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  for (const auto& s : train_set) {
    if (!s.cloud.has_labels())
      throw std::invalid_argument("train: sample carries no point labels");
    if (s.label == 1) {
      bool any = false;
      for (uint8_t l : s.cloud.labels) any = any || l != 0;
      if (!any)
        throw std::invalid_argument(
            "train: anomalous sample has an all-zero point mask");
    }
  }

  const int n = static_cast<int>(train_set.size());
  const int steps_per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  const int total_steps = cfg_.epochs * steps_per_epoch;

  AdamW opt(model_.params(), default_param_groups(model_.params(), cfg_));
  Rng shuffle_root = Rng(cfg_.seed).fork(0x51u);
  std::vector<std::string> log;

  {
    nlohmann::ordered_json j{{"event", "start"},
                             {"samples", n},
                             {"steps_per_epoch", steps_per_epoch},
                             {"total_steps", total_steps}};
    log.push_back(j.dump());
  }

  int step_idx = 0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng erng = shuffle_root.fork(static_cast<uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[erng.uniform_int(0, i)]);

    for (int start = 0; start < n; start += cfg_.batch_size) {
      const int count = std::min(cfg_.batch_size, n - start);
      ag::Tensor batch_total, batch_local, batch_global, batch_geo;
      for (int b = 0; b < count; ++b) {
        const PipelineSample& sample = train_set[order[start + b]];
        AnomalyModel::Forward fw = model_.forward(sample);
        AnomalyModel::LossParts parts = model_.loss(fw, sample);
        batch_total = batch_total.defined() ? ag::add(batch_total, parts.total)
                                            : parts.total;
        batch_local = batch_local.defined() ? ag::add(batch_local, parts.local)
                                            : parts.local;
        batch_global = batch_global.defined() ? ag::add(batch_global, parts.global)
                                              : parts.global;
        batch_geo = batch_geo.defined() ? ag::add(batch_geo, parts.geo) : parts.geo;
      }
      batch_total = ag::scale(batch_total, 1.0 / count);
      const double loss_value = batch_total.value()[0];
      if (!std::isfinite(loss_value))
        throw NumericalError("non-finite loss at step " + std::to_string(step_idx));

      model_.params().zero_grad();
      ag::backward(batch_total);
      const double grad_norm = clip_global_norm(model_.params(), cfg_.clip_norm);
      const double lr = lr_at(step_idx + 1, total_steps, cfg_);
      opt.step(lr);

      nlohmann::ordered_json j{{"epoch", epoch},
                               {"step", step_idx},
                               {"lr", lr},
                               {"loss", loss_value},
                               {"local", batch_local.value()[0] / count},
                               {"global", batch_global.value()[0] / count},
                               {"geo", batch_geo.value()[0] / count},
                               {"grad_norm", grad_norm}};
      log.push_back(j.dump());
      ++step_idx;
    }

    const bool last = epoch + 1 == cfg_.epochs;
    const bool due = cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0;
    if (!eval_categories.empty() && (due || last)) {
      last_report_ = evaluate_model(model_, eval_categories);
      nlohmann::ordered_json j{{"epoch", epoch},
                               {"eval", nlohmann::ordered_json::parse(
                                            report_to_json(last_report_))}};
      log.push_back(j.dump());
    }
  }
  return log;
}

}  // namespace plad
