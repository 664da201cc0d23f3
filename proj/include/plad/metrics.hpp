#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "plad/point_cloud.hpp"

namespace plad {

// Ranking metrics for anomaly scores. Labels are 0 (normal) / 1 (anomalous).
// All functions are pure and reentrant.

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 * P(tie), computed from
/// average ranks in one sort. Throws if either class is absent.
double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

/// Average precision: sum of (R_k - R_{k-1}) * P_k over descending distinct
/// score thresholds, ties grouped. Throws if there is no positive.
double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels);

/// Maximum F1 over thresholds at each distinct score (predict positive when
/// score >= threshold). Throws if there is no positive.
double f1_max(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

/// Area under the per-region-overlap curve. For each threshold the PRO value
/// is the mean over regions of the fraction of the region scored >= threshold,
/// plotted against the false positive rate on normal points and integrated by
/// trapezoid over FPR in [0, fpr_limit], then divided by fpr_limit.
/// `region_ids[i]` must be >= 0 exactly for anomalous points and partition
/// them into regions; normal points carry -1. Throws when there is no
/// anomalous region or no normal point.
double aupro(const std::vector<double>& point_scores,
             const std::vector<uint8_t>& point_labels,
             const std::vector<int>& region_ids, double fpr_limit = 0.3);

/// Groups anomalous points into regions by single-linkage at `radius`:
/// two anomalous points within `radius` of each other (transitively) share a
/// region. Returns one id per point: -1 for normals, otherwise a dense region
/// id numbered by order of first appearance.
std::vector<int> single_linkage_regions(const std::vector<Vec3>& points,
                                        const std::vector<uint8_t>& labels,
                                        double radius = 0.05);

struct MetricSet {
  double o_auroc = 0.0;
  double o_ap = 0.0;
  double o_f1 = 0.0;
  double p_auroc = 0.0;
  double p_ap = 0.0;
  double p_aupro = 0.0;
};

struct EvalReport {
  MetricSet overall;
  std::map<std::string, MetricSet> per_category;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Mean and sample standard deviation (n-1 denominator; 0 for n < 2), for
/// aggregating a metric over independent seeds.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Serializes the report as a JSON document (stable key order).
std::string report_to_json(const EvalReport& report);

/// Renders the report as an aligned text table, one row per category plus an
/// overall row.
std::string report_table(const EvalReport& report);

}  // namespace plad
