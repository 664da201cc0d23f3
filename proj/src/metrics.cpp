#include "plad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace plad {

namespace {

void check_sizes(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                 const char* who) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(who) + ": scores/labels size mismatch");
  if (scores.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument(std::string(who) + ": non-finite score");
}

// Indices sorted by descending score, plus the boundaries of tie groups.
std::vector<int> descending_order(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  check_sizes(scores, labels, "auroc");
  const std::size_t n = scores.size();
  std::size_t npos = 0;
  for (uint8_t l : labels) npos += l ? 1 : 0;
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw std::invalid_argument("auroc: single-class input");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, summed for the positive class.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t q = i; q < j; ++q)
      if (labels[order[q]]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels) {
  check_sizes(scores, labels, "average_precision");
  std::size_t npos = 0;
  for (uint8_t l : labels) npos += l ? 1 : 0;
  if (npos == 0) throw std::invalid_argument("average_precision: no positive labels");

  const auto order = descending_order(scores);
  const std::size_t n = order.size();
  double ap = 0.0, recall_prev = 0.0;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t q = i; q < j; ++q) (labels[order[q]] ? tp : fp) += 1;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(npos);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

double f1_max(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  check_sizes(scores, labels, "f1_max");
  std::size_t npos = 0;
  for (uint8_t l : labels) npos += l ? 1 : 0;
  if (npos == 0) throw std::invalid_argument("f1_max: no positive labels");

  const auto order = descending_order(scores);
  const std::size_t n = order.size();
  double best = 0.0;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t q = i; q < j; ++q) (labels[order[q]] ? tp : fp) += 1;
    const double fn = static_cast<double>(npos - tp);
    const double f1 = 2.0 * static_cast<double>(tp) /
                      (2.0 * static_cast<double>(tp) + static_cast<double>(fp) + fn);
    best = std::max(best, f1);
    i = j;
  }
  return best;
}

double aupro(const std::vector<double>& point_scores,
             const std::vector<uint8_t>& point_labels,
             const std::vector<int>& region_ids, double fpr_limit) {
  check_sizes(point_scores, point_labels, "aupro");
  if (region_ids.size() != point_scores.size())
    throw std::invalid_argument("aupro: region_ids size mismatch");
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0))
    throw std::invalid_argument("aupro: fpr_limit must be in (0, 1]");

  int max_region = -1;
  std::size_t nneg = 0;
  for (std::size_t i = 0; i < point_labels.size(); ++i) {
    if (point_labels[i]) {
      if (region_ids[i] < 0)
        throw std::invalid_argument("aupro: anomalous point without a region id");
      max_region = std::max(max_region, region_ids[i]);
    } else {
      if (region_ids[i] >= 0)
        throw std::invalid_argument("aupro: normal point with a region id");
      ++nneg;
    }
  }
  if (max_region < 0) throw std::invalid_argument("aupro: no anomalous region");
  if (nneg == 0) throw std::invalid_argument("aupro: no normal points for FPR");

  const int nregions = max_region + 1;
  std::vector<std::size_t> region_size(nregions, 0);
  for (std::size_t i = 0; i < point_labels.size(); ++i)
    if (point_labels[i]) region_size[region_ids[i]] += 1;
  for (int r = 0; r < nregions; ++r)
    if (region_size[r] == 0) throw std::invalid_argument("aupro: empty region id");

  // Walk thresholds from high to low; at each distinct score emit one
  // (FPR, mean-region-overlap) point and integrate the clipped trapezoid.
  const auto order = descending_order(point_scores);
  std::vector<std::size_t> region_hits(nregions, 0);
  std::size_t false_pos = 0;
  double area = 0.0, fpr_prev = 0.0, pro_prev = 0.0;
  std::size_t i = 0;
  const std::size_t n = order.size();
  while (i < n) {
    std::size_t j = i;
    while (j < n && point_scores[order[j]] == point_scores[order[i]]) ++j;
    for (std::size_t q = i; q < j; ++q) {
      const int idx = order[q];
      if (point_labels[idx])
        region_hits[region_ids[idx]] += 1;
      else
        ++false_pos;
    }
    double pro = 0.0;
    for (int r = 0; r < nregions; ++r)
      pro += static_cast<double>(region_hits[r]) / static_cast<double>(region_size[r]);
    pro /= static_cast<double>(nregions);
    const double fpr = static_cast<double>(false_pos) / static_cast<double>(nneg);

    if (fpr > fpr_limit) {
      // interpolate the curve at the integration limit
      const double t = (fpr_limit - fpr_prev) / (fpr - fpr_prev);
      const double pro_at_limit = pro_prev + t * (pro - pro_prev);
      area += (fpr_limit - fpr_prev) * 0.5 * (pro_prev + pro_at_limit);
      return area / fpr_limit;
    }
    area += (fpr - fpr_prev) * 0.5 * (pro_prev + pro);
    if (fpr == fpr_limit) return area / fpr_limit;
    fpr_prev = fpr;
    pro_prev = pro;
    i = j;
  }
  // the lowest threshold admits every point, so FPR = 1 and fpr_limit <= 1
  // was already hit; reaching here means rounding noise only
  return area / fpr_limit;
}

std::vector<int> single_linkage_regions(const std::vector<Vec3>& points,
                                        const std::vector<uint8_t>& labels,
                                        double radius) {
  if (points.size() != labels.size())
    throw std::invalid_argument("single_linkage_regions: size mismatch");
  if (radius <= 0.0) throw std::invalid_argument("single_linkage_regions: radius <= 0");

  const int n = static_cast<int>(points.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  std::vector<int> anom;
  for (int i = 0; i < n; ++i)
    if (labels[i]) anom.push_back(i);
  const double r2 = radius * radius;
  for (std::size_t a = 0; a < anom.size(); ++a)
    for (std::size_t b = a + 1; b < anom.size(); ++b)
      if (dist2(points[anom[a]], points[anom[b]]) <= r2) {
        const int ra = find(anom[a]), rb = find(anom[b]);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
      }

  std::vector<int> ids(n, -1);
  std::map<int, int> dense;
  for (int i : anom) {
    const int root = find(i);
    auto [it, inserted] = dense.try_emplace(root, static_cast<int>(dense.size()));
    ids[i] = it->second;
  }
  return ids;
}

namespace {

nlohmann::ordered_json metric_set_json(const MetricSet& m) {
  return nlohmann::ordered_json{{"o_auroc", m.o_auroc}, {"o_ap", m.o_ap},
                                {"o_f1", m.o_f1},       {"p_auroc", m.p_auroc},
                                {"p_ap", m.p_ap},       {"p_aupro", m.p_aupro}};
}

}  // namespace

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_std: empty input");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size() - 1))};
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["overall"] = metric_set_json(report.overall);
  nlohmann::ordered_json cats = nlohmann::ordered_json::object();
  for (const auto& [name, m] : report.per_category) cats[name] = metric_set_json(m);
  j["categories"] = cats;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  std::size_t name_w = 8;  // fits "category" and "overall"
  for (const auto& [name, m] : report.per_category) name_w = std::max(name_w, name.size());

  auto row = [&](const std::string& name, const MetricSet& m) {
    out << name;
    out << std::string(name_w - name.size(), ' ');
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  %8.4f  %8.4f  %8.4f  %8.4f  %8.4f  %8.4f\n",
                  m.o_auroc, m.o_ap, m.o_f1, m.p_auroc, m.p_ap, m.p_aupro);
    out << buf;
  };

  out << "category" << std::string(name_w - 8, ' ')
      << "   O-AUROC      O-AP      O-F1   P-AUROC      P-AP   P-AUPRO\n";
  for (const auto& [name, m] : report.per_category) row(name, m);
  row("overall", report.overall);
  return out.str();
}

}  // namespace plad
