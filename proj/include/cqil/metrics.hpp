#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "cqil/common.hpp"
#include "cqil/manifest.hpp"

#include <json.hpp>

namespace cqil {

// PAD evaluation. Convention fixed across the project: a sample is predicted
// live iff score >= threshold (boundary inclusive).

struct ScoredSet {
  std::vector<double> scores;
  std::vector<Liveness> labels;

  void add(double score, Liveness label) {
    scores.push_back(score);
    labels.push_back(label);
  }

  size_t size() const { return scores.size(); }

  void validate() const {
    CQIL_CHECK_MSG(scores.size() == labels.size(), "scores/labels length mismatch");
    CQIL_CHECK_MSG(!scores.empty(), "empty scored set");
    bool has_live = false, has_attack = false;
    for (size_t i = 0; i < scores.size(); ++i) {
      CQIL_CHECK_MSG(scores[i] >= 0.0 && scores[i] <= 1.0,
                     "score out of [0,1]: " << scores[i]);
      (labels[i] == Liveness::live ? has_live : has_attack) = true;
    }
    CQIL_CHECK_MSG(has_live, "scored set has no live samples");
    CQIL_CHECK_MSG(has_attack, "scored set has no attack samples");
  }
};

struct PadRates {
  double apcer = 0.0;  // attacks accepted as live
  double bpcer = 0.0;  // lives rejected as attack
  double acer = 0.0;   // (apcer + bpcer) / 2
};

inline PadRates apcer_bpcer_acer(const ScoredSet& set, double threshold) {
  set.validate();
  size_t n_attack = 0, n_live = 0, fa = 0, fr = 0;
  for (size_t i = 0; i < set.size(); ++i) {
    if (set.labels[i] == Liveness::attack) {
      ++n_attack;
      if (set.scores[i] >= threshold) ++fa;
    } else {
      ++n_live;
      if (set.scores[i] < threshold) ++fr;
    }
  }
  PadRates r;
  r.apcer = static_cast<double>(fa) / n_attack;
  r.bpcer = static_cast<double>(fr) / n_live;
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

// Half total error rate at a fixed threshold. With the binary live/attack
// labelling used here, FAR == APCER and FRR == BPCER, so this coincides with
// ACER on the same set and threshold.
inline double hter(const ScoredSet& set, double threshold) {
  PadRates r = apcer_bpcer_acer(set, threshold);
  return (r.apcer + r.bpcer) / 2.0;
}

// All distinct decision behaviours of "score >= t" over [0,1]: t = 0,
// midpoints of adjacent distinct scores, and t = 1.
inline std::vector<double> threshold_candidates(const std::vector<double>& scores) {
  std::vector<double> s = scores;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> c;
  c.push_back(0.0);
  for (size_t i = 0; i + 1 < s.size(); ++i) c.push_back((s[i] + s[i + 1]) / 2.0);
  c.push_back(1.0);
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

// EER-point threshold on the development set: the candidate minimising
// |APCER - BPCER|, ties broken toward the smaller threshold.
inline double select_threshold(const ScoredSet& dev) {
  dev.validate();
  const auto candidates = threshold_candidates(dev.scores);
  double best_t = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    PadRates r = apcer_bpcer_acer(dev, t);
    const double gap = std::abs(r.apcer - r.bpcer);
    if (gap < best_gap) {
      best_gap = gap;
      best_t = t;
    }
  }
  return best_t;
}

// Probability that a random live sample outscores a random attack sample,
// ties counted 1/2. Midrank computation; exact for these sizes.
inline double auc(const ScoredSet& set) {
  set.validate();
  const size_t n = set.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return set.scores[a] < set.scores[b]; });
  double live_rank_sum = 0.0;
  size_t n_live = 0, n_attack = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && set.scores[idx[j]] == set.scores[idx[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (set.labels[idx[k]] == Liveness::live) live_rank_sum += midrank;
    i = j;
  }
  for (auto l : set.labels) (l == Liveness::live ? n_live : n_attack)++;
  const double u =
      live_rank_sum - static_cast<double>(n_live) * (n_live + 1) / 2.0;
  return u / (static_cast<double>(n_live) * static_cast<double>(n_attack));
}

struct MetricsReport {
  std::string protocol_id;
  std::string variant;
  double threshold = 0.0;
  double apcer = 0.0, bpcer = 0.0, acer = 0.0, hter = 0.0, auc = 0.0;
};

// Threshold from dev, every metric on test at that threshold.
inline MetricsReport evaluate_sets(const ScoredSet& dev, const ScoredSet& test,
                                   const std::string& protocol_id,
                                   const std::string& variant = "") {
  MetricsReport rep;
  rep.protocol_id = protocol_id;
  rep.variant = variant;
  rep.threshold = select_threshold(dev);
  PadRates r = apcer_bpcer_acer(test, rep.threshold);
  rep.apcer = r.apcer;
  rep.bpcer = r.bpcer;
  rep.acer = r.acer;
  rep.hter = hter(test, rep.threshold);
  rep.auc = auc(test);
  return rep;
}

struct MetricStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct Protocol2Summary {
  MetricStat apcer, bpcer, acer, hter, auc;
};

// Mean and sample standard deviation over the four sub-protocol reports.
inline Protocol2Summary aggregate_protocol2(const std::vector<MetricsReport>& reports) {
  CQIL_CHECK_MSG(reports.size() == 4, "protocol 2 aggregation expects 4 reports, got "
                                          << reports.size());
  auto stat = [&](auto getter) {
    MetricStat s;
    for (const auto& r : reports) s.mean += getter(r);
    s.mean /= reports.size();
    double acc = 0.0;
    for (const auto& r : reports) {
      const double d = getter(r) - s.mean;
      acc += d * d;
    }
    s.stddev = std::sqrt(acc / (reports.size() - 1));
    return s;
  };
  Protocol2Summary sum;
  sum.apcer = stat([](const MetricsReport& r) { return r.apcer; });
  sum.bpcer = stat([](const MetricsReport& r) { return r.bpcer; });
  sum.acer = stat([](const MetricsReport& r) { return r.acer; });
  sum.hter = stat([](const MetricsReport& r) { return r.hter; });
  sum.auc = stat([](const MetricsReport& r) { return r.auc; });
  return sum;
}

namespace detail {
inline double percent2(double frac) {
  return std::round(frac * 10000.0) / 100.0;
}
}  // namespace detail

// Report files: percentages carry two decimals to line up with the usual
// table style.
inline void write_report_csv(const MetricsReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot write " << path);
  char line[256];
  std::snprintf(line, sizeof(line), "%.6f,%.2f,%.2f,%.2f,%.2f,%.2f", rep.threshold,
                detail::percent2(rep.apcer), detail::percent2(rep.bpcer),
                detail::percent2(rep.acer), detail::percent2(rep.hter),
                detail::percent2(rep.auc));
  f << "protocol,variant,threshold,apcer,bpcer,acer,hter,auc\n";
  f << rep.protocol_id << "," << rep.variant << "," << line << "\n";
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["protocol"] = rep.protocol_id;
  j["variant"] = rep.variant;
  j["threshold"] = rep.threshold;
  j["percent"] = {{"apcer", detail::percent2(rep.apcer)},
                  {"bpcer", detail::percent2(rep.bpcer)},
                  {"acer", detail::percent2(rep.acer)},
                  {"hter", detail::percent2(rep.hter)},
                  {"auc", detail::percent2(rep.auc)}};
  j["fraction"] = {{"apcer", rep.apcer}, {"bpcer", rep.bpcer}, {"acer", rep.acer},
                   {"hter", rep.hter},   {"auc", rep.auc}};
  return j;
}

inline void write_report_json(const MetricsReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  CQIL_CHECK_MSG(f.good(), "cannot write " << path);
  f << report_to_json(rep).dump(2) << "\n";
}

inline MetricsReport read_report_json(const std::string& path) {
  std::ifstream f(path);
  CQIL_CHECK_MSG(f.good(), "cannot read report " << path);
  nlohmann::json j;
  f >> j;
  MetricsReport rep;
  rep.protocol_id = j.at("protocol").get<std::string>();
  rep.variant = j.value("variant", "");
  rep.threshold = j.at("threshold").get<double>();
  const auto& fr = j.at("fraction");
  rep.apcer = fr.at("apcer").get<double>();
  rep.bpcer = fr.at("bpcer").get<double>();
  rep.acer = fr.at("acer").get<double>();
  rep.hter = fr.at("hter").get<double>();
  rep.auc = fr.at("auc").get<double>();
  return rep;
}

}  // namespace cqil
