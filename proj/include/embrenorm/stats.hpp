#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "embrenorm/csv.hpp"
#include "embrenorm/dataset.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/eval.hpp"
#include "embrenorm/metrics.hpp"

namespace embrenorm::stats {

struct ComparisonRow {
  std::string task_id;
  TaskType task_type = TaskType::Retrieval;
  std::string model_id;
  TaskScore baseline;
  TaskScore treated;
  double delta = 0.0;
  std::optional<double> rel_delta;  // delta / baseline value; empty when the baseline is 0
  double z = 0.0;
  double sigma = 0.0;  // the sigma z was divided by (after clipping)
};

struct CompareResult {
  std::vector<ComparisonRow> rows;
  /// Tasks present in both arms but failed in at least one.
  std::vector<std::string> skipped;
};

enum class SigmaMode {
  Baseline,  // z = delta / sigma_baseline
  Combined,  // z = delta / sqrt(sigma_baseline^2 + sigma_treated^2)
};

inline ComparisonRow make_row(std::string task_id, TaskType type, std::string model, const TaskScore& base,
                              const TaskScore& treated, SigmaMode mode = SigmaMode::Baseline) {
  ComparisonRow r;
  r.task_id = std::move(task_id);
  r.task_type = type;
  r.model_id = std::move(model);
  r.baseline = base;
  r.treated = treated;
  r.delta = treated.value - base.value;
  if (base.value != 0.0) r.rel_delta = r.delta / base.value;
  const double raw = mode == SigmaMode::Baseline ? base.sigma : std::hypot(base.sigma, treated.sigma);
  r.sigma = std::max(kSigmaFloor, raw);
  r.z = r.delta / r.sigma;
  return r;
}

/// Pairs baseline and treated records by (model, task). Both arms must cover
/// the same keys; tasks that failed in either arm are listed in `skipped`.
inline CompareResult compare(const std::vector<RunRecord>& baseline, const std::vector<RunRecord>& treated,
                             SigmaMode mode = SigmaMode::Baseline) {
  using Key = std::pair<std::string, std::string>;
  auto index = [](const std::vector<RunRecord>& recs) {
    std::map<Key, const RunRecord*> m;
    for (const auto& r : recs)
      if (!m.emplace(Key{r.model_id, r.task_id}, &r).second)
        fail(ErrorCode::KeyMismatch, "duplicate record for task '" + r.task_id + "'");
    return m;
  };
  const auto b = index(baseline), t = index(treated);
  if (b.size() != t.size() || !std::equal(b.begin(), b.end(), t.begin(),
                                          [](const auto& x, const auto& y) { return x.first == y.first; }))
    fail(ErrorCode::KeyMismatch, "baseline and treated records cover different tasks");

  CompareResult out;
  for (const auto& [key, br] : b) {
    const RunRecord* tr = t.at(key);
    if (!br->ok() || !tr->ok()) {
      out.skipped.push_back(key.second);
      continue;
    }
    out.rows.push_back(make_row(key.second, br->task_type, key.first, br->score, tr->score, mode));
  }
  return out;
}

enum class GroupBy { TaskType, Model };

struct AggregateRow {
  std::string group_key;
  std::size_t count = 0;
  double mean_delta = 0.0;
  double mean_rel_delta = 0.0;  // over rows with a defined relative delta
  double aggregate_z = 0.0;     // sum(delta) / sqrt(sum(sigma^2))
  double frac_above_2sigma = 0.0;
  double frac_below_minus_2sigma = 0.0;
};

inline std::string group_key(const ComparisonRow& r, GroupBy by) {
  return by == GroupBy::TaskType ? std::string(to_string(r.task_type)) : r.model_id;
}

/// Per-group aggregates, treating tasks as independent. Groups come out
/// sorted by key.
inline std::vector<AggregateRow> aggregate(const std::vector<ComparisonRow>& rows, GroupBy by) {
  if (rows.empty()) fail(ErrorCode::DegenerateInput, "aggregate needs at least one row");
  std::map<std::string, std::vector<const ComparisonRow*>> groups;
  for (const auto& r : rows) groups[group_key(r, by)].push_back(&r);

  std::vector<AggregateRow> out;
  for (const auto& [key, members] : groups) {
    AggregateRow a;
    a.group_key = key;
    a.count = members.size();
    double sum_delta = 0.0, sum_var = 0.0, sum_rel = 0.0;
    std::size_t rel_n = 0, up = 0, down = 0;
    for (const auto* r : members) {
      sum_delta += r->delta;
      sum_var += r->sigma * r->sigma;
      if (r->rel_delta) {
        sum_rel += *r->rel_delta;
        ++rel_n;
      }
      up += r->z > 2.0;
      down += r->z < -2.0;
    }
    const double n = static_cast<double>(a.count);
    a.mean_delta = sum_delta / n;
    a.mean_rel_delta = rel_n ? sum_rel / static_cast<double>(rel_n) : 0.0;
    a.aggregate_z = sum_delta / std::sqrt(sum_var);
    a.frac_above_2sigma = static_cast<double>(up) / n;
    a.frac_below_minus_2sigma = static_cast<double>(down) / n;
    out.push_back(a);
  }
  return out;
}

/// "+8.68% 89.4σ ↑": signed relative change, |z|, and the direction of z.
inline std::string render_significance(double rel_delta, double z) {
  char buf[96];
  const char* arrow = z > 0.0 ? "↑" : (z < 0.0 ? "↓" : "→");
  std::snprintf(buf, sizeof buf, "%+.2f%% %.1fσ %s", 100.0 * rel_delta, std::abs(z), arrow);
  return buf;
}

inline std::string render(const ComparisonRow& r) { return render_significance(r.rel_delta.value_or(0.0), r.z); }
inline std::string render(const AggregateRow& a) { return render_significance(a.mean_rel_delta, a.aggregate_z); }

struct DirectionStats {
  std::size_t count = 0;
  std::optional<double> mean;
  std::optional<double> max;
  std::optional<double> min;
};

struct ExtremesSummary {
  std::string group_key;
  std::size_t total = 0;
  std::size_t filtered_out = 0;
  DirectionStats up;
  DirectionStats down;
};

/// Rows with |delta| > delta_threshold and |relative delta| > rel_threshold,
/// split into gains and losses.
inline ExtremesSummary significant_extremes(const std::vector<ComparisonRow>& rows, double delta_threshold = 0.1,
                                            double rel_threshold = 0.02) {
  if (!(delta_threshold > 0.0 && rel_threshold > 0.0)) fail(ErrorCode::InvalidConfig, "thresholds must be > 0");
  ExtremesSummary s;
  s.total = rows.size();
  auto add = [](DirectionStats& d, double v) {
    ++d.count;
    d.mean = d.mean.value_or(0.0) + v;
    d.max = d.max ? std::max(*d.max, v) : v;
    d.min = d.min ? std::min(*d.min, v) : v;
  };
  for (const auto& r : rows) {
    const bool pass =
        std::abs(r.delta) > delta_threshold && r.rel_delta.has_value() && std::abs(*r.rel_delta) > rel_threshold;
    if (!pass) {
      ++s.filtered_out;
      continue;
    }
    add(r.delta > 0.0 ? s.up : s.down, r.delta);
  }
  for (DirectionStats* d : {&s.up, &s.down})
    if (d->count) *d->mean /= static_cast<double>(d->count);
  return s;
}

inline std::vector<ExtremesSummary> significant_extremes_by(const std::vector<ComparisonRow>& rows, GroupBy by,
                                                            double delta_threshold = 0.1,
                                                            double rel_threshold = 0.02) {
  std::map<std::string, std::vector<ComparisonRow>> groups;
  for (const auto& r : rows) groups[by == GroupBy::TaskType ? r.task_id : r.model_id].push_back(r);
  std::vector<ExtremesSummary> out;
  for (const auto& [key, members] : groups) {
    auto s = significant_extremes(members, delta_threshold, rel_threshold);
    s.group_key = key;
    out.push_back(std::move(s));
  }
  return out;
}

struct CorrelationReport {
  double spearman = 0.0;
  std::string csv;
};

/// Spearman over (mu norm, effectiveness) pairs plus plot-ready CSV.
inline CorrelationReport correlation_report(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) fail(ErrorCode::DegenerateInput, "correlation report needs >= 3 pairs");
  std::vector<double> x, y;
  std::vector<csv::Row> rows;
  for (const auto& [m, e] : pairs) {
    x.push_back(m);
    y.push_back(e);
    rows.push_back({csv::format_number(m), csv::format_number(e)});
  }
  return {spearman(x, y), csv::write({"muNorm", "effectiveness"}, rows)};
}

inline const csv::Row& comparison_header() {
  static const csv::Row header{"taskId",        "taskType",      "modelId", "method",
                               "baselineValue", "baselineN",     "baselineSigma",
                               "treatedValue",  "treatedN",      "treatedSigma",
                               "delta",         "relDelta",      "z",       "rendered"};
  return header;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows, std::string_view method) {
  std::vector<csv::Row> out;
  for (const auto& r : rows) {
    out.push_back({r.task_id, std::string(to_string(r.task_type)), r.model_id, std::string(method),
                   csv::format_number(r.baseline.value), std::to_string(r.baseline.sample_size),
                   csv::format_number(r.baseline.sigma), csv::format_number(r.treated.value),
                   std::to_string(r.treated.sample_size), csv::format_number(r.treated.sigma),
                   csv::format_number(r.delta), r.rel_delta ? csv::format_number(*r.rel_delta) : "",
                   csv::format_number(r.z), render(r)});
  }
  return csv::write(comparison_header(), out);
}

/// Inverse of comparison_csv. Metric names are not stored and come back empty.
inline std::vector<ComparisonRow> parse_comparison_csv(std::string_view text) {
  const auto table = csv::parse(text);
  if (table.empty() || table.front() != comparison_header())
    fail(ErrorCode::SchemaError, "not a comparison CSV (header mismatch)");
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& f = table[i];
    if (f.size() != comparison_header().size()) fail(ErrorCode::SchemaError, "comparison CSV row has wrong width");
    ComparisonRow r;
    r.task_id = f[0];
    r.task_type = parse_task_type(f[1]);
    r.model_id = f[2];
    r.baseline = {"", std::stod(f[4]), std::stoull(f[5]), std::stod(f[6])};
    r.treated = {"", std::stod(f[7]), std::stoull(f[8]), std::stod(f[9])};
    r.delta = std::stod(f[10]);
    if (!f[11].empty()) r.rel_delta = std::stod(f[11]);
    r.z = std::stod(f[12]);
    r.sigma = std::max(kSigmaFloor, r.baseline.sigma);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace embrenorm::stats
