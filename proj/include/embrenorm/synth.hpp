#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "embrenorm/dataset.hpp"
#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/eval.hpp"
#include "embrenorm/mean_estimator.hpp"
#include "embrenorm/metrics.hpp"
#include "embrenorm/parallel.hpp"
#include "embrenorm/renorm.hpp"
#include "embrenorm/rng.hpp"

// Synthetic clustered embeddings with a known injected bias:
// clean item s = normalize(center + noise), biased item = normalize(s + b).

namespace embrenorm::synth {

inline constexpr double kMaxCenterCosine = 0.5;
inline constexpr std::size_t kCenterAttempts = 1000;

struct SynthConfig {
  std::size_t dim = 128;
  std::size_t num_clusters = 8;
  std::size_t items_per_cluster = 50;
  double noise_scale = 0.3;  // per-coordinate Gaussian std before renormalization
  double bias_norm = 0.0;
  std::uint64_t seed = 42;
  TaskType task_type = TaskType::Retrieval;

  void validate() const {
    if (dim < 16) fail(ErrorCode::InvalidConfig, "dim must be >= 16");
    if (num_clusters < 2) fail(ErrorCode::InvalidConfig, "need at least 2 clusters");
    if (items_per_cluster < 5) fail(ErrorCode::InvalidConfig, "need at least 5 items per cluster");
    if (!(noise_scale > 0.0)) fail(ErrorCode::InvalidConfig, "noise_scale must be positive");
    if (!(bias_norm >= 0.0 && bias_norm < 1.0)) fail(ErrorCode::InvalidConfig, "bias_norm must lie in [0, 1)");
  }
};

struct SynthBundle {
  TaskDataset clean_dataset;
  TaskDataset biased_dataset;
  std::vector<double> true_bias;
  EmbeddingMatrix clean_signals;
  EmbeddingMatrix biased_signals;
  std::vector<std::string> labels;
  // Paired "translations" of every item; only populated for bitext.
  EmbeddingMatrix clean_translations;
  EmbeddingMatrix biased_translations;
};

// One RNG stream per component. For a fixed seed, centers, items and the
// bias direction are the same at every bias_norm.
enum Stream : std::uint64_t { kCenters = 1, kItems = 2, kBiasDirection = 3, kTranslations = 4 };

inline std::string item_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", i);
  return buf;
}

inline std::string label_id(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%04zu", c);
  return buf;
}

inline std::vector<std::vector<double>> draw_centers(const SynthConfig& cfg) {
  CounterRng rng(cfg.seed, kCenters);
  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < cfg.num_clusters; ++c) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kCenterAttempts && !placed; ++attempt) {
      auto cand = random_unit(rng, cfg.dim);
      bool ok = true;
      for (const auto& other : centers)
        if (dot(std::span<const double>(cand), std::span<const double>(other)) > kMaxCenterCosine) {
          ok = false;
          break;
        }
      if (ok) {
        centers.push_back(std::move(cand));
        placed = true;
      }
    }
    if (!placed)
      fail(ErrorCode::RejectionBudgetExceeded,
           "could not place cluster center " + std::to_string(c) + " within " + std::to_string(kCenterAttempts) +
               " attempts");
  }
  return centers;
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = norm2(std::span<const double>(v));
  for (double& x : v) x /= n;
  return v;
}

/// normalize(row + b) for every row; rows are returned untouched when b = 0.
inline EmbeddingMatrix inject_bias(const EmbeddingMatrix& clean, const std::vector<double>& b, double bias_norm) {
  if (bias_norm == 0.0) return clean;
  std::vector<float> rows;
  rows.reserve(clean.count() * clean.dim());
  std::vector<double> tmp(clean.dim());
  for (std::size_t i = 0; i < clean.count(); ++i) {
    auto r = clean.row(i);
    double n2 = 0.0;
    for (std::size_t t = 0; t < tmp.size(); ++t) {
      tmp[t] = static_cast<double>(r[t]) + b[t];
      n2 += tmp[t] * tmp[t];
    }
    const double n = std::sqrt(n2);
    for (double x : tmp) rows.push_back(static_cast<float>(x / n));
  }
  return EmbeddingMatrix(clean.dim(), std::move(rows), clean.ids(), true);
}

/// Derives a task of the given type from labeled items. Items alternate
/// between the two sides (queries/corpus, train/test) by their position
/// within their own cluster. `clean` supplies STS gold similarities.
inline TaskDataset build_task(TaskType type, std::string task_id, const EmbeddingMatrix& items,
                              const EmbeddingMatrix& clean, const std::vector<std::string>& labels,
                              const EmbeddingMatrix* translations = nullptr) {
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < items.count(); ++i) by_label[labels[i]].push_back(i);
  std::vector<std::size_t> even, odd;
  std::vector<std::size_t> position(items.count());
  for (const auto& [label, idx] : by_label)
    for (std::size_t p = 0; p < idx.size(); ++p) position[idx[p]] = p;
  for (std::size_t i = 0; i < items.count(); ++i) (position[i] % 2 == 0 ? even : odd).push_back(i);

  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
  };

  // Each item paired with the next item of its cluster (positive) and the
  // same-position item of the next cluster (negative).
  auto make_pairs = [&](std::vector<IndexPair>& pairs, std::vector<bool>& same) {
    std::vector<std::string> order;
    for (const auto& [label, idx] : by_label) order.push_back(label);
    for (std::size_t li = 0; li < order.size(); ++li) {
      const auto& mine = by_label[order[li]];
      const auto& next = by_label[order[(li + 1) % order.size()]];
      for (std::size_t p = 0; p < mine.size(); ++p) {
        if (mine.size() > 1) {
          pairs.emplace_back(mine[p], mine[(p + 1) % mine.size()]);
          same.push_back(true);
        }
        if (order.size() > 1 && !next.empty()) {
          pairs.emplace_back(mine[p], next[p % next.size()]);
          same.push_back(false);
        }
      }
    }
  };

  TaskDataset ds;
  ds.task_id = std::move(task_id);
  switch (type) {
    case TaskType::Retrieval: {
      RetrievalPayload p;
      p.queries = items.select(even);
      p.corpus = items.select(odd);
      for (std::size_t qi : even) {
        auto& rel = p.qrels[items.id(qi)];
        for (std::size_t di : odd)
          if (labels[di] == labels[qi]) rel[items.id(di)] = 1.0;
      }
      ds.payload = std::move(p);
      break;
    }
    case TaskType::Classification: {
      ClassificationPayload p;
      p.train = items.select(even);
      p.train_labels = pick(even);
      p.test = items.select(odd);
      p.test_labels = pick(odd);
      ds.payload = std::move(p);
      break;
    }
    case TaskType::Clustering: {
      ClusteringPayload p;
      p.items = items;
      p.labels = labels;
      ds.payload = std::move(p);
      break;
    }
    case TaskType::Sts: {
      StsPayload p;
      p.items = items;
      std::vector<bool> unused;
      make_pairs(p.pairs, unused);
      for (const auto& [a, b] : p.pairs) p.gold.push_back(cosine(clean.row(a), clean.row(b)));
      ds.payload = std::move(p);
      break;
    }
    case TaskType::PairClassification: {
      PairClassificationPayload p;
      p.items = items;
      make_pairs(p.pairs, p.labels);
      ds.payload = std::move(p);
      break;
    }
    case TaskType::Bitext: {
      if (!translations) fail(ErrorCode::InvalidConfig, "bitext needs a translation matrix");
      BitextPayload p;
      p.left = items;
      p.right = *translations;
      for (std::size_t i = 0; i < items.count(); ++i) p.gold.emplace_back(items.id(i), translations->id(i));
      ds.payload = std::move(p);
      break;
    }
  }
  return ds;
}

inline SynthBundle generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto centers = draw_centers(cfg);
  const std::size_t n = cfg.num_clusters * cfg.items_per_cluster;

  CounterRng item_rng(cfg.seed, kItems);
  std::vector<std::vector<double>> clean_rows;
  std::vector<std::string> ids, labels;
  clean_rows.reserve(n);
  for (std::size_t c = 0; c < cfg.num_clusters; ++c) {
    for (std::size_t j = 0; j < cfg.items_per_cluster; ++j) {
      std::vector<double> v(centers[c]);
      for (double& x : v) x += cfg.noise_scale * item_rng.normal();
      clean_rows.push_back(normalized(std::move(v)));
      ids.push_back(item_id(ids.size()));
      labels.push_back(label_id(c));
    }
  }

  CounterRng bias_rng(cfg.seed, kBiasDirection);
  auto b = random_unit(bias_rng, cfg.dim);
  for (double& x : b) x *= cfg.bias_norm;

  SynthBundle out;
  out.clean_signals = EmbeddingMatrix::from_rows(clean_rows, ids, true);
  out.biased_signals = inject_bias(out.clean_signals, b, cfg.bias_norm);
  out.true_bias = b;
  out.labels = labels;

  const EmbeddingMatrix* clean_tr = nullptr;
  const EmbeddingMatrix* biased_tr = nullptr;
  if (cfg.task_type == TaskType::Bitext) {
    CounterRng tr_rng(cfg.seed, kTranslations);
    std::vector<std::vector<double>> rows;
    std::vector<std::string> tr_ids;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v(clean_rows[i]);
      for (double& x : v) x += 0.5 * cfg.noise_scale * tr_rng.normal();
      rows.push_back(normalized(std::move(v)));
      tr_ids.push_back(ids[i] + "-t");
    }
    out.clean_translations = EmbeddingMatrix::from_rows(rows, tr_ids, true);
    out.biased_translations = inject_bias(out.clean_translations, b, cfg.bias_norm);
    clean_tr = &out.clean_translations;
    biased_tr = &out.biased_translations;
  }

  const std::string base = "synth-" + std::string(to_string(cfg.task_type));
  out.clean_dataset = build_task(cfg.task_type, base, out.clean_signals, out.clean_signals, labels, clean_tr);
  out.biased_dataset = build_task(cfg.task_type, base, out.biased_signals, out.clean_signals, labels, biased_tr);
  return out;
}

/// Estimation / evaluation halves of a bundle: alternating rows.
struct Split {
  std::vector<std::size_t> estimation;
  std::vector<std::size_t> evaluation;
};

inline Split split_halves(std::size_t n) {
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? s.estimation : s.evaluation).push_back(i);
  return s;
}

struct SweepRow {
  double bias_norm = 0.0;
  std::uint64_t seed = 0;
  RenormMethod method = RenormMethod::Identity;
  double score = 0.0;
  double delta = 0.0;  // score - IDENTITY score on the same cell
  double sigma = 0.0;  // baseline (IDENTITY) sigma of the cell
  double estimated_mu_norm = 0.0;
};

struct SweepSummary {
  double bias_norm = 0.0;
  RenormMethod method = RenormMethod::Identity;
  double mean_score = 0.0;
  double mean_delta = 0.0;
  double mean_sigma = 0.0;
  double mean_mu_norm = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;
  /// Spearman(bias_norm, mean delta of R2); NaN when undefined.
  double spearman_r2 = std::nan("");
};

inline double mean_delta(const SweepTable& t, double bias_norm, RenormMethod m) {
  for (const auto& s : t.summary)
    if (s.bias_norm == bias_norm && s.method == m) return s.mean_delta;
  fail(ErrorCode::KeyMismatch, "no sweep summary for that cell");
}

/// One (bias_norm, seed) cell: generate, estimate mu on one half, score
/// every method on the other half.
inline std::vector<SweepRow> run_cell(SynthConfig cfg, double bias_norm, std::uint64_t seed,
                                      const std::vector<RenormMethod>& methods, Parallelism par = {}) {
  cfg.bias_norm = bias_norm;
  cfg.seed = seed;
  const auto bundle = generate(cfg);
  const auto halves = split_halves(bundle.biased_signals.count());

  const auto est = bundle.biased_signals.select(halves.estimation);
  const auto bias = estimate_mean(est, "synth", est.fingerprint());

  std::vector<std::string> eval_labels;
  for (std::size_t i : halves.evaluation) eval_labels.push_back(bundle.labels[i]);
  const auto eval_items = bundle.biased_signals.select(halves.evaluation);
  const auto eval_clean = bundle.clean_signals.select(halves.evaluation);
  EmbeddingMatrix eval_tr;
  if (cfg.task_type == TaskType::Bitext) eval_tr = bundle.biased_translations.select(halves.evaluation);
  auto ds = build_task(cfg.task_type, "synth-eval", eval_items, eval_clean, eval_labels,
                       cfg.task_type == TaskType::Bitext ? &eval_tr : nullptr);
  ds.source_fingerprint = eval_items.fingerprint();

  EvalOptions opt;
  opt.seed = seed;
  opt.parallelism = par;
  const auto baseline = run_task(ds, bias, RenormMethod::Identity, opt);

  std::vector<SweepRow> rows;
  for (auto m : methods) {
    const auto rec = m == RenormMethod::Identity ? baseline : run_task(ds, bias, m, opt);
    rows.push_back({bias_norm, seed, m, rec.score.value, rec.score.value - baseline.score.value,
                    baseline.score.sigma, bias.norm});
  }
  return rows;
}

/// Sweeps bias_norm x seeds; cell seeds are derive_seed(cfg.seed, s).
inline SweepTable sweep_bias(const SynthConfig& cfg, const std::vector<double>& bias_norms, std::size_t num_seeds,
                             std::vector<RenormMethod> methods, Parallelism par = {}) {
  if (bias_norms.empty()) fail(ErrorCode::InvalidConfig, "sweep needs at least one bias norm");
  for (double b : bias_norms)
    if (!(b >= 0.0 && b < 1.0)) fail(ErrorCode::InvalidConfig, "bias norms must lie in [0, 1)");
  if (num_seeds < 1) fail(ErrorCode::InvalidConfig, "sweep needs at least one seed");
  std::sort(methods.begin(), methods.end());
  methods.erase(std::unique(methods.begin(), methods.end()), methods.end());

  const std::size_t cells = bias_norms.size() * num_seeds;
  std::vector<std::vector<SweepRow>> results(cells);
  parallel_for(cells, par, [&](std::size_t c) {
    results[c] = run_cell(cfg, bias_norms[c / num_seeds], derive_seed(cfg.seed, c % num_seeds), methods);
  });

  SweepTable table;
  for (auto& r : results) table.rows.insert(table.rows.end(), r.begin(), r.end());

  std::vector<double> r2_deltas;
  for (double b : bias_norms) {
    for (auto m : methods) {
      SweepSummary s{b, m, 0.0, 0.0, 0.0, 0.0};
      std::size_t n = 0;
      for (const auto& r : table.rows)
        if (r.bias_norm == b && r.method == m) {
          s.mean_score += r.score;
          s.mean_delta += r.delta;
          s.mean_sigma += r.sigma;
          s.mean_mu_norm += r.estimated_mu_norm;
          ++n;
        }
      s.mean_score /= n;
      s.mean_delta /= n;
      s.mean_sigma /= n;
      s.mean_mu_norm /= n;
      table.summary.push_back(s);
      if (m == RenormMethod::R2) r2_deltas.push_back(s.mean_delta);
    }
  }
  if (r2_deltas.size() == bias_norms.size() && bias_norms.size() >= 2) {
    try {
      table.spearman_r2 = spearman(bias_norms, r2_deltas);
    } catch (const Error&) {
      // constant deltas: correlation undefined
    }
  }
  return table;
}

}  // namespace embrenorm::synth
