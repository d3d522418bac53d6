#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "embrenorm/dataset.hpp"
#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/metrics.hpp"
#include "embrenorm/parallel.hpp"
#include "embrenorm/renorm.hpp"

namespace embrenorm {

/// Content hash of a bias estimate; ties every RunRecord to the mu it used.
inline Fingerprint fingerprint_of(const BiasEstimate& b) {
  Sha256 h;
  h.update_field("embrenorm/bias/v1");
  h.update_field(b.model_id);
  h.update_field(b.corpus_fingerprint.hex());
  h.update_u64(b.sample_count);
  h.update_u64(b.mu.size());
  h.update(std::span(reinterpret_cast<const std::uint8_t*>(b.mu.data()), b.mu.size() * sizeof(double)));
  return h.finish();
}

struct EvalOptions {
  DegeneratePolicy policy = DegeneratePolicy::Drop;
  std::uint64_t seed = 42;  // k-means restarts and bootstrap resamples
  Parallelism parallelism{};
  /// Per-task wall-clock budget; a task that overruns is recorded as failed.
  std::optional<std::int64_t> budget_ms;
};

enum class RunStatus { Ok, Failed };

struct RunRecord {
  std::string task_id;
  TaskType task_type = TaskType::Retrieval;
  std::string model_id;
  RenormMethod method = RenormMethod::Identity;
  RunStatus status = RunStatus::Ok;
  std::string error;
  TaskScore score;
  std::uint64_t dropped_rows = 0;
  std::int64_t wall_clock_ms = 0;
  Fingerprint bias_fingerprint;

  bool ok() const noexcept { return status == RunStatus::Ok; }
};

namespace detail {

/// Renormalized copy of a matrix plus the original-row -> new-row map.
struct Applied {
  EmbeddingMatrix matrix;
  std::vector<std::optional<std::size_t>> remap;
  std::size_t dropped = 0;
};

inline Applied apply_tracked(const EmbeddingMatrix& m, const BiasEstimate& bias, RenormMethod method,
                             const EvalOptions& opt) {
  auto res = apply_matrix(m, bias, method, opt.policy, opt.parallelism);
  Applied a;
  a.dropped = res.dropped_ids.size();
  a.remap.resize(m.count());
  std::unordered_map<std::string_view, std::size_t> pos;
  for (std::size_t i = 0; i < res.matrix.count(); ++i) pos.emplace(res.matrix.id(i), i);
  for (std::size_t i = 0; i < m.count(); ++i) {
    if (auto it = pos.find(m.id(i)); it != pos.end()) a.remap[i] = it->second;
  }
  a.matrix = std::move(res.matrix);
  return a;
}

inline std::vector<std::string> kept_labels(const std::vector<std::string>& labels, const Applied& a) {
  std::vector<std::string> out(a.matrix.count());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (a.remap[i]) out[*a.remap[i]] = labels[i];
  return out;
}

inline TaskScore proportion_score(std::string metric, double value, std::uint64_t n) {
  if (n == 0) fail(ErrorCode::DegenerateInput, "no items left to score");
  return {metric, value, n, sigma_for(metric, value, n)};
}

inline TaskScore score_payload(const RetrievalPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto q = apply_tracked(p.queries, bias, method, opt);
  auto c = apply_tracked(p.corpus, bias, method, opt);
  dropped = q.dropped + c.dropped;
  std::vector<double> per_query(q.matrix.count(), -1.0);
  parallel_for(q.matrix.count(), opt.parallelism, [&](std::size_t i) {
    auto it = p.qrels.find(q.matrix.id(i));
    if (it == p.qrels.end()) return;
    const auto ranked = rank_by_cosine(q.matrix.id(i), q.matrix.row(i), c.matrix);
    per_query[i] = ndcg_at_k(ranked, it->second, p.k);
  });
  double sum = 0.0;
  std::uint64_t n = 0;
  for (double v : per_query)
    if (v >= 0.0) {
      sum += v;
      ++n;
    }
  if (n == 0) fail(ErrorCode::DegenerateInput, "no query with qrels survived");
  return proportion_score("ndcg@" + std::to_string(p.k), sum / static_cast<double>(n), n);
}

inline TaskScore score_payload(const ClassificationPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto tr = apply_tracked(p.train, bias, method, opt);
  auto te = apply_tracked(p.test, bias, method, opt);
  dropped = tr.dropped + te.dropped;
  const auto train_labels = kept_labels(p.train_labels, tr);
  const auto test_labels = kept_labels(p.test_labels, te);
  const std::size_t k = std::min(p.k, tr.matrix.count());
  const auto res = knn_classify(tr.matrix, train_labels, te.matrix, test_labels, k, opt.parallelism);
  return proportion_score("accuracy", res.accuracy, te.matrix.count());
}

inline std::vector<std::pair<std::size_t, std::size_t>> surviving_pairs(const std::vector<IndexPair>& pairs,
                                                                        const Applied& a,
                                                                        std::vector<std::size_t>& kept_index) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    const auto& [x, y] = pairs[t];
    if (a.remap[x] && a.remap[y]) {
      out.emplace_back(*a.remap[x], *a.remap[y]);
      kept_index.push_back(t);
    }
  }
  return out;
}

inline TaskScore score_payload(const StsPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto a = apply_tracked(p.items, bias, method, opt);
  dropped = a.dropped;
  std::vector<std::size_t> kept;
  const auto pairs = surviving_pairs(p.pairs, a, kept);
  std::vector<double> predicted, gold;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    predicted.push_back(cosine(a.matrix.row(pairs[t].first), a.matrix.row(pairs[t].second)));
    gold.push_back(p.gold[kept[t]]);
  }
  const double rho = spearman(predicted, gold);
  const double sigma = sigma_for("spearman", rho, predicted.size(),
                                 std::pair{std::span<const double>(predicted), std::span<const double>(gold)},
                                 opt.seed);
  return {"spearman", rho, predicted.size(), sigma};
}

inline TaskScore score_payload(const ClusteringPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto a = apply_tracked(p.items, bias, method, opt);
  dropped = a.dropped;
  const auto labels = kept_labels(p.labels, a);
  const std::size_t k = p.k.value_or(std::set<std::string>(labels.begin(), labels.end()).size());
  const double v = spherical_kmeans_v_measure(a.matrix, labels, k, p.restarts, opt.seed, opt.parallelism);
  return proportion_score("v_measure", v, a.matrix.count());
}

inline TaskScore score_payload(const PairClassificationPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto a = apply_tracked(p.items, bias, method, opt);
  dropped = a.dropped;
  std::vector<std::size_t> kept;
  const auto pairs = surviving_pairs(p.pairs, a, kept);
  std::vector<double> scores;
  std::vector<bool> labels;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    scores.push_back(cosine(a.matrix.row(pairs[t].first), a.matrix.row(pairs[t].second)));
    labels.push_back(p.labels[kept[t]]);
  }
  return proportion_score("ap", pair_average_precision(scores, labels), scores.size());
}

inline TaskScore score_payload(const BitextPayload& p, const BiasEstimate& bias, RenormMethod method,
                               const EvalOptions& opt, std::size_t& dropped) {
  auto l = apply_tracked(p.left, bias, method, opt);
  auto r = apply_tracked(p.right, bias, method, opt);
  dropped = l.dropped + r.dropped;
  return proportion_score("bitext_f1", bitext_f1(l.matrix, r.matrix, p.gold), p.gold.size());
}

}  // namespace detail

/// Refuses a bias whose corpus fingerprint matches the dataset's own
/// source or any of its matrices.
inline void check_leakage(const TaskDataset& ds, const BiasEstimate& bias) {
  const auto& fp = bias.corpus_fingerprint;
  bool leak = fp == ds.fingerprint();
  for (const auto* m : ds.matrices()) leak = leak || fp == m->fingerprint();
  if (leak)
    fail(ErrorCode::LeakageDetected,
         "task '" + ds.task_id + "': bias was estimated on the evaluation data (" + fp.hex() + ")");
}

/// Renormalizes every matrix of the task (copy-on-read) and scores it.
inline RunRecord run_task(const TaskDataset& ds, const BiasEstimate& bias, RenormMethod method,
                          const EvalOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  ds.validate();
  for (const auto* m : ds.matrices())
    if (m->dim() != bias.dim())
      fail(ErrorCode::DimensionMismatch, "task '" + ds.task_id + "': embedding dim " + std::to_string(m->dim()) +
                                             " != bias dim " + std::to_string(bias.dim()));
  check_leakage(ds, bias);

  RunRecord rec;
  rec.task_id = ds.task_id;
  rec.task_type = ds.type();
  rec.model_id = bias.model_id;
  rec.method = method;
  rec.bias_fingerprint = fingerprint_of(bias);
  std::size_t dropped = 0;
  try {
    rec.score = std::visit([&](const auto& p) { return detail::score_payload(p, bias, method, opt, dropped); },
                           ds.payload);
  } catch (const Error& e) {
    throw Error(e.code(), "task '" + ds.task_id + "' (" + std::string(to_string(method)) + "): " + e.message());
  }
  rec.dropped_rows = dropped;
  rec.wall_clock_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  if (opt.budget_ms && rec.wall_clock_ms > *opt.budget_ms) {
    rec.status = RunStatus::Failed;
    rec.error = "wall-clock budget of " + std::to_string(*opt.budget_ms) + " ms exceeded";
  }
  return rec;
}

/// Every (task, method) combination, ordered by task id then method. A
/// failing combination yields a Failed record instead of aborting the suite.
inline std::vector<RunRecord> run_suite(const std::vector<TaskDataset>& tasks, const BiasEstimate& bias,
                                        std::vector<RenormMethod> methods, const EvalOptions& opt = {}) {
  if (tasks.empty() || methods.empty()) fail(ErrorCode::InvalidConfig, "run_suite needs tasks and methods");
  std::sort(methods.begin(), methods.end());
  methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return tasks[a].task_id < tasks[b].task_id; });

  std::vector<RunRecord> records(tasks.size() * methods.size());
  // Tasks run in parallel; each task's metric code stays single-threaded.
  EvalOptions inner = opt;
  inner.parallelism = {1};
  parallel_for(records.size(), opt.parallelism, [&](std::size_t slot) {
    const auto& ds = tasks[order[slot / methods.size()]];
    const auto method = methods[slot % methods.size()];
    try {
      records[slot] = run_task(ds, bias, method, inner);
    } catch (const std::exception& e) {
      RunRecord& r = records[slot];
      r.task_id = ds.task_id;
      r.task_type = ds.type();
      r.model_id = bias.model_id;
      r.method = method;
      r.status = RunStatus::Failed;
      r.error = e.what();
      r.bias_fingerprint = fingerprint_of(bias);
    }
  });
  return records;
}

}  // namespace embrenorm
