#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/parallel.hpp"
#include "embrenorm/rng.hpp"

namespace embrenorm {

/// Metric value with the sample size and standard error behind it.
struct TaskScore {
  std::string metric_name;
  double value = 0.0;
  std::uint64_t sample_size = 0;
  double sigma = 0.0;
};

/// Documents ordered by descending score; equal scores by ascending doc id.
struct RankedList {
  std::string query_id;
  std::vector<std::string> doc_ids;
  std::vector<double> scores;
};

inline double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Indices of `scores` sorted descending, ties by ascending key.
template <typename Key>
std::vector<std::size_t> order_desc(std::span<const double> scores, const Key& key) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return key(a) < key(b);
  });
  return idx;
}

inline RankedList rank_by_cosine(std::string query_id, std::span<const float> query, const EmbeddingMatrix& corpus) {
  if (query.size() != corpus.dim()) fail(ErrorCode::DimensionMismatch, "query/corpus dims differ");
  std::vector<double> sims(corpus.count());
  for (std::size_t j = 0; j < corpus.count(); ++j) sims[j] = cosine(query, corpus.row(j));
  const auto order = order_desc(std::span<const double>(sims), [&](std::size_t j) -> const std::string& {
    return corpus.id(j);
  });
  RankedList out;
  out.query_id = std::move(query_id);
  out.doc_ids.reserve(order.size());
  out.scores.reserve(order.size());
  for (std::size_t j : order) {
    out.doc_ids.push_back(corpus.id(j));
    out.scores.push_back(sims[j]);
  }
  return out;
}

/// nDCG@k with linear gain and 1/log2(rank+1) discount. The ideal ranking
/// is built from every graded document, not just the retrieved ones.
inline double ndcg_at_k(const RankedList& ranked, const std::map<std::string, double>& relevance, std::size_t k) {
  if (k < 1) fail(ErrorCode::InvalidConfig, "k must be >= 1");
  std::vector<double> grades;
  for (const auto& [doc, g] : relevance) {
    if (g < 0.0) fail(ErrorCode::InvalidConfig, "relevance grades must be >= 0");
    if (g > 0.0) grades.push_back(g);
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<>());

  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranked.doc_ids.size());
  for (std::size_t r = 0; r < depth; ++r) {
    auto it = relevance.find(ranked.doc_ids[r]);
    if (it != relevance.end() && it->second > 0.0) dcg += it->second / std::log2(static_cast<double>(r) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, grades.size()); ++r)
    ideal += grades[r] / std::log2(static_cast<double>(r) + 2.0);
  return dcg / ideal;
}

struct KnnResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<bool> per_item_correct;
  std::vector<std::string> predictions;
};

/// Macro-averaged F1 over every label seen in gold or predictions.
inline double macro_f1(std::span<const std::string> gold, std::span<const std::string> predicted) {
  std::map<std::string, std::array<std::size_t, 3>> counts;  // tp, fp, fn
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == predicted[i]) {
      ++counts[gold[i]][0];
    } else {
      ++counts[predicted[i]][1];
      ++counts[gold[i]][2];
    }
  }
  if (counts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [label, c] : counts) {
    const double denom = 2.0 * c[0] + c[1] + c[2];
    total += denom > 0.0 ? 2.0 * c[0] / denom : 0.0;
  }
  return total / static_cast<double>(counts.size());
}

/// Cosine kNN with majority vote; vote ties go to the larger summed
/// similarity, then to the lexicographically smallest label.
inline KnnResult knn_classify(const EmbeddingMatrix& train, std::span<const std::string> train_labels,
                              const EmbeddingMatrix& test, std::span<const std::string> test_labels, std::size_t k,
                              Parallelism par = {}) {
  if (train.count() == 0) fail(ErrorCode::EmptyTrainSet, "kNN needs training items");
  if (k < 1 || k > train.count()) fail(ErrorCode::InvalidConfig, "kNN needs 1 <= k <= train size");
  if (train.dim() != test.dim()) fail(ErrorCode::DimensionMismatch, "train/test dims differ");
  if (train_labels.size() != train.count() || test_labels.size() != test.count())
    fail(ErrorCode::IdRowMismatch, "label count does not match item count");

  KnnResult out;
  out.predictions.resize(test.count());
  parallel_for(test.count(), par, [&](std::size_t t) {
    std::vector<double> sims(train.count());
    for (std::size_t j = 0; j < train.count(); ++j) sims[j] = cosine(test.row(t), train.row(j));
    auto order = order_desc(std::span<const double>(sims), [&](std::size_t j) -> const std::string& {
      return train.id(j);
    });
    std::map<std::string, std::pair<std::size_t, double>> votes;
    for (std::size_t r = 0; r < k; ++r) {
      auto& v = votes[train_labels[order[r]]];
      ++v.first;
      v.second += sims[order[r]];
    }
    const std::string* best = nullptr;
    std::pair<std::size_t, double> best_vote{0, 0.0};
    for (const auto& [label, v] : votes) {  // map order: smallest label wins remaining ties
      if (!best || v.first > best_vote.first || (v.first == best_vote.first && v.second > best_vote.second)) {
        best = &label;
        best_vote = v;
      }
    }
    out.predictions[t] = *best;
  });

  std::size_t correct = 0;
  out.per_item_correct.resize(test.count());
  for (std::size_t t = 0; t < test.count(); ++t) {
    out.per_item_correct[t] = out.predictions[t] == test_labels[t];
    correct += out.per_item_correct[t];
  }
  out.accuracy = test.count() ? static_cast<double>(correct) / test.count() : 0.0;
  out.macro_f1 = macro_f1(test_labels, out.predictions);
  return out;
}

/// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::DegenerateInput, "correlation of a constant list");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation with average-rank ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::DegenerateInput, "spearman: lengths differ");
  if (x.size() < 2) fail(ErrorCode::DegenerateInput, "spearman needs at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// V-measure (beta = 1, natural-log entropies). A partition with zero
/// entropy counts as perfectly homogeneous / complete.
inline double v_measure(std::span<const std::string> gold, std::span<const std::size_t> clusters) {
  if (gold.size() != clusters.size()) fail(ErrorCode::DegenerateInput, "v_measure: lengths differ");
  const double n = static_cast<double>(gold.size());
  if (gold.empty()) return 0.0;
  std::map<std::string, std::size_t> class_count;
  std::map<std::size_t, std::size_t> cluster_count;
  std::map<std::pair<std::string, std::size_t>, std::size_t> joint;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++class_count[gold[i]];
    ++cluster_count[clusters[i]];
    ++joint[{gold[i], clusters[i]}];
  }
  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (const auto& [key, c] : counts) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
    return h;
  };
  const double h_class = entropy(class_count);
  const double h_cluster = entropy(cluster_count);
  double h_class_given_cluster = 0.0, h_cluster_given_class = 0.0;
  for (const auto& [key, c] : joint) {
    const double nc = static_cast<double>(c);
    h_class_given_cluster -= nc / n * std::log(nc / static_cast<double>(cluster_count[key.second]));
    h_cluster_given_class -= nc / n * std::log(nc / static_cast<double>(class_count[key.first]));
  }
  const double homogeneity = h_class == 0.0 ? 1.0 : 1.0 - h_class_given_cluster / h_class;
  const double completeness = h_cluster == 0.0 ? 1.0 : 1.0 - h_cluster_given_class / h_cluster;
  if (homogeneity + completeness == 0.0) return 0.0;
  return std::clamp(2.0 * homogeneity * completeness / (homogeneity + completeness), 0.0, 1.0);
}

struct KMeansResult {
  std::vector<std::size_t> assignment;
  double objective = 0.0;  // summed cosine of items to their centroid
  std::size_t iterations = 0;
};

inline constexpr std::size_t kKMeansMaxIterations = 100;

/// One spherical k-means run from k distinct seeded items.
inline KMeansResult spherical_kmeans(const EmbeddingMatrix& items, std::size_t k, std::uint64_t seed) {
  const std::size_t n = items.count(), d = items.dim();
  if (k < 1) fail(ErrorCode::InvalidConfig, "k must be >= 1");
  if (k > n) fail(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds item count " + std::to_string(n));

  CounterRng rng(seed);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);

  std::vector<std::vector<double>> centroids(k, std::vector<double>(d));
  for (std::size_t c = 0; c < k; ++c) {
    auto r = items.row(pool[c]);
    const double nr = norm2(r);
    for (std::size_t t = 0; t < d; ++t) centroids[c][t] = r[t] / nr;
  }

  KMeansResult res;
  res.assignment.assign(n, 0);
  std::vector<double> best_sim(n, 0.0);
  for (std::size_t iter = 0; iter < kKMeansMaxIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = items.row(i);
      const double nr = norm2(r);
      std::size_t best = 0;
      double best_v = -2.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double s = nr > 0.0 ? dot(r, std::span<const double>(centroids[c])) / nr : 0.0;
        if (s > best_v) {
          best_v = s;
          best = c;
        }
      }
      if (iter == 0 || best != res.assignment[i]) changed = true;
      res.assignment[i] = best;
      best_sim[i] = best_v;
    }
    res.iterations = iter + 1;
    if (!changed) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = items.row(i);
      auto& s = sums[res.assignment[i]];
      for (std::size_t t = 0; t < d; ++t) s[t] += r[t];
      ++sizes[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double ns = norm2(std::span<const double>(sums[c]));
      if (sizes[c] == 0 || ns == 0.0) continue;  // empty cluster keeps its centroid
      for (std::size_t t = 0; t < d; ++t) centroids[c][t] = sums[c][t] / ns;
    }
  }
  res.objective = std::accumulate(best_sim.begin(), best_sim.end(), 0.0);
  return res;
}

/// Best-of-`restarts` spherical k-means, scored by V-measure against gold.
inline double spherical_kmeans_v_measure(const EmbeddingMatrix& items, std::span<const std::string> gold,
                                         std::size_t k, std::size_t restarts, std::uint64_t seed,
                                         Parallelism par = {}) {
  if (gold.size() != items.count()) fail(ErrorCode::IdRowMismatch, "gold label count != item count");
  if (k > items.count())
    fail(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds item count " + std::to_string(items.count()));
  restarts = std::max<std::size_t>(1, restarts);
  std::vector<KMeansResult> runs(restarts);
  parallel_for(restarts, par, [&](std::size_t r) { runs[r] = spherical_kmeans(items, k, derive_seed(seed, r)); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r)
    if (runs[r].objective > runs[best].objective) best = r;
  return v_measure(gold, runs[best].assignment);
}

/// Average precision of pairs ranked by descending score, ties by index.
inline double pair_average_precision(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::DegenerateInput, "scores/labels lengths differ");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  if (positives == 0) fail(ErrorCode::NoPositives, "average precision needs a positive pair");
  const auto order = order_desc(scores, [](std::size_t i) { return i; });
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]]) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return total / static_cast<double>(positives);
}

namespace detail {

/// For each row of `from`, the index of its cosine nearest neighbour in `to`.
inline std::vector<std::size_t> nearest(const EmbeddingMatrix& from, const EmbeddingMatrix& to) {
  std::vector<std::size_t> nn(from.count(), 0);
  for (std::size_t i = 0; i < from.count(); ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < to.count(); ++j) {
      const double s = cosine(from.row(i), to.row(j));
      if (s > best || (s == best && to.id(j) < to.id(nn[i]))) {
        best = s;
        nn[i] = j;
      }
    }
  }
  return nn;
}

}  // namespace detail

/// F1 of mutual-nearest-neighbour pairs against gold (left id, right id) pairs.
inline double bitext_f1(const EmbeddingMatrix& left, const EmbeddingMatrix& right,
                        const std::vector<std::pair<std::string, std::string>>& gold_pairs) {
  if (left.dim() != right.dim()) fail(ErrorCode::DimensionMismatch, "left/right dims differ");
  if (left.count() == 0 || right.count() == 0 || gold_pairs.empty()) return 0.0;
  const auto l2r = detail::nearest(left, right);
  const auto r2l = detail::nearest(right, left);
  std::set<std::pair<std::string, std::string>> predicted;
  for (std::size_t i = 0; i < left.count(); ++i)
    if (r2l[l2r[i]] == i) predicted.emplace(left.id(i), right.id(l2r[i]));
  const std::set<std::pair<std::string, std::string>> gold(gold_pairs.begin(), gold_pairs.end());
  std::size_t tp = 0;
  for (const auto& p : predicted) tp += gold.count(p);
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / predicted.size();
  const double recall = static_cast<double>(tp) / gold.size();
  return 2.0 * precision * recall / (precision + recall);
}

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr std::size_t kBootstrapResamples = 200;

inline bool is_proportion_metric(std::string_view name) {
  return name.starts_with("ndcg") || name == "accuracy" || name == "f1" || name == "macro_f1" || name == "ap" ||
         name == "v_measure" || name == "bitext_f1";
}

inline bool is_correlation_metric(std::string_view name) { return name == "spearman"; }

/// Seeded bootstrap standard error of Spearman over paired items.
inline double bootstrap_spearman_sigma(std::span<const double> x, std::span<const double> y, std::uint64_t seed,
                                       std::size_t resamples = kBootstrapResamples) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::DegenerateInput, "bootstrap needs >= 2 paired items");
  const std::size_t n = x.size();
  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<double> bx(n), by(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    CounterRng rng(derive_seed(seed, b));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.below(n);
      bx[i] = x[j];
      by[i] = y[j];
    }
    try {
      stats.push_back(spearman(bx, by));
    } catch (const Error&) {
      // constant resample; skip
    }
  }
  if (stats.size() < 2) return kSigmaFloor;
  const double mean = std::accumulate(stats.begin(), stats.end(), 0.0) / stats.size();
  double ss = 0.0;
  for (double s : stats) ss += (s - mean) * (s - mean);
  return std::max(kSigmaFloor, std::sqrt(ss / (stats.size() - 1.0)));
}

/// Standard error of a task score. Proportion-like metrics use the binomial
/// form sqrt(v(1-v)/n); correlations need the per-item pairs for a bootstrap.
inline double sigma_for(std::string_view metric, double value, std::uint64_t n,
                        std::optional<std::pair<std::span<const double>, std::span<const double>>> items = {},
                        std::uint64_t seed = 0) {
  if (n < 1) fail(ErrorCode::InvalidConfig, "sample size must be >= 1");
  if (is_proportion_metric(metric)) {
    if (!(value >= 0.0 && value <= 1.0)) fail(ErrorCode::DegenerateInput, "proportion metric outside [0, 1]");
    return std::max(kSigmaFloor, std::sqrt(value * (1.0 - value) / static_cast<double>(n)));
  }
  if (is_correlation_metric(metric)) {
    if (!items) fail(ErrorCode::UnsupportedMetric, "correlation sigma needs the per-item values");
    return bootstrap_spearman_sigma(items->first, items->second, seed);
  }
  fail(ErrorCode::UnsupportedMetric, "no sigma rule for metric '" + std::string(metric) + "'");
}

}  // namespace embrenorm
