#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/hash.hpp"

namespace embrenorm {

enum class TaskType { Retrieval, Classification, Sts, Clustering, PairClassification, Bitext };

inline std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::Retrieval: return "retrieval";
    case TaskType::Classification: return "classification";
    case TaskType::Sts: return "sts";
    case TaskType::Clustering: return "clustering";
    case TaskType::PairClassification: return "pair_classification";
    case TaskType::Bitext: return "bitext";
  }
  return "?";
}

inline TaskType parse_task_type(std::string_view s) {
  for (auto t : {TaskType::Retrieval, TaskType::Classification, TaskType::Sts, TaskType::Clustering,
                 TaskType::PairClassification, TaskType::Bitext})
    if (to_string(t) == s) return t;
  fail(ErrorCode::SchemaError, "unknown task type '" + std::string(s) + "'");
}

using Qrels = std::map<std::string, std::map<std::string, double>>;
using IndexPair = std::pair<std::size_t, std::size_t>;

struct RetrievalPayload {
  EmbeddingMatrix queries;
  EmbeddingMatrix corpus;
  Qrels qrels;  // query id -> (doc id -> grade)
  std::size_t k = 10;
};

struct ClassificationPayload {
  EmbeddingMatrix train;
  std::vector<std::string> train_labels;
  EmbeddingMatrix test;
  std::vector<std::string> test_labels;
  std::size_t k = 10;
};

struct StsPayload {
  EmbeddingMatrix items;
  std::vector<IndexPair> pairs;
  std::vector<double> gold;
};

struct ClusteringPayload {
  EmbeddingMatrix items;
  std::vector<std::string> labels;
  std::size_t restarts = 5;
  std::optional<std::size_t> k;  // number of clusters; defaults to the number of gold classes
};

struct PairClassificationPayload {
  EmbeddingMatrix items;
  std::vector<IndexPair> pairs;
  std::vector<bool> labels;
};

struct BitextPayload {
  EmbeddingMatrix left;
  EmbeddingMatrix right;
  std::vector<std::pair<std::string, std::string>> gold;  // (left id, right id)
};

// Alternative order matches TaskType.
using TaskPayload = std::variant<RetrievalPayload, ClassificationPayload, StsPayload, ClusteringPayload,
                                 PairClassificationPayload, BitextPayload>;

struct TaskDataset {
  std::string task_id;
  TaskPayload payload;
  /// Hash of the text the embeddings came from; empty means "derive from content".
  Fingerprint source_fingerprint;

  TaskType type() const noexcept { return static_cast<TaskType>(payload.index()); }

  /// Every embedding matrix in the payload, in a fixed order.
  std::vector<const EmbeddingMatrix*> matrices() const {
    return std::visit(
        [](const auto& p) -> std::vector<const EmbeddingMatrix*> {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, RetrievalPayload>) return {&p.queries, &p.corpus};
          else if constexpr (std::is_same_v<P, ClassificationPayload>) return {&p.train, &p.test};
          else if constexpr (std::is_same_v<P, BitextPayload>) return {&p.left, &p.right};
          else return {&p.items};
        },
        payload);
  }

  /// source_fingerprint when known, else a hash over the payload matrices.
  Fingerprint fingerprint() const {
    if (!source_fingerprint.empty()) return source_fingerprint;
    Sha256 h;
    h.update_field("embrenorm/dataset/v1");
    for (const auto* m : matrices()) h.update_field(m->fingerprint().hex());
    return h.finish();
  }

  void validate() const;
};

namespace detail {

inline std::set<std::string> id_set(const EmbeddingMatrix& m) { return {m.ids().begin(), m.ids().end()}; }

inline void require(bool ok, const std::string& task, const std::string& what) {
  if (!ok) fail(ErrorCode::SchemaError, "task '" + task + "': " + what);
}

}  // namespace detail

inline void TaskDataset::validate() const {
  const auto& id = task_id;
  detail::require(!id.empty(), id, "empty task id");
  std::size_t dim = 0;
  for (const auto* m : matrices()) {
    detail::require(m->count() >= 2, id, "every split needs at least 2 items");
    if (dim == 0) dim = m->dim();
    if (m->dim() != dim) fail(ErrorCode::DimensionMismatch, "task '" + id + "': splits have different dims");
  }
  auto check_pairs = [&](const std::vector<IndexPair>& pairs, std::size_t n) {
    for (const auto& [a, b] : pairs) detail::require(a < n && b < n, id, "pair index out of range");
  };
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, RetrievalPayload>) {
          const auto qs = detail::id_set(p.queries), ds = detail::id_set(p.corpus);
          detail::require(p.k >= 1, id, "k must be >= 1");
          for (const auto& [q, docs] : p.qrels) {
            detail::require(qs.count(q) > 0, id, "qrels reference unknown query '" + q + "'");
            for (const auto& [d, g] : docs) {
              detail::require(ds.count(d) > 0, id, "qrels reference unknown doc '" + d + "'");
              detail::require(g >= 0.0, id, "qrels grades must be >= 0");
            }
          }
        } else if constexpr (std::is_same_v<P, ClassificationPayload>) {
          detail::require(p.train_labels.size() == p.train.count(), id, "train label count mismatch");
          detail::require(p.test_labels.size() == p.test.count(), id, "test label count mismatch");
          detail::require(p.k >= 1, id, "k must be >= 1");
        } else if constexpr (std::is_same_v<P, StsPayload>) {
          check_pairs(p.pairs, p.items.count());
          detail::require(p.gold.size() == p.pairs.size(), id, "gold score count mismatch");
          detail::require(p.pairs.size() >= 2, id, "STS needs at least 2 pairs");
        } else if constexpr (std::is_same_v<P, ClusteringPayload>) {
          detail::require(p.labels.size() == p.items.count(), id, "label count mismatch");
        } else if constexpr (std::is_same_v<P, PairClassificationPayload>) {
          check_pairs(p.pairs, p.items.count());
          detail::require(p.labels.size() == p.pairs.size(), id, "pair label count mismatch");
        } else if constexpr (std::is_same_v<P, BitextPayload>) {
          const auto ls = detail::id_set(p.left), rs = detail::id_set(p.right);
          for (const auto& [l, r] : p.gold)
            detail::require(ls.count(l) > 0 && rs.count(r) > 0, id, "gold pair references unknown id");
        }
      },
      payload);
}

}  // namespace embrenorm
