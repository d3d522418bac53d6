#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "embrenorm/error.hpp"
#include "embrenorm/hash.hpp"

namespace embrenorm {

/// Inputs flagged normalized may deviate this much from unit length
/// (public models emit float32-rounded unit vectors).
inline constexpr double kInputUnitTolerance = 1e-3;
/// Renormalized outputs are unit and (for R2) orthogonal to this precision.
inline constexpr double kOutputTolerance = 1e-6;
/// Residuals at or below this norm are degenerate; also the zero-bias cut.
inline constexpr double kDegenerateThreshold = 1e-9;

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template <typename A>
double norm2(std::span<const A> a) {
  return std::sqrt(dot(a, a));
}

template <typename T>
bool all_finite(std::span<const T> a) {
  for (T x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

/// A single embedding: float32 storage, 64-bit arithmetic in every kernel.
struct Embedding {
  std::vector<float> values;
  bool normalized = false;

  Embedding() = default;
  Embedding(std::vector<float> v, bool is_normalized) : values(std::move(v)), normalized(is_normalized) {
    validate();
  }

  std::size_t dim() const noexcept { return values.size(); }
  std::span<const float> view() const noexcept { return values; }

  void validate() const {
    if (values.size() < 2) fail(ErrorCode::DimensionMismatch, "embedding dim must be >= 2");
    if (!all_finite(view())) fail(ErrorCode::NonFinite, "embedding has NaN/Inf component");
    if (normalized && std::abs(norm2(view()) - 1.0) > kInputUnitTolerance)
      fail(ErrorCode::NotNormalized, "embedding flagged normalized is not unit length");
  }
};

/// count x dim row-major float32 matrix with unique string ids.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t dim, std::vector<float> rows, std::vector<std::string> ids, bool normalized)
      : dim_(dim), rows_(std::move(rows)), ids_(std::move(ids)), normalized_(normalized) {
    if (dim_ == 0) fail(ErrorCode::DimensionMismatch, "matrix dim must be positive");
    if (rows_.size() != ids_.size() * dim_)
      fail(ErrorCode::IdRowMismatch, "row storage does not match id count x dim");
    std::unordered_set<std::string_view> seen;
    seen.reserve(ids_.size());
    for (const auto& id : ids_)
      if (!seen.insert(id).second) fail(ErrorCode::DuplicateId, "duplicate id '" + id + "'");
    if (!all_finite(std::span<const float>(rows_))) fail(ErrorCode::NonFinite, "matrix has NaN/Inf component");
    if (normalized_) {
      for (std::size_t i = 0; i < count(); ++i)
        if (std::abs(norm2(row(i)) - 1.0) > kInputUnitTolerance)
          fail(ErrorCode::NotNormalized, "row '" + ids_[i] + "' is not unit length");
    }
  }

  /// Builds a matrix from double rows, rounding each component to float32.
  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows, std::vector<std::string> ids,
                                   bool normalized) {
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    std::vector<float> flat;
    flat.reserve(rows.size() * dim);
    for (const auto& r : rows) {
      if (r.size() != dim) fail(ErrorCode::DimensionMismatch, "ragged rows");
      for (double x : r) flat.push_back(static_cast<float>(x));
    }
    if (rows.empty()) fail(ErrorCode::DimensionMismatch, "cannot infer dim from zero rows");
    return EmbeddingMatrix(dim, std::move(flat), std::move(ids), normalized);
  }

  std::size_t count() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::span<const float> data() const noexcept { return rows_; }
  std::span<const float> row(std::size_t i) const noexcept { return {rows_.data() + i * dim_, dim_}; }

  Embedding embedding(std::size_t i) const {
    auto r = row(i);
    return Embedding(std::vector<float>(r.begin(), r.end()), normalized_);
  }

  /// Rows at the given positions, in the given order.
  EmbeddingMatrix select(std::span<const std::size_t> indices) const {
    std::vector<float> rows;
    std::vector<std::string> ids;
    rows.reserve(indices.size() * dim_);
    ids.reserve(indices.size());
    for (std::size_t i : indices) {
      auto r = row(i);
      rows.insert(rows.end(), r.begin(), r.end());
      ids.push_back(ids_.at(i));
    }
    EmbeddingMatrix out;
    out.dim_ = dim_;
    out.rows_ = std::move(rows);
    out.ids_ = std::move(ids);
    out.normalized_ = normalized_;
    return out;
  }

  /// Content hash over dim, ids and raw row bytes.
  Fingerprint fingerprint() const {
    Sha256 h;
    h.update_field("embrenorm/matrix/v1");
    h.update_u64(dim_);
    h.update_u64(count());
    for (const auto& id : ids_) h.update_field(id);
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(rows_.data()), rows_.size() * sizeof(float)));
    return h.finish();
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.normalized_ == b.normalized_ &&
           a.rows_.size() == b.rows_.size() &&
           std::memcmp(a.rows_.data(), b.rows_.data(), a.rows_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  std::vector<std::string> ids_;
  bool normalized_ = false;
};

/// Estimated mean-bias vector with its norm and unit direction.
struct BiasEstimate {
  std::vector<double> mu;
  double norm = 0.0;
  std::vector<double> mu_hat;  // zero vector when norm <= kDegenerateThreshold
  std::uint64_t sample_count = 0;
  Fingerprint corpus_fingerprint;
  std::string model_id;

  std::size_t dim() const noexcept { return mu.size(); }

  /// norm and direction are derived from mu; tiny means get norm 0.
  static BiasEstimate from_mean(std::vector<double> mean, std::uint64_t count, Fingerprint fingerprint,
                                std::string model) {
    BiasEstimate b;
    b.norm = norm2(std::span<const double>(mean));
    b.mu_hat.assign(mean.size(), 0.0);
    if (b.norm > kDegenerateThreshold) {
      for (std::size_t i = 0; i < mean.size(); ++i) b.mu_hat[i] = mean[i] / b.norm;
    } else {
      b.norm = 0.0;
    }
    b.mu = std::move(mean);
    b.sample_count = count;
    b.corpus_fingerprint = std::move(fingerprint);
    b.model_id = std::move(model);
    return b;
  }
};

}  // namespace embrenorm
