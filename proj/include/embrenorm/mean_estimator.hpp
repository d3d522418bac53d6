#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/parallel.hpp"

namespace embrenorm {

/// Running 64-bit sum of absorbed embeddings. Single writer; combine
/// accumulators from different workers with merge().
class MeanAccumulator {
 public:
  explicit MeanAccumulator(std::size_t dim) : sum_(dim, 0.0) {
    if (dim == 0) fail(ErrorCode::DimensionMismatch, "accumulator dim must be positive");
  }

  std::size_t dim() const noexcept { return sum_.size(); }
  std::uint64_t count() const noexcept { return count_; }
  const std::vector<double>& running_sum() const noexcept { return sum_; }

  MeanAccumulator& absorb(std::span<const float> e) {
    if (e.size() != sum_.size())
      fail(ErrorCode::DimensionMismatch,
           "absorb: dim " + std::to_string(e.size()) + " != " + std::to_string(sum_.size()));
    if (!all_finite(e)) fail(ErrorCode::NonFinite, "absorb: NaN/Inf component");
    for (std::size_t i = 0; i < e.size(); ++i) sum_[i] += e[i];
    ++count_;
    return *this;
  }

  MeanAccumulator& absorb(const Embedding& e) {
    if (!e.normalized) fail(ErrorCode::NotNormalized, "absorb expects a normalized embedding");
    return absorb(e.view());
  }

  /// Sum of sums, sum of counts.
  MeanAccumulator& merge(const MeanAccumulator& other) {
    if (other.dim() != dim()) fail(ErrorCode::DimensionMismatch, "merge: dims differ");
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
    count_ += other.count_;
    return *this;
  }

  BiasEstimate finalize(std::string model_id, Fingerprint corpus_fingerprint) const {
    if (count_ == 0) fail(ErrorCode::EmptyAccumulator, "no embeddings absorbed");
    std::vector<double> mean(sum_.size());
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < sum_.size(); ++i) mean[i] = sum_[i] * inv;
    return BiasEstimate::from_mean(std::move(mean), count_, std::move(corpus_fingerprint), std::move(model_id));
  }

 private:
  std::vector<double> sum_;
  std::uint64_t count_ = 0;
};

/// Rows per partial sum in estimate_mean, independent of the worker count.
inline constexpr std::size_t kMeanChunkRows = 4096;

/// Mean of a normalized matrix: fixed-size chunks summed independently,
/// then merged in chunk order.
inline BiasEstimate estimate_mean(const EmbeddingMatrix& m, std::string model_id, Fingerprint corpus_fingerprint,
                                  Parallelism par = {}) {
  if (!m.normalized()) fail(ErrorCode::NotNormalized, "mean estimation expects normalized embeddings");
  const std::size_t chunks = (m.count() + kMeanChunkRows - 1) / kMeanChunkRows;
  std::vector<MeanAccumulator> partial(chunks, MeanAccumulator(m.dim()));
  parallel_for(chunks, par, [&](std::size_t c) {
    const std::size_t end = std::min(m.count(), (c + 1) * kMeanChunkRows);
    for (std::size_t i = c * kMeanChunkRows; i < end; ++i) partial[c].absorb(m.row(i));
  });
  MeanAccumulator total(m.dim());
  for (const auto& p : partial) total.merge(p);
  return total.finalize(std::move(model_id), std::move(corpus_fingerprint));
}

}  // namespace embrenorm
