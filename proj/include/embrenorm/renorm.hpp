#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/parallel.hpp"

namespace embrenorm {

enum class RenormMethod { Identity, R1, R2 };

inline std::string_view to_string(RenormMethod m) {
  switch (m) {
    case RenormMethod::Identity: return "identity";
    case RenormMethod::R1: return "r1";
    case RenormMethod::R2: return "r2";
  }
  return "?";
}

inline RenormMethod parse_method(std::string_view s) {
  if (s == "identity") return RenormMethod::Identity;
  if (s == "r1") return RenormMethod::R1;
  if (s == "r2") return RenormMethod::R2;
  fail(ErrorCode::InvalidConfig, "unknown method '" + std::string(s) + "' (expected identity|r1|r2)");
}

enum class DegeneratePolicy { Drop, KeepRaw, Fail };

inline DegeneratePolicy parse_policy(std::string_view s) {
  if (s == "drop") return DegeneratePolicy::Drop;
  if (s == "keep-raw") return DegeneratePolicy::KeepRaw;
  if (s == "fail") return DegeneratePolicy::Fail;
  fail(ErrorCode::InvalidConfig, "unknown degenerate policy '" + std::string(s) + "'");
}

namespace kernels {

enum class Status { Ok, Degenerate };

namespace detail {

// Four interleaved partial sums, combined in a fixed order.
inline double sum_sq(std::span<const double> v) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t d = v.size(), body = d - d % 4;
  for (std::size_t i = 0; i < body; i += 4)
    for (std::size_t l = 0; l < 4; ++l) acc[l] += v[i + l] * v[i + l];
  for (std::size_t i = body; i < d; ++i) acc[i % 4] += v[i] * v[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

inline std::pair<double, double> dot_and_sum_sq(std::span<const float> e, std::span<const double> u) {
  double dp[4] = {0.0, 0.0, 0.0, 0.0}, sq[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t d = e.size(), body = d - d % 4;
  for (std::size_t i = 0; i < body; i += 4)
    for (std::size_t l = 0; l < 4; ++l) {
      const double x = e[i + l];
      dp[l] += x * u[i + l];
      sq[l] += x * x;
    }
  for (std::size_t i = body; i < d; ++i) {
    const double x = e[i];
    dp[i % 4] += x * u[i];
    sq[i % 4] += x * x;
  }
  return {(dp[0] + dp[1]) + (dp[2] + dp[3]), (sq[0] + sq[1]) + (sq[2] + sq[3])};
}

}  // namespace detail

/// out = (e - mu) / ||e - mu|| in 64-bit.
inline Status subtract_mean_wide(std::span<const float> e, std::span<const double> mu, std::span<double> out) {
  const std::size_t d = e.size();
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<double>(e[i]) - mu[i];
  const double n = std::sqrt(detail::sum_sq(out));
  if (!(n > kDegenerateThreshold)) return Status::Degenerate;
  const double inv = 1.0 / n;
  for (std::size_t i = 0; i < d; ++i) out[i] *= inv;
  return Status::Ok;
}

// Rows already unit and orthogonal to mu_hat within these bounds are
// copied through unchanged by R2.
inline constexpr double kFixedPointDot = 1e-7;
inline constexpr double kFixedPointNorm2 = 1e-6;

/// out = (e - (e.mu_hat) mu_hat) / ||...|| in 64-bit.
inline Status remove_projection_wide(std::span<const float> e, std::span<const double> mu_hat, std::span<double> out) {
  const std::size_t d = e.size();
  const auto [proj, e2] = detail::dot_and_sum_sq(e, mu_hat);
  if (std::abs(proj) <= kFixedPointDot && std::abs(e2 - 1.0) <= kFixedPointNorm2) {
    for (std::size_t i = 0; i < d; ++i) out[i] = e[i];
    return Status::Ok;
  }
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<double>(e[i]) - proj * mu_hat[i];
  const double n = std::sqrt(detail::sum_sq(out));
  if (!(n > kDegenerateThreshold)) return Status::Degenerate;
  const double inv = 1.0 / n;
  for (std::size_t i = 0; i < d; ++i) out[i] *= inv;
  return Status::Ok;
}

namespace detail {

template <typename Kernel>
Status narrow(Kernel&& k, std::span<const float> e, std::span<const double> v, std::span<float> out) {
  thread_local std::vector<double> wide;
  wide.resize(e.size());
  const Status s = k(e, v, std::span<double>(wide.data(), e.size()));
  if (s == Status::Ok)
    for (std::size_t i = 0; i < e.size(); ++i) out[i] = static_cast<float>(wide[i]);
  return s;
}

}  // namespace detail

inline Status subtract_mean(std::span<const float> e, std::span<const double> mu, std::span<float> out) {
  return detail::narrow(subtract_mean_wide, e, mu, out);
}

inline Status remove_projection(std::span<const float> e, std::span<const double> mu_hat, std::span<float> out) {
  return detail::narrow(remove_projection_wide, e, mu_hat, out);
}

}  // namespace kernels

namespace detail {

inline void check_dims(std::size_t dim, const BiasEstimate& bias) {
  if (dim != bias.dim())
    fail(ErrorCode::DimensionMismatch,
         "embedding dim " + std::to_string(dim) + " != bias dim " + std::to_string(bias.dim()));
}

inline void check_r2_bias(const BiasEstimate& bias) {
  if (!(bias.norm > kDegenerateThreshold))
    fail(ErrorCode::ZeroBias, "R2 needs a nonzero bias; its direction is undefined");
}

}  // namespace detail

/// R1: subtract the bias and rescale to unit length. A zero bias is a no-op
/// (up to the final rescale).
inline Embedding renormalize_r1(const Embedding& e, const BiasEstimate& bias) {
  detail::check_dims(e.dim(), bias);
  if (!e.normalized) fail(ErrorCode::NotNormalized, "R1 expects a normalized embedding");
  std::vector<float> out(e.dim());
  if (kernels::subtract_mean(e.view(), bias.mu, out) == kernels::Status::Degenerate)
    fail(ErrorCode::DegenerateResidual, "embedding coincides with the bias");
  return Embedding(std::move(out), true);
}

/// R2: remove the component along the bias direction and rescale.
inline Embedding renormalize_r2(const Embedding& e, const BiasEstimate& bias) {
  detail::check_dims(e.dim(), bias);
  detail::check_r2_bias(bias);
  if (!e.normalized) fail(ErrorCode::NotNormalized, "R2 expects a normalized embedding");
  std::vector<float> out(e.dim());
  if (kernels::remove_projection(e.view(), bias.mu_hat, out) == kernels::Status::Degenerate)
    fail(ErrorCode::DegenerateResidual, "embedding is parallel to the bias direction");
  return Embedding(std::move(out), true);
}

inline Embedding renormalize(const Embedding& e, const BiasEstimate& bias, RenormMethod method) {
  switch (method) {
    case RenormMethod::Identity: detail::check_dims(e.dim(), bias); return e;
    case RenormMethod::R1: return renormalize_r1(e, bias);
    case RenormMethod::R2: return renormalize_r2(e, bias);
  }
  return e;
}

struct ApplyResult {
  EmbeddingMatrix matrix;
  std::vector<std::string> dropped_ids;
};

/// Row-wise R1/R2 over a matrix, preserving id order. Rows whose residual
/// vanishes are dropped, kept raw, or turned into an error per `policy`.
inline ApplyResult apply_matrix(const EmbeddingMatrix& m, const BiasEstimate& bias, RenormMethod method,
                                DegeneratePolicy policy = DegeneratePolicy::Drop, Parallelism par = {}) {
  detail::check_dims(m.dim(), bias);
  if (method == RenormMethod::Identity) return {m, {}};
  if (method == RenormMethod::R2) detail::check_r2_bias(bias);
  if (!m.normalized()) fail(ErrorCode::NotNormalized, "renormalization expects a normalized matrix");

  const std::size_t n = m.count();
  const std::size_t d = m.dim();
  std::vector<float> out(n * d);
  std::vector<kernels::Status> status(n);
  parallel_for(n, par, [&](std::size_t i) {
    std::span<float> dst(out.data() + i * d, d);
    status[i] = method == RenormMethod::R1 ? kernels::subtract_mean(m.row(i), bias.mu, dst)
                                           : kernels::remove_projection(m.row(i), bias.mu_hat, dst);
  });

  std::vector<float> kept;
  std::vector<std::string> ids;
  std::vector<std::string> dropped;
  kept.reserve(n * d);
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const float> src(out.data() + i * d, d);
    if (status[i] == kernels::Status::Degenerate) {
      switch (policy) {
        case DegeneratePolicy::Fail:
          fail(ErrorCode::DegenerateResidual, "row '" + m.id(i) + "' has a degenerate residual");
        case DegeneratePolicy::Drop: dropped.push_back(m.id(i)); continue;
        case DegeneratePolicy::KeepRaw: src = m.row(i); break;
      }
    }
    kept.insert(kept.end(), src.begin(), src.end());
    ids.push_back(m.id(i));
  }
  return {EmbeddingMatrix(d, std::move(kept), std::move(ids), true), std::move(dropped)};
}

}  // namespace embrenorm
