#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "embrenorm/renorm.hpp"
#include "oracles.hpp"

using namespace embrenorm;

namespace {

BiasEstimate bias(std::vector<double> mu) { return BiasEstimate::from_mean(std::move(mu), 1, {}, "m"); }

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::IoError;
}

}  // namespace

TEST(R1, WorkedExample) {
  const auto out = renormalize_r1(Embedding({0.6f, 0.8f}, true), bias({0.2, 0.0}));
  // (0.4, 0.8) / sqrt(0.8)
  EXPECT_NEAR(out.values[0], 0.4 / std::sqrt(0.8), 1e-6);
  EXPECT_NEAR(out.values[1], 0.8 / std::sqrt(0.8), 1e-6);
  EXPECT_NEAR(out.values[0], 0.447214, 1e-6);
  EXPECT_NEAR(out.values[1], 0.894427, 1e-6);
}

TEST(R1, ZeroBiasIsNoOp) {
  const Embedding e({0.6f, 0.8f}, true);
  const auto out = renormalize_r1(e, bias({0.0, 0.0}));
  EXPECT_NEAR(out.values[0], 0.6, 1e-7);
  EXPECT_NEAR(out.values[1], 0.8, 1e-7);
}

TEST(R1, EmbeddingEqualToUnitBiasIsDegenerate) {
  EXPECT_EQ(code_of([] { renormalize_r1(Embedding({1.0f, 0.0f}, true), bias({1.0, 0.0})); }),
            ErrorCode::DegenerateResidual);
}

TEST(R1, IsNotScaleInvariant) {
  const Embedding e({0.6f, 0.8f}, true);
  const auto a = renormalize_r1(e, bias({0.2, 0.0}));
  const auto b = renormalize_r1(e, bias({0.4, 0.0}));
  EXPECT_GT(std::abs(a.values[0] - b.values[0]), 1e-3);
}

TEST(R2, WorkedExample) {
  const auto out = renormalize_r2(Embedding({0.6f, 0.8f}, true), bias({1.0, 0.0}));
  EXPECT_NEAR(out.values[0], 0.0, 1e-7);
  EXPECT_NEAR(out.values[1], 1.0, 1e-7);
}

TEST(R2, OrthogonalInputUnchanged) {
  const auto out = renormalize_r2(Embedding({0.0f, 1.0f}, true), bias({0.5, 0.0}));
  EXPECT_EQ(out.values, (std::vector<float>{0.0f, 1.0f}));
}

TEST(R2, ParallelInputIsDegenerate) {
  EXPECT_EQ(code_of([] { renormalize_r2(Embedding({1.0f, 0.0f}, true), bias({0.3, 0.0})); }),
            ErrorCode::DegenerateResidual);
}

TEST(R2, ZeroBiasIsAnError) {
  EXPECT_EQ(code_of([] { renormalize_r2(Embedding({0.6f, 0.8f}, true), bias({0.0, 0.0})); }), ErrorCode::ZeroBias);
}

TEST(Renorm, DimensionMismatch) {
  const Embedding e({0.6f, 0.8f}, true);
  EXPECT_EQ(code_of([&] { renormalize_r1(e, bias({0.1, 0.0, 0.0})); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { renormalize_r2(e, bias({0.1, 0.0, 0.0})); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { renormalize(e, bias({0.1, 0.0, 0.0}), RenormMethod::Identity); }),
            ErrorCode::DimensionMismatch);
}

TEST(Renorm, RequiresNormalizedInput) {
  const Embedding e({3.0f, 4.0f}, false);
  EXPECT_EQ(code_of([&] { renormalize_r1(e, bias({0.1, 0.0})); }), ErrorCode::NotNormalized);
}

TEST(Renorm, MethodAndPolicyNames) {
  for (auto m : {RenormMethod::Identity, RenormMethod::R1, RenormMethod::R2}) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_EQ(parse_method("r2"), RenormMethod::R2);
  EXPECT_THROW(parse_method("R2"), Error);
  EXPECT_EQ(parse_policy("keep-raw"), DegeneratePolicy::KeepRaw);
  EXPECT_EQ(parse_policy("drop"), DegeneratePolicy::Drop);
  EXPECT_EQ(parse_policy("fail"), DegeneratePolicy::Fail);
  EXPECT_THROW(parse_policy("skip"), Error);
}

TEST(ApplyMatrix, IdentityIsBitIdentical) {
  std::mt19937_64 g(1);
  const auto m = oracle::random_unit_matrix(g, 3, 4);
  const auto r = apply_matrix(m, bias({0.1, 0.2, 0.0, 0.0}), RenormMethod::Identity);
  EXPECT_TRUE(r.matrix == m);
  EXPECT_TRUE(r.dropped_ids.empty());
}

TEST(ApplyMatrix, DropsRowParallelToBias) {
  EmbeddingMatrix m(2, {1, 0, 0.6f, 0.8f}, {"par", "ok"}, true);
  const auto r = apply_matrix(m, bias({0.5, 0.0}), RenormMethod::R2, DegeneratePolicy::Drop);
  ASSERT_EQ(r.matrix.count(), 1u);
  EXPECT_EQ(r.matrix.id(0), "ok");
  EXPECT_EQ(r.dropped_ids, (std::vector<std::string>{"par"}));
}

TEST(ApplyMatrix, KeepRawAndFailPolicies) {
  EmbeddingMatrix m(2, {0.6f, 0.8f, 1, 0}, {"ok", "par"}, true);
  const auto keep = apply_matrix(m, bias({0.5, 0.0}), RenormMethod::R2, DegeneratePolicy::KeepRaw);
  ASSERT_EQ(keep.matrix.count(), 2u);
  EXPECT_EQ(keep.matrix.row(1)[0], 1.0f);
  EXPECT_TRUE(keep.dropped_ids.empty());
  EXPECT_EQ(code_of([&] { apply_matrix(m, bias({0.5, 0.0}), RenormMethod::R2, DegeneratePolicy::Fail); }),
            ErrorCode::DegenerateResidual);
}

TEST(ApplyMatrix, R2PostConditionsOnThousandRandomRows) {
  std::mt19937_64 g(2);
  const auto m = oracle::random_unit_matrix(g, 1000, 64);
  auto mu = oracle::unit(g, 64);
  for (auto& x : mu) x *= 0.7;
  const auto b = bias(mu);
  const auto r = apply_matrix(m, b, RenormMethod::R2, DegeneratePolicy::Drop, Parallelism{4});
  ASSERT_EQ(r.matrix.count(), 1000u);
  for (std::size_t i = 0; i < r.matrix.count(); ++i) {
    const oracle::Vec row = oracle::row(r.matrix, i);
    EXPECT_LE(std::abs(oracle::dot(row, b.mu_hat)), 1e-6);
    EXPECT_LE(std::abs(std::sqrt(oracle::dot(row, row)) - 1.0), 1e-6);
  }
}

TEST(ApplyMatrix, MatchesScalarPathBitForBit) {
  std::mt19937_64 g(3);
  const auto m = oracle::random_unit_matrix(g, 50, 16);
  auto mu = oracle::unit(g, 16);
  for (auto& x : mu) x *= 0.5;
  const auto b = bias(mu);
  for (auto method : {RenormMethod::R1, RenormMethod::R2}) {
    const auto r = apply_matrix(m, b, method, DegeneratePolicy::Drop, Parallelism{3});
    for (std::size_t i = 0; i < m.count(); ++i) {
      const auto scalar = renormalize(m.embedding(i), b, method);
      const auto row = r.matrix.row(i);
      EXPECT_TRUE(std::equal(row.begin(), row.end(), scalar.values.begin()));
    }
  }
}

TEST(ApplyMatrix, ThreadCountDoesNotChangeOutput) {
  std::mt19937_64 g(4);
  const auto m = oracle::random_unit_matrix(g, 300, 32);
  auto mu = oracle::unit(g, 32);
  for (auto& x : mu) x *= 0.8;
  const auto b = bias(mu);
  const auto one = apply_matrix(m, b, RenormMethod::R2, DegeneratePolicy::Drop, Parallelism{1});
  const auto many = apply_matrix(m, b, RenormMethod::R2, DegeneratePolicy::Drop, Parallelism{7});
  EXPECT_TRUE(one.matrix == many.matrix);
}

TEST(ApplyMatrix, R2IsBitwiseIdempotentOnStoredRows) {
  std::mt19937_64 g(5);
  const auto m = oracle::random_unit_matrix(g, 500, 128);
  auto mu = oracle::unit(g, 128);
  for (auto& x : mu) x *= 0.6;
  const auto b = bias(mu);
  const auto once = apply_matrix(m, b, RenormMethod::R2).matrix;
  const auto twice = apply_matrix(once, b, RenormMethod::R2).matrix;
  EXPECT_TRUE(once == twice);
}

TEST(ApplyMatrix, R2ScaleInvarianceInWidePath) {
  std::mt19937_64 g(6);
  auto mu = oracle::unit(g, 32);
  const auto b1 = bias(mu);
  for (auto& x : mu) x *= 0.37;
  const auto b2 = bias(mu);
  for (int t = 0; t < 100; ++t) {
    const auto e = oracle::unit(g, 32);
    std::vector<float> ef(e.begin(), e.end());
    std::vector<double> o1(32), o2(32);
    kernels::remove_projection_wide(ef, b1.mu_hat, o1);
    kernels::remove_projection_wide(ef, b2.mu_hat, o2);
    for (int i = 0; i < 32; ++i) EXPECT_NEAR(o1[i], o2[i], 1e-9);
  }
}

TEST(ApplyMatrix, R2RejectsZeroBiasEvenForEmptyWork) {
  EmbeddingMatrix m(2, {0.6f, 0.8f}, {"a"}, true);
  EXPECT_EQ(code_of([&] { apply_matrix(m, bias({0.0, 0.0}), RenormMethod::R2); }), ErrorCode::ZeroBias);
  EXPECT_NO_THROW(apply_matrix(m, bias({0.0, 0.0}), RenormMethod::R1));
}
