#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "embrenorm/store.hpp"
#include "embrenorm/synth.hpp"
#include "oracles.hpp"

using namespace embrenorm;
using namespace embrenorm::store;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::IoError;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

const fs::path kFixtures = EMBRENORM_FIXTURE_DIR;

}  // namespace

TEST(Emb1, RoundTripIsBitwise) {
  oracle::TempDir dir;
  std::mt19937_64 g(1);
  const auto m = oracle::random_unit_matrix(g, 3, 4);
  write_embeddings(m, dir / "m.emb");
  EXPECT_TRUE(fs::exists(dir / "m.ids.jsonl"));
  const auto back = read_embeddings(dir / "m.emb");
  EXPECT_TRUE(back == m);
  EXPECT_EQ(fs::file_size(dir / "m.emb"), 24u + 3 * 4 * 4);
}

TEST(Emb1, UnnormalizedFlagRoundTrips) {
  oracle::TempDir dir;
  EmbeddingMatrix m(2, {3, 4, 1, 1}, {"a", "b"}, false);
  write_embeddings(m, dir / "u.emb");
  const auto back = read_embeddings(dir / "u.emb");
  EXPECT_FALSE(back.normalized());
  EXPECT_TRUE(back == m);
}

TEST(Emb1, ConformanceFixtureIsByteExact) {
  const auto fixture = read_embeddings(kFixtures / "conformance_2x4.emb");
  EXPECT_EQ(fixture.count(), 2u);
  EXPECT_EQ(fixture.dim(), 4u);
  EXPECT_TRUE(fixture.normalized());
  EXPECT_EQ(fixture.id(1), "1");
  oracle::TempDir dir;
  EmbeddingMatrix m(4, {0.5f, 0.5f, 0.5f, 0.5f, 1, 0, 0, 0}, {"0", "1"}, true);
  write_embeddings(m, dir / "c.emb");
  EXPECT_EQ(read_file(dir / "c.emb"), read_file(kFixtures / "conformance_2x4.emb"));
  EXPECT_EQ(read_file(dir / "c.ids.jsonl"), read_file(kFixtures / "conformance_2x4.ids.jsonl"));
}

TEST(Emb1, HeaderLayout) {
  EmbeddingFileHeader h;
  h.dim = 3;
  h.count = 0x0102030405ULL;
  h.flags = 1;
  const auto bytes = encode_header(h);
  ASSERT_EQ(bytes.size(), 24u);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0x05);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 1);
  const auto back = decode_header(bytes);
  EXPECT_EQ(back.count, h.count);
}

class Emb1Errors : public ::testing::Test {
 protected:
  oracle::TempDir dir;
  std::string good;
  void SetUp() override {
    EmbeddingMatrix m(2, {1, 0, 0, 1, 0.6f, 0.8f}, {"a", "b", "c"}, true);
    write_embeddings(m, dir / "g.emb");
    good = read_file(dir / "g.emb");
  }
  ErrorCode read_with(std::string bytes) {
    write_bytes(dir / "g.emb", bytes);
    return code_of([&] { read_embeddings(dir / "g.emb"); });
  }
};

TEST_F(Emb1Errors, BadMagic) {
  auto b = good;
  b[3] = '2';
  EXPECT_EQ(read_with(b), ErrorCode::BadMagic);
}

TEST_F(Emb1Errors, VersionUnsupported) {
  auto b = good;
  b[4] = 2;
  EXPECT_EQ(read_with(b), ErrorCode::VersionUnsupported);
}

TEST_F(Emb1Errors, DimZeroIsBadHeader) {
  auto b = good;
  b[8] = 0;
  EXPECT_EQ(read_with(b), ErrorCode::BadHeader);
}

TEST_F(Emb1Errors, TruncatedPayload) { EXPECT_EQ(read_with(good.substr(0, good.size() - 1)), ErrorCode::TruncatedPayload); }

TEST_F(Emb1Errors, TrailingData) { EXPECT_EQ(read_with(good + "x"), ErrorCode::TrailingData); }

TEST_F(Emb1Errors, ShortHeader) { EXPECT_EQ(read_with(good.substr(0, 10)), ErrorCode::BadHeader); }

TEST_F(Emb1Errors, SidecarProblems) {
  write_bytes(dir / "g.ids.jsonl", "{\"row\":0,\"id\":\"a\"}\n{\"row\":1,\"id\":\"b\"}\n");
  EXPECT_EQ(code_of([&] { read_embeddings(dir / "g.emb"); }), ErrorCode::IdRowMismatch);
  write_bytes(dir / "g.ids.jsonl", "{\"row\":0,\"id\":\"a\"}\n{\"row\":2,\"id\":\"b\"}\n{\"row\":1,\"id\":\"c\"}\n");
  EXPECT_EQ(code_of([&] { read_embeddings(dir / "g.emb"); }), ErrorCode::IdRowMismatch);
  write_bytes(dir / "g.ids.jsonl", "not json\n");
  EXPECT_EQ(code_of([&] { read_embeddings(dir / "g.emb"); }), ErrorCode::IdRowMismatch);
  fs::remove(dir / "g.ids.jsonl");
  EXPECT_EQ(code_of([&] { read_embeddings(dir / "g.emb"); }), ErrorCode::IoError);
}

TEST_F(Emb1Errors, NormalizedFlagIsEnforced) {
  auto b = good;
  const float big = 2.0f;
  std::memcpy(b.data() + 24, &big, 4);
  EXPECT_EQ(read_with(b), ErrorCode::NotNormalized);
}

TEST(Bias, RoundTripOfFinalizeExample) {
  oracle::TempDir dir;
  const auto fp = Fingerprint::from_hex(std::string(64, 'a'));
  const auto b = BiasEstimate::from_mean({0.5, 0.5}, 2, fp, "model");
  write_bias(b, dir / "mu.json", "2026-01-01T00:00:00Z");
  const auto j = json::parse(read_file(dir / "mu.json"));
  EXPECT_NEAR(j["norm"].get<double>(), 0.707107, 1e-6);
  EXPECT_EQ(j["createdAtUtc"], "2026-01-01T00:00:00Z");
  const auto back = read_bias(dir / "mu.json");
  EXPECT_EQ(back.mu, b.mu);
  EXPECT_NEAR(back.norm, b.norm, 1e-9);
  EXPECT_EQ(back.sample_count, 2u);
  EXPECT_EQ(back.model_id, "model");
  EXPECT_EQ(back.corpus_fingerprint, fp);
}

TEST(Bias, VectorRoundsToNineDigits) {
  const auto b = BiasEstimate::from_mean({0.123456789123, -0.2}, 5, Fingerprint::from_hex(std::string(64, '1')), "m");
  const auto j = bias_to_json(b, "t");
  EXPECT_EQ(j["vector"][0].get<double>(), 0.123456789);
  const auto back = bias_from_json(j);
  EXPECT_NEAR(back.mu[0], b.mu[0], 1e-9);
  // write -> read -> write is a fixed point
  EXPECT_EQ(bias_to_json(back, "t").dump(), j.dump());
}

TEST(Bias, NormMismatch) {
  auto j = bias_to_json(BiasEstimate::from_mean({0.7, 0.0}, 5, Fingerprint::from_hex(std::string(64, '1')), "m"), "t");
  j["norm"] = 0.9;
  EXPECT_EQ(code_of([&] { bias_from_json(j); }), ErrorCode::NormMismatch);
}

TEST(Bias, SchemaErrors) {
  const auto good =
      bias_to_json(BiasEstimate::from_mean({0.7, 0.0}, 5, Fingerprint::from_hex(std::string(64, '1')), "m"), "t");
  for (const char* field : {"corpusFingerprint", "modelId", "dim", "count", "norm", "vector", "createdAtUtc"}) {
    auto j = good;
    j.erase(field);
    EXPECT_EQ(code_of([&] { bias_from_json(j); }), ErrorCode::SchemaError) << field;
  }
  auto j = good;
  j["dim"] = 3;
  EXPECT_EQ(code_of([&] { bias_from_json(j); }), ErrorCode::SchemaError);
  j = good;
  j["corpusFingerprint"] = "xyz";
  EXPECT_EQ(code_of([&] { bias_from_json(j); }), ErrorCode::SchemaError);
  j = good;
  j["vector"][0] = "0.7";
  EXPECT_EQ(code_of([&] { bias_from_json(j); }), ErrorCode::SchemaError);
  oracle::TempDir dir;
  write_bytes(dir / "bad.json", "{not json");
  EXPECT_EQ(code_of([&] { read_bias(dir / "bad.json"); }), ErrorCode::SchemaError);
}

TEST(TaskFiles, RoundTripEveryType) {
  oracle::TempDir dir;
  for (auto t : {TaskType::Retrieval, TaskType::Classification, TaskType::Sts, TaskType::Clustering,
                 TaskType::PairClassification, TaskType::Bitext}) {
    synth::SynthConfig c;
    c.dim = 16;
    c.num_clusters = 3;
    c.items_per_cluster = 6;
    c.bias_norm = 0.3;
    c.task_type = t;
    auto ds = synth::generate(c).biased_dataset;
    ds.source_fingerprint = Fingerprint::from_hex(std::string(64, '7'));
    const auto path = write_task_dataset(ds, dir.path);
    const auto back = read_task_dataset(path);
    EXPECT_EQ(back.task_id, ds.task_id);
    EXPECT_EQ(back.type(), t);
    EXPECT_EQ(back.source_fingerprint, ds.source_fingerprint);
    const auto a = ds.matrices(), b = back.matrices();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i] == *b[i]);
    const auto bias = BiasEstimate::from_mean(std::vector<double>(16, 0.05), 3,
                                              Fingerprint::from_hex(std::string(64, '9')), "m");
    EXPECT_EQ(run_task(ds, bias, RenormMethod::R2).score.value, run_task(back, bias, RenormMethod::R2).score.value);
  }
}

TEST(TaskFiles, ExplicitClusterCountSurvives) {
  oracle::TempDir dir;
  std::mt19937_64 g(3);
  const TaskDataset ds{"k", ClusteringPayload{oracle::random_unit_matrix(g, 4, 3), {"a", "a", "b", "b"}, 2, 3}, {}};
  const auto back = read_task_dataset(write_task_dataset(ds, dir.path));
  EXPECT_EQ(std::get<ClusteringPayload>(back.payload).k, std::optional<std::size_t>(3));
}

TEST(TaskFiles, SchemaErrors) {
  oracle::TempDir dir;
  write_bytes(dir / "t.json", R"({"taskId": "x", "taskType": "nope", "payload": {}})");
  EXPECT_EQ(code_of([&] { read_task_dataset(dir / "t.json"); }), ErrorCode::SchemaError);
  write_bytes(dir / "t.json", R"({"taskId": "x", "taskType": "sts"})");
  EXPECT_EQ(code_of([&] { read_task_dataset(dir / "t.json"); }), ErrorCode::SchemaError);
}

TEST(Records, JsonLinesRoundTrip) {
  RunRecord a;
  a.task_id = "t1";
  a.task_type = TaskType::Sts;
  a.model_id = "m";
  a.method = RenormMethod::R2;
  a.score = {"spearman", 0.8123456789012345, 300, 0.0213};
  a.dropped_rows = 2;
  a.wall_clock_ms = 17;
  a.bias_fingerprint = Fingerprint::from_hex(std::string(64, 'd'));
  RunRecord b = a;
  b.task_id = "t2";
  b.status = RunStatus::Failed;
  b.error = "KTooLarge: k = 5";
  const auto back = decode_records(encode_records({a, b}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].score.value, a.score.value);
  EXPECT_EQ(back[0].wall_clock_ms, 17);
  EXPECT_EQ(back[0].bias_fingerprint, a.bias_fingerprint);
  EXPECT_FALSE(back[1].ok());
  EXPECT_EQ(back[1].error, b.error);
  const auto untimed = encode_records({a}, false);
  EXPECT_EQ(untimed.find("wallClockMs"), std::string::npos);
  EXPECT_EQ(decode_records(untimed)[0].wall_clock_ms, 0);
}

TEST(Records, RejectsMissingFields) {
  EXPECT_EQ(code_of([] { decode_records("{\"taskId\": \"x\"}\n"); }), ErrorCode::SchemaError);
}

TEST(AtomicWrite, NoTempFileLeftBehind) {
  oracle::TempDir dir;
  write_file_atomic(dir / "sub" / "f.txt", "hello");
  EXPECT_EQ(read_file(dir / "sub" / "f.txt"), "hello");
  EXPECT_FALSE(fs::exists(dir / "sub" / "f.txt.tmp"));
}
