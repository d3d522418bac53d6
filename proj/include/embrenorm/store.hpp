#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embrenorm/dataset.hpp"
#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/eval.hpp"
#include "embrenorm/hash.hpp"
#include "embrenorm/renorm.hpp"

// On-disk formats: EMB1 embedding files with an ids sidecar, bias JSON,
// task dataset JSON and run-record JSON lines.

namespace embrenorm::store {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "EMB1 I/O assumes a little-endian host");
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

inline constexpr std::array<char, 4> kMagic{'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 24;
inline constexpr std::uint32_t kFlagNormalized = 1u;

struct EmbeddingFileHeader {
  std::uint32_t version = kVersion;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::uint32_t flags = 0;

  bool normalized() const noexcept { return flags & kFlagNormalized; }
  std::uint64_t payload_bytes() const noexcept { return count * dim * sizeof(float); }
};

/// t.emb -> t.ids.jsonl
inline fs::path sidecar_path(const fs::path& emb) {
  fs::path p = emb;
  p.replace_extension(".ids.jsonl");
  return p;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::IoError, "short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_header(const EmbeddingFileHeader& h) {
  std::string out(kMagic.begin(), kMagic.end());
  detail::put(out, h.version);
  detail::put(out, h.dim);
  detail::put(out, h.count);
  detail::put(out, h.flags);
  return out;
}

inline EmbeddingFileHeader decode_header(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    fail(ErrorCode::BadMagic, "not an EMB1 file");
  if (bytes.size() < kHeaderBytes) fail(ErrorCode::BadHeader, "header shorter than 24 bytes");
  EmbeddingFileHeader h;
  h.version = detail::get<std::uint32_t>(bytes, 4);
  if (h.version != kVersion) fail(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version));
  h.dim = detail::get<std::uint32_t>(bytes, 8);
  h.count = detail::get<std::uint64_t>(bytes, 12);
  h.flags = detail::get<std::uint32_t>(bytes, 20);
  if (h.dim == 0) fail(ErrorCode::BadHeader, "dim is 0");
  if (h.flags & ~kFlagNormalized) fail(ErrorCode::BadHeader, "unknown flag bits set");
  if (h.count > (std::uint64_t{1} << 40) / h.dim) fail(ErrorCode::BadHeader, "count*dim overflows");
  return h;
}

inline std::string encode_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += json{{"row", i}, {"id", ids[i]}}.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> decode_ids(std::string_view text, std::uint64_t count) {
  std::vector<std::string> ids;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::IdRowMismatch, std::string("bad sidecar line: ") + e.what());
    }
    if (!j.is_object() || !j.contains("row") || !j.contains("id") || !j["row"].is_number_unsigned() ||
        !j["id"].is_string())
      fail(ErrorCode::IdRowMismatch, "sidecar line needs {\"row\": int, \"id\": string}");
    if (j["row"].get<std::uint64_t>() != ids.size())
      fail(ErrorCode::IdRowMismatch, "sidecar rows must be dense and ordered; expected row " +
                                         std::to_string(ids.size()));
    ids.push_back(j["id"].get<std::string>());
  }
  if (ids.size() != count)
    fail(ErrorCode::IdRowMismatch,
         "sidecar has " + std::to_string(ids.size()) + " ids for " + std::to_string(count) + " rows");
  return ids;
}

inline void write_embeddings(const EmbeddingMatrix& m, const fs::path& path) {
  EmbeddingFileHeader h;
  h.dim = static_cast<std::uint32_t>(m.dim());
  h.count = m.count();
  h.flags = m.normalized() ? kFlagNormalized : 0u;
  std::string bytes = encode_header(h);
  const auto data = m.data();
  bytes.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  write_file_atomic(sidecar_path(path), encode_ids(m.ids()));
  write_file_atomic(path, bytes);
}

/// Header and payload length are validated before rows are touched; the
/// matrix constructor then checks finiteness and unit length.
inline EmbeddingMatrix read_embeddings(const fs::path& path) {
  const std::string bytes = read_file(path);
  const EmbeddingFileHeader h = decode_header(bytes);
  const std::uint64_t expected = kHeaderBytes + h.payload_bytes();
  if (bytes.size() < expected)
    fail(ErrorCode::TruncatedPayload, "'" + path.string() + "' has " + std::to_string(bytes.size()) +
                                          " bytes, header promises " + std::to_string(expected));
  if (bytes.size() > expected) fail(ErrorCode::TrailingData, "'" + path.string() + "' has trailing bytes");
  auto ids = decode_ids(read_file(sidecar_path(path)), h.count);
  std::vector<float> rows(h.count * h.dim);
  std::memcpy(rows.data(), bytes.data() + kHeaderBytes, h.payload_bytes());
  return EmbeddingMatrix(h.dim, std::move(rows), std::move(ids), h.normalized());
}

// ---- bias JSON ----

inline double round9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline json bias_to_json(const BiasEstimate& b, const std::string& created_at_utc) {
  json vec = json::array();
  for (double x : b.mu) vec.push_back(round9(x));
  return json{{"modelId", b.model_id},
              {"dim", b.dim()},
              {"count", b.sample_count},
              {"norm", round9(b.norm)},
              {"vector", std::move(vec)},
              {"corpusFingerprint", b.corpus_fingerprint.hex()},
              {"createdAtUtc", created_at_utc}};
}

namespace detail {

inline const json& field(const json& j, const char* name, json::value_t type, const char* what) {
  if (!j.is_object() || !j.contains(name)) fail(ErrorCode::SchemaError, std::string(what) + " missing '" + name + "'");
  const json& v = j.at(name);
  const bool ok = type == json::value_t::number_float ? v.is_number()
                  : type == json::value_t::number_unsigned ? v.is_number_unsigned()
                                                            : v.type() == type;
  if (!ok) fail(ErrorCode::SchemaError, std::string(what) + " field '" + name + "' has the wrong type");
  return v;
}

}  // namespace detail

inline BiasEstimate bias_from_json(const json& j) {
  using vt = json::value_t;
  const auto model = detail::field(j, "modelId", vt::string, "bias").get<std::string>();
  const auto dim = detail::field(j, "dim", vt::number_unsigned, "bias").get<std::uint64_t>();
  const auto count = detail::field(j, "count", vt::number_unsigned, "bias").get<std::uint64_t>();
  const double norm = detail::field(j, "norm", vt::number_float, "bias").get<double>();
  const auto& vec = detail::field(j, "vector", vt::array, "bias");
  const auto fp_hex = detail::field(j, "corpusFingerprint", vt::string, "bias").get<std::string>();
  detail::field(j, "createdAtUtc", vt::string, "bias");

  if (vec.size() != dim || dim == 0) fail(ErrorCode::SchemaError, "bias vector length does not match dim");
  if (count == 0) fail(ErrorCode::SchemaError, "bias count must be positive");
  std::vector<double> mu;
  mu.reserve(dim);
  for (const auto& x : vec) {
    if (!x.is_number()) fail(ErrorCode::SchemaError, "bias vector holds a non-number");
    mu.push_back(x.get<double>());
  }
  if (!all_finite(std::span<const double>(mu))) fail(ErrorCode::NonFinite, "bias vector is not finite");
  const double recomputed = norm2(std::span<const double>(mu));
  if (std::abs(recomputed - norm) > 1e-6)
    fail(ErrorCode::NormMismatch, "stored norm " + std::to_string(norm) + " but vector norm is " +
                                      std::to_string(recomputed));
  Fingerprint fp;
  try {
    fp = Fingerprint::from_hex(fp_hex);
  } catch (const Error& e) {
    fail(ErrorCode::SchemaError, std::string("bad corpusFingerprint: ") + e.what());
  }
  return BiasEstimate::from_mean(std::move(mu), count, std::move(fp), model);
}

inline void write_bias(const BiasEstimate& b, const fs::path& path, const std::string& created_at_utc) {
  write_file_atomic(path, bias_to_json(b, created_at_utc).dump(2) + "\n");
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, what + " is not valid JSON: " + e.what());
  }
}

inline BiasEstimate read_bias(const fs::path& path) {
  return bias_from_json(parse_json(read_file(path), "'" + path.string() + "'"));
}

// ---- task datasets ----

/// Characters outside [A-Za-z0-9._-] become '_'.
inline std::string safe_name(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  return out;
}

namespace detail {

inline json pairs_to_json(const std::vector<IndexPair>& pairs) {
  json a = json::array();
  for (const auto& [i, j] : pairs) a.push_back({i, j});
  return a;
}

inline std::vector<IndexPair> pairs_from_json(const json& a) {
  std::vector<IndexPair> out;
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned())
      fail(ErrorCode::SchemaError, "pairs must be [[i, j], ...] with non-negative integers");
    out.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
  }
  return out;
}

template <typename T>
std::vector<T> list(const json& payload, const char* name) {
  const auto& v = field(payload, name, json::value_t::array, "payload");
  try {
    return v.get<std::vector<T>>();
  } catch (const json::exception&) {
    fail(ErrorCode::SchemaError, std::string("payload field '") + name + "' has the wrong element type");
  }
}

}  // namespace detail

/// Writes <task>.task.json plus one EMB1 file per matrix into `dir`.
/// Returns the JSON path.
inline fs::path write_task_dataset(const TaskDataset& ds, const fs::path& dir) {
  const std::string base = safe_name(ds.task_id);
  json payload = json::object();
  auto emb = [&](const char* role, const EmbeddingMatrix& m) {
    const std::string name = base + "." + role + ".emb";
    write_embeddings(m, dir / name);
    payload[role] = name;
  };
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, RetrievalPayload>) {
          emb("queries", p.queries);
          emb("corpus", p.corpus);
          payload["qrels"] = p.qrels;
          payload["k"] = p.k;
        } else if constexpr (std::is_same_v<P, ClassificationPayload>) {
          emb("train", p.train);
          emb("test", p.test);
          payload["trainLabels"] = p.train_labels;
          payload["testLabels"] = p.test_labels;
          payload["k"] = p.k;
        } else if constexpr (std::is_same_v<P, StsPayload>) {
          emb("items", p.items);
          payload["pairs"] = detail::pairs_to_json(p.pairs);
          json gold = json::array();
          for (double g : p.gold) gold.push_back(round9(g));
          payload["gold"] = std::move(gold);
        } else if constexpr (std::is_same_v<P, ClusteringPayload>) {
          emb("items", p.items);
          payload["labels"] = p.labels;
          payload["restarts"] = p.restarts;
          if (p.k) payload["k"] = *p.k;
        } else if constexpr (std::is_same_v<P, PairClassificationPayload>) {
          emb("items", p.items);
          payload["pairs"] = detail::pairs_to_json(p.pairs);
          payload["labels"] = std::vector<bool>(p.labels);
        } else {
          emb("left", p.left);
          emb("right", p.right);
          json gold = json::array();
          for (const auto& [l, r] : p.gold) gold.push_back({l, r});
          payload["gold"] = std::move(gold);
        }
      },
      ds.payload);
  json j{{"taskId", ds.task_id}, {"taskType", to_string(ds.type())}, {"payload", std::move(payload)}};
  if (!ds.source_fingerprint.empty()) j["sourceFingerprint"] = ds.source_fingerprint.hex();
  const fs::path out = dir / (base + ".task.json");
  write_file_atomic(out, j.dump(2) + "\n");
  return out;
}

/// Embedding paths in the payload are relative to the JSON file.
inline TaskDataset read_task_dataset(const fs::path& path) {
  using vt = json::value_t;
  const json j = parse_json(read_file(path), "'" + path.string() + "'");
  TaskDataset ds;
  ds.task_id = detail::field(j, "taskId", vt::string, "task").get<std::string>();
  const auto type = parse_task_type(detail::field(j, "taskType", vt::string, "task").get<std::string>());
  const json& p = detail::field(j, "payload", vt::object, "task");
  if (j.contains("sourceFingerprint")) {
    try {
      ds.source_fingerprint = Fingerprint::from_hex(j["sourceFingerprint"].get<std::string>());
    } catch (const std::exception& e) {
      fail(ErrorCode::SchemaError, std::string("bad sourceFingerprint: ") + e.what());
    }
  }
  const fs::path dir = path.parent_path();
  auto emb = [&](const char* role) {
    return read_embeddings(dir / detail::field(p, role, vt::string, "payload").get<std::string>());
  };
  auto size_or = [&](const char* name, std::size_t def) {
    return p.contains(name) ? detail::field(p, name, vt::number_unsigned, "payload").get<std::size_t>() : def;
  };
  switch (type) {
    case TaskType::Retrieval: {
      RetrievalPayload r{emb("queries"), emb("corpus"), {}, size_or("k", 10)};
      try {
        r.qrels = detail::field(p, "qrels", vt::object, "payload").get<Qrels>();
      } catch (const json::exception&) {
        fail(ErrorCode::SchemaError, "qrels must map query id -> {doc id: grade}");
      }
      ds.payload = std::move(r);
      break;
    }
    case TaskType::Classification:
      ds.payload = ClassificationPayload{emb("train"), detail::list<std::string>(p, "trainLabels"), emb("test"),
                                         detail::list<std::string>(p, "testLabels"), size_or("k", 10)};
      break;
    case TaskType::Sts:
      ds.payload = StsPayload{emb("items"), detail::pairs_from_json(detail::field(p, "pairs", vt::array, "payload")),
                              detail::list<double>(p, "gold")};
      break;
    case TaskType::Clustering:
      ds.payload = ClusteringPayload{emb("items"), detail::list<std::string>(p, "labels"), size_or("restarts", 5),
                                     p.contains("k") ? std::optional<std::size_t>(size_or("k", 0)) : std::nullopt};
      break;
    case TaskType::PairClassification: {
      const auto labels = detail::list<bool>(p, "labels");
      ds.payload = PairClassificationPayload{
          emb("items"), detail::pairs_from_json(detail::field(p, "pairs", vt::array, "payload")),
          std::vector<bool>(labels.begin(), labels.end())};
      break;
    }
    case TaskType::Bitext: {
      BitextPayload b{emb("left"), emb("right"), {}};
      for (const auto& g : detail::field(p, "gold", vt::array, "payload")) {
        if (!g.is_array() || g.size() != 2 || !g[0].is_string() || !g[1].is_string())
          fail(ErrorCode::SchemaError, "bitext gold must be [[left id, right id], ...]");
        b.gold.emplace_back(g[0].get<std::string>(), g[1].get<std::string>());
      }
      ds.payload = std::move(b);
      break;
    }
  }
  ds.validate();
  return ds;
}

// ---- run records ----

inline json record_to_json(const RunRecord& r, bool include_timing = true) {
  json j{{"taskId", r.task_id},
         {"taskType", to_string(r.task_type)},
         {"modelId", r.model_id},
         {"method", to_string(r.method)},
         {"status", r.ok() ? "ok" : "failed"},
         {"error", r.error},
         {"metric", r.score.metric_name},
         {"value", r.score.value},
         {"sampleSize", r.score.sample_size},
         {"sigma", r.score.sigma},
         {"droppedRows", r.dropped_rows},
         {"biasFingerprint", r.bias_fingerprint.hex()}};
  if (include_timing) j["wallClockMs"] = r.wall_clock_ms;
  return j;
}

inline RunRecord record_from_json(const json& j) {
  using vt = json::value_t;
  RunRecord r;
  r.task_id = detail::field(j, "taskId", vt::string, "run record").get<std::string>();
  r.task_type = parse_task_type(detail::field(j, "taskType", vt::string, "run record").get<std::string>());
  r.model_id = detail::field(j, "modelId", vt::string, "run record").get<std::string>();
  try {
    r.method = parse_method(detail::field(j, "method", vt::string, "run record").get<std::string>());
  } catch (const Error& e) {
    fail(ErrorCode::SchemaError, e.what());
  }
  const auto status = detail::field(j, "status", vt::string, "run record").get<std::string>();
  if (status != "ok" && status != "failed") fail(ErrorCode::SchemaError, "status must be ok|failed");
  r.status = status == "ok" ? RunStatus::Ok : RunStatus::Failed;
  r.error = detail::field(j, "error", vt::string, "run record").get<std::string>();
  r.score.metric_name = detail::field(j, "metric", vt::string, "run record").get<std::string>();
  r.score.value = detail::field(j, "value", vt::number_float, "run record").get<double>();
  r.score.sample_size = detail::field(j, "sampleSize", vt::number_unsigned, "run record").get<std::uint64_t>();
  r.score.sigma = detail::field(j, "sigma", vt::number_float, "run record").get<double>();
  r.dropped_rows = detail::field(j, "droppedRows", vt::number_unsigned, "run record").get<std::uint64_t>();
  if (j.contains("wallClockMs")) r.wall_clock_ms = j["wallClockMs"].get<std::int64_t>();
  const auto fp = detail::field(j, "biasFingerprint", vt::string, "run record").get<std::string>();
  if (!fp.empty()) r.bias_fingerprint = Fingerprint::from_hex(fp);
  return r;
}

inline std::string encode_records(const std::vector<RunRecord>& records, bool include_timing = true) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r, include_timing).dump() + "\n";
  return out;
}

inline std::vector<RunRecord> decode_records(std::string_view text) {
  std::vector<RunRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_json(parse_json(line, "run record line")));
  return out;
}

inline void write_records(const std::vector<RunRecord>& records, const fs::path& path, bool include_timing = true) {
  write_file_atomic(path, encode_records(records, include_timing));
}

inline std::vector<RunRecord> read_records(const fs::path& path) { return decode_records(read_file(path)); }

}  // namespace embrenorm::store
