#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "embrenorm/error.hpp"
#include "embrenorm/hash.hpp"
#include "embrenorm/rng.hpp"
#include "embrenorm/store.hpp"

namespace embrenorm::corpus {

/// Number of Unicode scalar values in valid UTF-8, or nullopt when the
/// bytes are not valid UTF-8 (overlongs, surrogates and > U+10FFFF rejected).
inline std::optional<std::size_t> utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size();) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      return std::nullopt;
    }
    if (i + len > s.size()) return std::nullopt;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) return std::nullopt;
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
    i += len;
    ++n;
  }
  return n;
}

inline bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Splits after '.', '!' or '?' when whitespace follows, and at newlines.
/// Fragments are trimmed and empty ones dropped.
inline std::vector<std::string> segment(std::string_view text) {
  if (!utf8_length(text)) fail(ErrorCode::InvalidEncoding, "input is not valid UTF-8");
  std::vector<std::string> out;
  std::size_t start = 0;
  auto cut = [&](std::size_t end) {
    const auto frag = trim(text.substr(start, end - start));
    if (!frag.empty()) out.emplace_back(frag);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      cut(i);
      start = i + 1;
    } else if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() && is_space(text[i + 1])) {
      cut(i + 1);
    }
  }
  cut(text.size());
  return out;
}

struct SampleOptions {
  std::size_t size = 100000;
  std::size_t min_len = 64;
  std::size_t max_len = 512;
  std::uint64_t seed = 42;
};

struct CorpusSample {
  std::vector<std::string> sentences;  // in input order
  std::string source_name;
  std::uint64_t seed = 0;
  Fingerprint fingerprint;
  std::size_t input_count = 0;
  std::size_t in_bounds_count = 0;
  std::size_t unique_count = 0;
};

/// Length filter (inclusive, in scalar values), first-occurrence dedup, then
/// reservoir sampling (Algorithm R) over the survivors in stream order.
inline CorpusSample sample(const std::vector<std::string>& sentences, const SampleOptions& opt,
                           std::string source_name = {}) {
  if (opt.size < 1) fail(ErrorCode::InvalidConfig, "sample size must be >= 1");
  if (opt.min_len > opt.max_len) fail(ErrorCode::InvalidConfig, "minLen > maxLen");
  CorpusSample out;
  out.source_name = std::move(source_name);
  out.seed = opt.seed;
  out.input_count = sentences.size();

  std::unordered_set<std::string_view> seen;
  std::vector<std::size_t> reservoir;
  CounterRng rng(opt.seed, 0);
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto len = utf8_length(sentences[i]);
    if (!len) fail(ErrorCode::InvalidEncoding, "sentence " + std::to_string(i) + " is not valid UTF-8");
    if (*len < opt.min_len || *len > opt.max_len) continue;
    ++out.in_bounds_count;
    if (!seen.insert(sentences[i]).second) continue;
    if (reservoir.size() < opt.size) {
      reservoir.push_back(i);
    } else {
      const auto j = rng.below(survivors + 1);
      if (j < opt.size) reservoir[j] = i;
    }
    ++survivors;
  }
  out.unique_count = survivors;
  std::sort(reservoir.begin(), reservoir.end());
  for (auto i : reservoir) out.sentences.push_back(sentences[i]);
  out.fingerprint = fingerprint_of_set(out.sentences);
  return out;
}

/// Reads plain text (segmented whole) or, for .jsonl files, one {"text": ...}
/// object per line with each text segmented separately.
inline std::vector<std::string> load_sentences(const std::filesystem::path& path) {
  const std::string raw = store::read_file(path);
  if (path.extension() != ".jsonl") return segment(raw);
  std::vector<std::string> out;
  std::size_t start = 0, line_no = 0;
  while (start < raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    const std::string_view line = trim(std::string_view(raw).substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      if (std::string_view(e.what()).find("invalid UTF-8") != std::string_view::npos ||
          !utf8_length(line))
        fail(ErrorCode::InvalidEncoding, "line " + std::to_string(line_no) + " is not valid UTF-8");
      fail(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      fail(ErrorCode::SchemaError, "line " + std::to_string(line_no) + " lacks a string 'text' field");
    for (auto& s : segment(j["text"].get<std::string>())) out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json manifest(const CorpusSample& s, const SampleOptions& opt) {
  return {{"source", s.source_name},         {"seed", s.seed},
          {"requested", opt.size},           {"minLen", opt.min_len},
          {"maxLen", opt.max_len},           {"inputCount", s.input_count},
          {"inBoundsCount", s.in_bounds_count}, {"uniqueCount", s.unique_count},
          {"sampleCount", s.sentences.size()}, {"fingerprint", s.fingerprint.hex()}};
}

}  // namespace embrenorm::corpus
