#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embrenorm/error.hpp"

namespace embrenorm {

/// 64-hex-digit SHA-256 content hash identifying a corpus or dataset.
class Fingerprint {
 public:
  Fingerprint() = default;

  static bool is_valid_hex(std::string_view s) {
    return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
             return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
  }

  static Fingerprint from_hex(std::string_view hex) {
    if (!is_valid_hex(hex)) fail(ErrorCode::SchemaError, "fingerprint must be 64 lowercase hex digits");
    Fingerprint f;
    f.hex_ = std::string(hex);
    return f;
  }

  const std::string& hex() const noexcept { return hex_; }
  bool empty() const noexcept { return hex_.empty(); }

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

 private:
  std::string hex_;
};

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      fail(ErrorCode::IoError, "SHA-256 init failed");
  }

  Sha256& update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
    return *this;
  }
  Sha256& update(std::string_view s) {
    return update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  /// Writes the length, then the bytes.
  Sha256& update_field(std::string_view s) {
    update_u64(s.size());
    return update(s);
  }
  Sha256& update_u64(std::uint64_t v) {
    std::array<std::uint8_t, 8> le{};
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return update(le);
  }

  Fingerprint finish() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      hex.push_back(kHex[md[i] >> 4]);
      hex.push_back(kHex[md[i] & 0xF]);
    }
    return Fingerprint::from_hex(hex);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

/// Order-independent: the set is sorted and deduplicated before hashing.
inline Fingerprint fingerprint_of_set(std::vector<std::string> items) {
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  Sha256 h;
  h.update_field("embrenorm/set/v1");
  h.update_u64(items.size());
  for (const auto& s : items) h.update_field(s);
  return h.finish();
}

}  // namespace embrenorm
