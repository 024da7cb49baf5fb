#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nusa/bytes.hpp"
#include "nusa/crypto/primitives.hpp"

namespace nusa::crypto {

/// Default key-stretching work factor (iterations of SHA-256).
inline constexpr std::uint32_t kDefaultWorkFactor = 1u << 16;

struct ObfuscationKey {
    KeyBytes key_bytes{};
    std::uint32_t iterations = 0;
};

/// key(1) = SHA-256(salt || personal), key(n+1) = SHA-256(key(n)).
/// Throws InvalidInput on an empty personal string or zero iterations.
ObfuscationKey derive_obfuscation_key(std::string_view personal, ByteView salt,
                                      std::uint32_t iterations = kDefaultWorkFactor);

struct ObfuscatedBlob {
    Nonce nonce{};
    Bytes ciphertext;
    std::vector<std::string> keyword_index;  // stored verbatim, in clear

    friend bool operator==(const ObfuscatedBlob&, const ObfuscatedBlob&) = default;
};

ObfuscatedBlob obfuscate(ByteView plaintext, const ObfuscationKey& key, std::vector<std::string> keywords);
ObfuscatedBlob obfuscate(ByteView plaintext, const ObfuscationKey& key, std::vector<std::string> keywords,
                         const Nonce& nonce);

/// No integrity check: a wrong key returns garbage of the right length.
Bytes deobfuscate(const ObfuscatedBlob& blob, const ObfuscationKey& key);

void to_json(nlohmann::json& j, const ObfuscatedBlob& blob);
void from_json(const nlohmann::json& j, ObfuscatedBlob& blob);

} // namespace nusa::crypto
