#include "nusa/crypto/obfuscation.hpp"

#include <openssl/sha.h>

#include "nusa/error.hpp"

namespace nusa::crypto {

ObfuscationKey derive_obfuscation_key(std::string_view personal, ByteView salt, std::uint32_t iterations) {
    if (personal.empty()) fail(ErrorCode::InvalidInput, "empty personal-data string");
    if (iterations == 0) fail(ErrorCode::InvalidInput, "iterations must be positive");

    ObfuscationKey key;
    key.iterations = iterations;

    Bytes seed(salt.begin(), salt.end());
    seed.insert(seed.end(), personal.begin(), personal.end());
    key.key_bytes = sha256(seed);

    for (std::uint32_t i = 1; i < iterations; ++i) {
        SHA256(key.key_bytes.data(), key.key_bytes.size(), key.key_bytes.data());
    }
    return key;
}

ObfuscatedBlob obfuscate(ByteView plaintext, const ObfuscationKey& key, std::vector<std::string> keywords) {
    return obfuscate(plaintext, key, std::move(keywords), random_array<kNonceSize>());
}

ObfuscatedBlob obfuscate(ByteView plaintext, const ObfuscationKey& key, std::vector<std::string> keywords,
                         const Nonce& nonce) {
    if (plaintext.empty()) fail(ErrorCode::InvalidInput, "nothing to obfuscate");
    ObfuscatedBlob blob;
    blob.nonce = nonce;
    blob.ciphertext.assign(plaintext.begin(), plaintext.end());
    ctr_xor(key.key_bytes, nonce, blob.ciphertext);
    blob.keyword_index = std::move(keywords);
    return blob;
}

Bytes deobfuscate(const ObfuscatedBlob& blob, const ObfuscationKey& key) {
    if (blob.ciphertext.empty()) fail(ErrorCode::InvalidInput, "empty obfuscated blob");
    Bytes out = blob.ciphertext;
    ctr_xor(key.key_bytes, blob.nonce, out);
    return out;
}

void to_json(nlohmann::json& j, const ObfuscatedBlob& blob) {
    j = {{"nonce", to_hex(blob.nonce)}, {"ciphertext", to_hex(blob.ciphertext)}, {"keywords", blob.keyword_index}};
}

void from_json(const nlohmann::json& j, ObfuscatedBlob& blob) {
    blob.nonce = fixed_from_hex<kNonceSize>(j.at("nonce").get<std::string>());
    blob.ciphertext = from_hex(j.at("ciphertext").get<std::string>());
    if (blob.ciphertext.empty()) fail(ErrorCode::InvalidInput, "empty obfuscated blob");
    blob.keyword_index = j.value("keywords", std::vector<std::string>{});
}

} // namespace nusa::crypto
