#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "nusa/bytes.hpp"

namespace nusa::crypto {

inline constexpr std::size_t kBlockSize = 16;
inline constexpr std::size_t kKeySize = 32;
inline constexpr std::size_t kNonceSize = 16;
inline constexpr std::size_t kDigestSize = 32;

using KeyBytes = std::array<std::uint8_t, kKeySize>;
using Nonce = std::array<std::uint8_t, kNonceSize>;
using Digest = std::array<std::uint8_t, kDigestSize>;

/// Fills `out` from the system CSPRNG. Throws RandomnessFailure.
void random_bytes(std::span<std::uint8_t> out);

template <std::size_t N>
std::array<std::uint8_t, N> random_array() {
    std::array<std::uint8_t, N> out{};
    random_bytes(out);
    return out;
}

Digest sha256(ByteView data);

/// Single AES-256 block encryption (the raw permutation, no mode).
std::array<std::uint8_t, kBlockSize> aes256_encrypt_block(const KeyBytes& key,
                                                          const std::array<std::uint8_t, kBlockSize>& block);

/// AES-256-CTR keystream XORed into `data` in place. The first counter block is
/// `nonce`; the low 32 bits (bytes 12..15) are incremented big-endian with
/// wrap-around, the high 96 bits never change.
void ctr_xor(const KeyBytes& key, const Nonce& nonce, std::span<std::uint8_t> data);

/// Keystream of `length` bytes (ctr_xor over zeros).
Bytes ctr_keystream(const KeyBytes& key, const Nonce& nonce, std::size_t length);

} // namespace nusa::crypto
