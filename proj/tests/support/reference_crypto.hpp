#pragma once

// Textbook AES-256 and SHA-256, written from the standards for cross-checking
// the library. Slow and unhardened; test use only.

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ref {

using Block = std::array<std::uint8_t, 16>;
using Key256 = std::array<std::uint8_t, 32>;
using Digest = std::array<std::uint8_t, 32>;

Block aes256_encrypt(const Key256& key, const Block& in);

/// Counter mode: block i = AES(key, nonce with its low 32 bits + i, big-endian).
std::vector<std::uint8_t> ctr_keystream(const Key256& key, const Block& nonce, std::size_t length);

Digest sha256(const std::vector<std::uint8_t>& message);
Digest sha256(std::string_view message);

/// Digest chain of `iterations` SHA-256 applications, the first over salt || personal.
Digest stretch(std::string_view salt, std::string_view personal, std::uint32_t iterations);

} // namespace ref
