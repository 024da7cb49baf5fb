#include "nusa/crypto/primitives.hpp"

#include <memory>

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include "nusa/error.hpp"

namespace nusa::crypto {
namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const noexcept { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

// ECB over a buffer of counter blocks; length must be a multiple of the block size.
void aes256_ecb(const KeyBytes& key, std::span<const std::uint8_t> in, std::span<std::uint8_t> out) {
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx) fail(ErrorCode::IoError, "EVP_CIPHER_CTX_new failed");
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ecb(), nullptr, key.data(), nullptr) != 1) {
        fail(ErrorCode::IoError, "AES-256 init failed");
    }
    EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
    int written = 0;
    if (EVP_EncryptUpdate(ctx.get(), out.data(), &written, in.data(), static_cast<int>(in.size())) != 1 ||
        static_cast<std::size_t>(written) != in.size()) {
        fail(ErrorCode::IoError, "AES-256 encrypt failed");
    }
}

void increment_low32(std::array<std::uint8_t, kBlockSize>& counter) noexcept {
    for (int i = 15; i >= 12; --i) {
        if (++counter[static_cast<std::size_t>(i)] != 0) break;
    }
}

} // namespace

void random_bytes(std::span<std::uint8_t> out) {
    if (out.empty()) return;
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
        fail(ErrorCode::RandomnessFailure, "RAND_bytes failed");
    }
}

Digest sha256(ByteView data) {
    Digest out{};
    SHA256(data.data(), data.size(), out.data());
    return out;
}

std::array<std::uint8_t, kBlockSize> aes256_encrypt_block(const KeyBytes& key,
                                                          const std::array<std::uint8_t, kBlockSize>& block) {
    std::array<std::uint8_t, kBlockSize> out{};
    aes256_ecb(key, block, out);
    return out;
}

void ctr_xor(const KeyBytes& key, const Nonce& nonce, std::span<std::uint8_t> data) {
    if (data.empty()) return;
    const std::size_t blocks = (data.size() + kBlockSize - 1) / kBlockSize;
    Bytes counters(blocks * kBlockSize);
    std::array<std::uint8_t, kBlockSize> counter = nonce;
    for (std::size_t b = 0; b < blocks; ++b) {
        std::copy(counter.begin(), counter.end(), counters.begin() + static_cast<std::ptrdiff_t>(b * kBlockSize));
        increment_low32(counter);
    }
    Bytes stream(counters.size());
    aes256_ecb(key, counters, stream);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] ^= stream[i];
}

Bytes ctr_keystream(const KeyBytes& key, const Nonce& nonce, std::size_t length) {
    Bytes out(length, 0);
    ctr_xor(key, nonce, out);
    return out;
}

} // namespace nusa::crypto
