#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nusa/crypto/layered.hpp"

namespace nusa::terminal {

/// A terminal's secret keys: the current key plus keys retired by voluntary
/// rotation. Saved files are encrypted under a passphrase-derived key.
class KeyStore {
public:
    explicit KeyStore(crypto::SecretKey current);
    static KeyStore generate();

    const crypto::SecretKey& current() const noexcept { return current_; }
    const std::vector<crypto::SecretKey>& previous() const noexcept { return previous_; }

    /// Key with the given id, current or previous.
    const crypto::SecretKey* find(const crypto::KeyId& key_id) const noexcept;

    /// Installs `next` as the current key. A lost key is dropped, a rotated one kept.
    void replace_current(crypto::SecretKey next, bool keep_old);

    void save(const std::filesystem::path& file, const std::string& passphrase,
              std::uint32_t iterations = 1u << 14) const;
    /// Throws WrongPassphrase when the decrypted keys do not match their stored ids.
    static KeyStore load(const std::filesystem::path& file, const std::string& passphrase);

private:
    crypto::SecretKey current_;
    std::vector<crypto::SecretKey> previous_;
};

} // namespace nusa::terminal
