#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nusa/bytes.hpp"
#include "nusa/crypto/primitives.hpp"

namespace nusa::crypto {

inline constexpr std::size_t kPidSize = 16;
inline constexpr std::size_t kKeyIdSize = 8;

using KeyId = std::array<std::uint8_t, kKeyIdSize>;
using PidBytes = std::array<std::uint8_t, kPidSize>;

/// Random pseudonym linking registry grants to medical records.
struct PatientIdentifier {
    PidBytes bytes{};

    std::string hex() const { return to_hex(bytes); }
    static PatientIdentifier from_hex(std::string_view hex);

    friend auto operator<=>(const PatientIdentifier&, const PatientIdentifier&) = default;
};

PatientIdentifier generate_pid();

KeyId derive_key_id(const KeyBytes& key_bytes);

/// Symmetric key owned by one principal. The key id is public; the key bytes
/// have no JSON conversion and are wiped on destruction.
class SecretKey {
public:
    static SecretKey from_bytes(const KeyBytes& key_bytes);

    SecretKey(const SecretKey&) = default;
    SecretKey& operator=(const SecretKey&) = default;
    ~SecretKey();

    const KeyId& key_id() const noexcept { return key_id_; }
    const KeyBytes& material() const noexcept { return key_bytes_; }

private:
    explicit SecretKey(const KeyBytes& key_bytes);

    KeyId key_id_{};
    KeyBytes key_bytes_{};
};

SecretKey generate_key();

struct EncryptionLayer {
    KeyId key_id{};
    Nonce nonce{};

    friend bool operator==(const EncryptionLayer&, const EncryptionLayer&) = default;
};

/// A PID under zero or more XOR-keystream layers. Layer order is history only;
/// removal works in any order.
struct LayeredCiphertext {
    PidBytes body{};
    std::vector<EncryptionLayer> layers;

    static LayeredCiphertext plain(const PatientIdentifier& pid);

    bool has_layer(const KeyId& key_id) const noexcept;
    std::size_t layer_count() const noexcept { return layers.size(); }

    /// Only valid with no layers left; throws InvalidInput otherwise.
    PatientIdentifier to_pid() const;

    /// body || count (1 byte) || per layer: key_id (8) || nonce (16)
    Bytes serialize() const;
    static LayeredCiphertext parse(ByteView wire);

    std::string hex() const { return to_hex(serialize()); }
    static LayeredCiphertext from_hex(std::string_view hex) { return parse(nusa::from_hex(hex)); }

    friend bool operator==(const LayeredCiphertext&, const LayeredCiphertext&) = default;
};

/// True when both carry the same body and the same set of layers.
bool equivalent(const LayeredCiphertext& a, const LayeredCiphertext& b);

/// Fresh random nonce. Throws DuplicateLayer if `key` already has a layer.
LayeredCiphertext add_layer(const LayeredCiphertext& ct, const SecretKey& key);
LayeredCiphertext add_layer(const LayeredCiphertext& ct, const SecretKey& key, const Nonce& nonce);

/// Throws LayerNotFound. A key whose id matches but whose bytes differ yields a
/// garbage body, which is only detectable downstream.
LayeredCiphertext remove_layer(const LayeredCiphertext& ct, const SecretKey& key);

void to_json(nlohmann::json& j, const LayeredCiphertext& ct);
void from_json(const nlohmann::json& j, LayeredCiphertext& ct);
void to_json(nlohmann::json& j, const PatientIdentifier& pid);
void from_json(const nlohmann::json& j, PatientIdentifier& pid);

} // namespace nusa::crypto
