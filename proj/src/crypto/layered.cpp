#include "nusa/crypto/layered.hpp"

#include <algorithm>

#include <openssl/crypto.h>

#include "nusa/error.hpp"

namespace nusa::crypto {
namespace {

constexpr std::size_t kLayerWireSize = kKeyIdSize + kNonceSize;

} // namespace

PatientIdentifier PatientIdentifier::from_hex(std::string_view hex) {
    return PatientIdentifier{fixed_from_hex<kPidSize>(hex)};
}

PatientIdentifier generate_pid() { return PatientIdentifier{random_array<kPidSize>()}; }

KeyId derive_key_id(const KeyBytes& key_bytes) {
    const Digest d = sha256(key_bytes);
    KeyId id{};
    std::copy_n(d.begin(), kKeyIdSize, id.begin());
    return id;
}

SecretKey::SecretKey(const KeyBytes& key_bytes) : key_id_(derive_key_id(key_bytes)), key_bytes_(key_bytes) {}

SecretKey::~SecretKey() { OPENSSL_cleanse(key_bytes_.data(), key_bytes_.size()); }

SecretKey SecretKey::from_bytes(const KeyBytes& key_bytes) { return SecretKey(key_bytes); }

SecretKey generate_key() {
    KeyBytes raw = random_array<kKeySize>();
    SecretKey key = SecretKey::from_bytes(raw);
    OPENSSL_cleanse(raw.data(), raw.size());
    return key;
}

LayeredCiphertext LayeredCiphertext::plain(const PatientIdentifier& pid) { return LayeredCiphertext{pid.bytes, {}}; }

bool LayeredCiphertext::has_layer(const KeyId& key_id) const noexcept {
    return std::any_of(layers.begin(), layers.end(), [&](const EncryptionLayer& l) { return l.key_id == key_id; });
}

PatientIdentifier LayeredCiphertext::to_pid() const {
    if (!layers.empty()) fail(ErrorCode::InvalidInput, "ciphertext still carries encryption layers");
    return PatientIdentifier{body};
}

Bytes LayeredCiphertext::serialize() const {
    Bytes out;
    out.reserve(kPidSize + 1 + layers.size() * kLayerWireSize);
    out.insert(out.end(), body.begin(), body.end());
    out.push_back(static_cast<std::uint8_t>(layers.size()));
    for (const auto& layer : layers) {
        out.insert(out.end(), layer.key_id.begin(), layer.key_id.end());
        out.insert(out.end(), layer.nonce.begin(), layer.nonce.end());
    }
    return out;
}

LayeredCiphertext LayeredCiphertext::parse(ByteView wire) {
    if (wire.size() < kPidSize + 1) fail(ErrorCode::InvalidInput, "layered ciphertext too short");
    const std::size_t count = wire[kPidSize];
    if (wire.size() != kPidSize + 1 + count * kLayerWireSize) {
        fail(ErrorCode::InvalidInput, "layered ciphertext length does not match layer count");
    }
    LayeredCiphertext ct;
    std::copy_n(wire.begin(), kPidSize, ct.body.begin());
    auto cursor = wire.begin() + kPidSize + 1;
    for (std::size_t i = 0; i < count; ++i) {
        EncryptionLayer layer;
        std::copy_n(cursor, kKeyIdSize, layer.key_id.begin());
        cursor += kKeyIdSize;
        std::copy_n(cursor, kNonceSize, layer.nonce.begin());
        cursor += kNonceSize;
        if (ct.has_layer(layer.key_id)) fail(ErrorCode::InvalidInput, "duplicate key id in layer list");
        ct.layers.push_back(layer);
    }
    return ct;
}

bool equivalent(const LayeredCiphertext& a, const LayeredCiphertext& b) {
    if (a.body != b.body || a.layers.size() != b.layers.size()) return false;
    return std::all_of(a.layers.begin(), a.layers.end(), [&](const EncryptionLayer& l) {
        return std::find(b.layers.begin(), b.layers.end(), l) != b.layers.end();
    });
}

LayeredCiphertext add_layer(const LayeredCiphertext& ct, const SecretKey& key) {
    return add_layer(ct, key, random_array<kNonceSize>());
}

LayeredCiphertext add_layer(const LayeredCiphertext& ct, const SecretKey& key, const Nonce& nonce) {
    if (ct.has_layer(key.key_id())) fail(ErrorCode::DuplicateLayer, "key already applied to this ciphertext");
    if (ct.layers.size() >= 255) fail(ErrorCode::InvalidInput, "too many layers");
    LayeredCiphertext out = ct;
    ctr_xor(key.material(), nonce, out.body);
    out.layers.push_back(EncryptionLayer{key.key_id(), nonce});
    return out;
}

LayeredCiphertext remove_layer(const LayeredCiphertext& ct, const SecretKey& key) {
    const auto it = std::find_if(ct.layers.begin(), ct.layers.end(),
                                 [&](const EncryptionLayer& l) { return l.key_id == key.key_id(); });
    if (it == ct.layers.end()) fail(ErrorCode::LayerNotFound, "no layer for key " + to_hex(key.key_id()));
    LayeredCiphertext out = ct;
    ctr_xor(key.material(), it->nonce, out.body);
    out.layers.erase(out.layers.begin() + (it - ct.layers.begin()));
    return out;
}

void to_json(nlohmann::json& j, const LayeredCiphertext& ct) { j = ct.hex(); }

void from_json(const nlohmann::json& j, LayeredCiphertext& ct) {
    ct = LayeredCiphertext::from_hex(j.get<std::string>());
}

void to_json(nlohmann::json& j, const PatientIdentifier& pid) { j = pid.hex(); }

void from_json(const nlohmann::json& j, PatientIdentifier& pid) {
    pid = PatientIdentifier::from_hex(j.get<std::string>());
}

} // namespace nusa::crypto
