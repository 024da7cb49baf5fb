#include "nusa/terminal/keystore.hpp"

#include <fstream>

#include <json.hpp>

#include "nusa/crypto/obfuscation.hpp"
#include "nusa/error.hpp"

namespace nusa::terminal {

using nlohmann::json;

KeyStore::KeyStore(crypto::SecretKey current) : current_(std::move(current)) {}

KeyStore KeyStore::generate() { return KeyStore(crypto::generate_key()); }

const crypto::SecretKey* KeyStore::find(const crypto::KeyId& key_id) const noexcept {
    if (current_.key_id() == key_id) return &current_;
    for (const auto& k : previous_) {
        if (k.key_id() == key_id) return &k;
    }
    return nullptr;
}

void KeyStore::replace_current(crypto::SecretKey next, bool keep_old) {
    if (keep_old) previous_.push_back(current_);
    current_ = std::move(next);
}

void KeyStore::save(const std::filesystem::path& file, const std::string& passphrase, std::uint32_t iterations) const {
    if (passphrase.empty()) fail(ErrorCode::InvalidInput, "empty passphrase");
    const auto salt = crypto::random_array<16>();
    const auto kek = crypto::derive_obfuscation_key(passphrase, salt, iterations);
    json keys = json::array();
    auto seal = [&](const crypto::SecretKey& k) {
        const auto nonce = crypto::random_array<crypto::kNonceSize>();
        Bytes sealed(k.material().begin(), k.material().end());
        crypto::ctr_xor(kek.key_bytes, nonce, sealed);
        keys.push_back({{"key_id", to_hex(k.key_id())}, {"nonce", to_hex(nonce)}, {"sealed", to_hex(sealed)}});
    };
    seal(current_);
    for (const auto& k : previous_) seal(k);

    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write key store " + file.string());
    out << json{{"version", 1}, {"salt", to_hex(salt)}, {"iterations", iterations}, {"keys", keys}}.dump() << '\n';
}

KeyStore KeyStore::load(const std::filesystem::path& file, const std::string& passphrase) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoError, "cannot read key store " + file.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }
    const auto salt = from_hex(doc.at("salt").get<std::string>());
    const auto kek = crypto::derive_obfuscation_key(passphrase, salt, doc.at("iterations").get<std::uint32_t>());

    std::vector<crypto::SecretKey> keys;
    for (const auto& entry : doc.at("keys")) {
        auto material = fixed_from_hex<crypto::kKeySize>(entry.at("sealed").get<std::string>());
        crypto::ctr_xor(kek.key_bytes, fixed_from_hex<crypto::kNonceSize>(entry.at("nonce").get<std::string>()),
                        material);
        auto key = crypto::SecretKey::from_bytes(material);
        if (to_hex(key.key_id()) != entry.at("key_id").get<std::string>()) {
            fail(ErrorCode::WrongPassphrase, "key store does not open with this passphrase");
        }
        keys.push_back(std::move(key));
    }
    if (keys.empty()) fail(ErrorCode::ParseError, "key store holds no keys");
    KeyStore store(keys.front());
    for (std::size_t i = 1; i < keys.size(); ++i) store.previous_.push_back(keys[i]);
    return store;
}

} // namespace nusa::terminal
