#include "nusa/terminal/local_db.hpp"

namespace nusa::terminal {

using nlohmann::json;

void to_json(json& j, const LocalPatientEntry& e) {
    j = {{"identity", e.identity}, {"pid", e.pid}, {"cached", e.cached}, {"dirty", e.dirty}};
}

void from_json(const json& j, LocalPatientEntry& e) {
    e.identity = j.at("identity").get<Identity>();
    e.pid = j.at("pid").get<crypto::PatientIdentifier>();
    e.cached = j.value("cached", std::vector<als::StoreView>{});
    e.dirty = j.value("dirty", ehr::FieldMap{});
}

LocalDatabase::LocalDatabase(std::filesystem::path journal_path) {
    if (journal_path.empty()) return;
    journal_ = Journal(std::move(journal_path));
    journal_.replay([this](const json& e) {
        const auto op = e.at("op").get<std::string>();
        if (op == "put") {
            auto entry = e.at("entry").get<LocalPatientEntry>();
            const auto key = entry.identity.fiscal_code;
            entries_[key] = std::move(entry);
        } else if (op == "remove") {
            entries_.erase(e.at("fiscal_code").get<std::string>());
        }
    });
}

const LocalPatientEntry* LocalDatabase::find(const std::string& fiscal_code) const {
    const auto it = entries_.find(fiscal_code);
    return it == entries_.end() ? nullptr : &it->second;
}

const LocalPatientEntry* LocalDatabase::find(const IdentityQuery& query) const {
    for (const auto& [code, entry] : entries_) {
        if (matches(query, entry.identity)) return &entry;
    }
    return nullptr;
}

std::vector<LocalPatientEntry> LocalDatabase::entries() const {
    std::vector<LocalPatientEntry> out;
    out.reserve(entries_.size());
    for (const auto& [code, entry] : entries_) out.push_back(entry);
    return out;
}

void LocalDatabase::put(const LocalPatientEntry& entry) {
    journal_.append({{"op", "put"}, {"entry", entry}});
    entries_[entry.identity.fiscal_code] = entry;
}

void LocalDatabase::remove(const std::string& fiscal_code) {
    journal_.append({{"op", "remove"}, {"fiscal_code", fiscal_code}});
    entries_.erase(fiscal_code);
}

} // namespace nusa::terminal
