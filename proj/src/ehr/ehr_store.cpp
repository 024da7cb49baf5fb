#include "nusa/ehr/ehr_store.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <mutex>
#include <regex>

#include "nusa/error.hpp"

namespace nusa::ehr {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

// Lowercase with separators stripped, so "Given-Name" and "given_name" compare equal.
std::string normalize_field_name(std::string_view s) {
    std::string out;
    for (const char c : lower(s)) {
        if (c != '_' && c != '-' && c != ' ' && c != '.') out.push_back(c);
    }
    return out;
}

constexpr std::array<std::string_view, 14> kIdentityFieldNames{
    "surname",  "lastname", "familyname",   "givenname", "firstname", "name",     "fullname",
    "birthdate", "dateofbirth", "dob",      "fiscalcode", "codicefiscale", "taxcode", "ssn",
};

bool is_identity_field(std::string_view field) {
    const auto n = normalize_field_name(field);
    return std::find(kIdentityFieldNames.begin(), kIdentityFieldNames.end(), n) != kIdentityFieldNames.end();
}

void check_value(const std::string& field, const json& value) {
    if (!value.is_string() && !value.is_number()) {
        fail(ErrorCode::InvalidField, "clear field '" + field + "' must be a string or number");
    }
    if (value.is_string() && looks_like_fiscal_code(value.get_ref<const std::string&>())) {
        fail(ErrorCode::IdentityLeakRejected, "field '" + field + "' contains a fiscal code");
    }
}

bool matches_legacy(const LegacyRecord& rec, const FieldMap& match) {
    if (match.empty()) return false;
    for (const auto& [key, value] : match) {
        if (key == "native_key") {
            if (!value.is_string() || value.get<std::string>() != rec.native_key) return false;
            continue;
        }
        const auto it = rec.payload.find(key);
        if (it == rec.payload.end() || it->second != value) return false;
    }
    return true;
}

} // namespace

bool looks_like_fiscal_code(std::string_view value) {
    static const std::regex kFiscal("[A-Z]{6}[0-9LMNPQRSTUV]{2}[ABCDEHLMPRST][0-9LMNPQRSTUV]{2}[A-Z][0-9LMNPQRSTUV]{3}[A-Z]");
    std::string upper(value);
    for (auto& c : upper) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    return std::regex_search(upper, kFiscal);
}

void check_identity_leak(const FieldMap& clear, const std::map<std::string, ObfuscatedBlob>& obfuscated) {
    for (const auto& [field, value] : clear) {
        if (is_identity_field(field)) fail(ErrorCode::IdentityLeakRejected, "identity field '" + field + "'");
        check_value(field, value);
    }
    for (const auto& [field, blob] : obfuscated) {
        if (is_identity_field(field)) fail(ErrorCode::IdentityLeakRejected, "identity field '" + field + "'");
        for (const auto& kw : blob.keyword_index) {
            if (looks_like_fiscal_code(kw)) fail(ErrorCode::IdentityLeakRejected, "keyword contains a fiscal code");
        }
    }
}

Statistic statistic_from_string(std::string_view name) {
    if (name == "mean") return Statistic::Mean;
    if (name == "variance") return Statistic::Variance;
    if (name == "count") return Statistic::Count;
    fail(ErrorCode::InvalidInput, "unknown statistic " + std::string(name));
}

double compute_statistic(std::span<const double> values, Statistic statistic) {
    if (values.empty()) fail(ErrorCode::NoData, "no numeric values");
    const auto n = static_cast<double>(values.size());
    if (statistic == Statistic::Count) return n;
    long double sum = 0;
    for (const double v : values) sum += v;
    const long double mean = sum / values.size();
    if (statistic == Statistic::Mean) return static_cast<double>(mean);
    long double ss = 0;
    for (const double v : values) ss += (v - mean) * (v - mean);
    return static_cast<double>(ss / values.size());
}

void to_json(json& j, const MedicalRecord& r) {
    json hidden = json::object();
    for (const auto& [field, mds] : r.hidden_for) {
        if (!mds.empty()) hidden[field] = mds;
    }
    j = {{"pid", r.pid}, {"clear", r.clear_fields}, {"obfuscated", r.obfuscated_fields}, {"hidden_for", hidden}};
}

void from_json(const json& j, MedicalRecord& r) {
    r.pid = j.at("pid").get<PatientIdentifier>();
    r.clear_fields = j.value("clear", FieldMap{});
    r.obfuscated_fields = j.value("obfuscated", std::map<std::string, ObfuscatedBlob>{});
    r.hidden_for = j.value("hidden_for", std::map<std::string, std::set<std::string>>{});
}

void to_json(json& j, const LegacyRecord& r) {
    j = {{"native_key", r.native_key}, {"payload", r.payload}};
    if (r.pid) j["pid"] = *r.pid;
}

void from_json(const json& j, LegacyRecord& r) {
    r.native_key = j.at("native_key").get<std::string>();
    r.payload = j.value("payload", FieldMap{});
    r.pid.reset();
    if (auto it = j.find("pid"); it != j.end() && !it->is_null()) r.pid = it->get<PatientIdentifier>();
}

void to_json(json& j, const RecordView& v) {
    j = {{"pid", v.pid}, {"clear", v.clear_fields}, {"obfuscated", v.obfuscated_fields}, {"legacy", v.legacy}};
}

void from_json(const json& j, RecordView& v) {
    v.pid = j.at("pid").get<PatientIdentifier>();
    v.clear_fields = j.value("clear", FieldMap{});
    v.obfuscated_fields = j.value("obfuscated", std::map<std::string, ObfuscatedBlob>{});
    v.legacy = j.value("legacy", std::vector<FieldMap>{});
}

void to_json(json& j, const RecordDelta& d) {
    j = {{"set_clear", d.set_clear},
         {"erase_clear", d.erase_clear},
         {"set_obfuscated", d.set_obfuscated},
         {"erase_obfuscated", d.erase_obfuscated}};
}

void from_json(const json& j, RecordDelta& d) {
    d.set_clear = j.value("set_clear", FieldMap{});
    d.erase_clear = j.value("erase_clear", std::vector<std::string>{});
    d.set_obfuscated = j.value("set_obfuscated", std::map<std::string, ObfuscatedBlob>{});
    d.erase_obfuscated = j.value("erase_obfuscated", std::vector<std::string>{});
}

void to_json(json& j, const SearchHit& h) { j = {{"pid", h.pid}, {"field", h.field}}; }

void from_json(const json& j, SearchHit& h) {
    h.pid = j.at("pid").get<PatientIdentifier>();
    h.field = j.at("field").get<std::string>();
}

EhrStore::EhrStore(std::string name, std::filesystem::path journal_path, bool editable)
    : name_(std::move(name)), editable_(editable) {
    if (journal_path.empty()) return;
    journal_ = Journal(std::move(journal_path));
    journal_.replay([this](const json& entry) { apply(entry); });
}

void EhrStore::commit(const json& entry) {
    journal_.append(entry);
    apply(entry);
}

void EhrStore::apply(const json& e) {
    const auto op = e.at("op").get<std::string>();
    if (op == "insert") {
        auto rec = e.at("record").get<MedicalRecord>();
        const auto pid = rec.pid;
        records_[pid] = Entry{std::move(rec), std::nullopt};
    } else if (op == "update") {
        auto& rec = records_.at(e.at("pid").get<PatientIdentifier>()).record;
        const auto delta = e.at("delta").get<RecordDelta>();
        for (const auto& [k, v] : delta.set_clear) rec.clear_fields[k] = v;
        for (const auto& k : delta.erase_clear) rec.clear_fields.erase(k);
        for (const auto& [k, v] : delta.set_obfuscated) rec.obfuscated_fields[k] = v;
        for (const auto& k : delta.erase_obfuscated) {
            rec.obfuscated_fields.erase(k);
            rec.hidden_for.erase(k);
        }
    } else if (op == "replace") {
        auto& entry = records_.at(e.at("pid").get<PatientIdentifier>());
        auto next = e.at("record").get<MedicalRecord>();
        next.pid = entry.record.pid;
        next.hidden_for.clear();
        for (const auto& [field, mds] : entry.record.hidden_for) {
            if (next.obfuscated_fields.contains(field)) next.hidden_for[field] = mds;
        }
        entry.record = std::move(next);
    } else if (op == "remove") {
        const auto pid = e.at("pid").get<PatientIdentifier>();
        records_.erase(pid);
        std::erase_if(legacy_, [&](const LegacyRecord& r) { return r.pid == pid; });
    } else if (op == "legacy") {
        legacy_.push_back(e.at("record").get<LegacyRecord>());
    } else if (op == "attach") {
        const auto match = e.at("match").get<FieldMap>();
        const auto pid = e.at("pid").get<PatientIdentifier>();
        for (auto& rec : legacy_) {
            if (matches_legacy(rec, match)) rec.pid = pid;
        }
    } else if (op == "visibility") {
        auto& hidden = records_.at(e.at("pid").get<PatientIdentifier>()).record.hidden_for;
        const auto field = e.at("field").get<std::string>();
        const auto md = e.at("md").get<std::string>();
        if (e.at("hidden").get<bool>()) {
            hidden[field].insert(md);
        } else if (auto it = hidden.find(field); it != hidden.end()) {
            it->second.erase(md);
            if (it->second.empty()) hidden.erase(it);
        }
    } else if (op == "claim") {
        records_.at(e.at("pid").get<PatientIdentifier>()).owner =
            fixed_from_hex<crypto::kDigestSize>(e.at("verifier").get<std::string>());
    } else {
        fail(ErrorCode::ParseError, "unknown EHR journal op " + op);
    }
}

void EhrStore::insert(const MedicalRecord& record) {
    check_identity_leak(record.clear_fields, record.obfuscated_fields);
    std::unique_lock lock(mutex_);
    if (records_.contains(record.pid)) fail(ErrorCode::AlreadyExists, "PID already present in " + name_);
    commit({{"op", "insert"}, {"record", record}});
}

RecordView EhrStore::query_by_pid(const PatientIdentifier& pid, const std::string& requester) const {
    std::shared_lock lock(mutex_);
    RecordView view;
    view.pid = pid;
    bool found = false;
    if (const auto it = records_.find(pid); it != records_.end()) {
        found = true;
        const MedicalRecord& rec = it->second.record;
        view.clear_fields = rec.clear_fields;
        for (const auto& [field, blob] : rec.obfuscated_fields) {
            const auto h = rec.hidden_for.find(field);
            if (h != rec.hidden_for.end() && h->second.contains(requester)) continue;
            view.obfuscated_fields.emplace(field, blob);
        }
    }
    for (const auto& rec : legacy_) {
        if (rec.pid == pid) {
            found = true;
            view.legacy.push_back(rec.payload);
        }
    }
    if (!found) fail(ErrorCode::NotFound, "PID not present in " + name_);
    return view;
}

bool EhrStore::contains(const PatientIdentifier& pid) const {
    std::shared_lock lock(mutex_);
    if (records_.contains(pid)) return true;
    return std::any_of(legacy_.begin(), legacy_.end(), [&](const LegacyRecord& r) { return r.pid == pid; });
}

void EhrStore::update(const PatientIdentifier& pid, const RecordDelta& delta) {
    check_identity_leak(delta.set_clear, delta.set_obfuscated);
    std::unique_lock lock(mutex_);
    if (!editable_) fail(ErrorCode::InvalidOperation, name_ + " is read-only");
    if (!records_.contains(pid)) fail(ErrorCode::NotFound, "PID not present in " + name_);
    commit({{"op", "update"}, {"pid", pid}, {"delta", delta}});
}

void EhrStore::replace(const PatientIdentifier& pid, const MedicalRecord& record) {
    check_identity_leak(record.clear_fields, record.obfuscated_fields);
    std::unique_lock lock(mutex_);
    if (!editable_) fail(ErrorCode::InvalidOperation, name_ + " is read-only");
    if (!records_.contains(pid)) fail(ErrorCode::NotFound, "PID not present in " + name_);
    MedicalRecord next = record;
    next.pid = pid;
    commit({{"op", "replace"}, {"pid", pid}, {"record", next}});
}

void EhrStore::remove_by_pid(const PatientIdentifier& pid) {
    std::unique_lock lock(mutex_);
    if (!editable_) fail(ErrorCode::InvalidOperation, name_ + " is read-only");
    const bool legacy_hit =
        std::any_of(legacy_.begin(), legacy_.end(), [&](const LegacyRecord& r) { return r.pid == pid; });
    if (!records_.contains(pid) && !legacy_hit) fail(ErrorCode::NotFound, "PID not present in " + name_);
    commit({{"op", "remove"}, {"pid", pid}});
}

void EhrStore::add_legacy(const LegacyRecord& record) {
    check_identity_leak(record.payload);
    if (record.native_key.empty()) fail(ErrorCode::InvalidInput, "legacy record without native key");
    std::unique_lock lock(mutex_);
    commit({{"op", "legacy"}, {"record", record}});
}

std::size_t EhrStore::import_legacy(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoError, "cannot read " + file.string());
    std::vector<LegacyRecord> parsed;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            parsed.push_back(json::parse(line).get<LegacyRecord>());
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    for (const auto& rec : parsed) add_legacy(rec);
    return parsed.size();
}

std::size_t EhrStore::attach_pid_to_legacy(const FieldMap& match, const PatientIdentifier& pid) {
    std::unique_lock lock(mutex_);
    const auto count = static_cast<std::size_t>(
        std::count_if(legacy_.begin(), legacy_.end(), [&](const LegacyRecord& r) { return matches_legacy(r, match); }));
    if (count > 0) commit({{"op", "attach"}, {"match", match}, {"pid", pid}});
    return count;
}

std::vector<SearchHit> EhrStore::keyword_search(std::span<const std::string> terms,
                                                const std::string& requester) const {
    std::set<std::string> wanted;
    for (const auto& t : terms) wanted.insert(lower(t));
    std::shared_lock lock(mutex_);
    std::vector<SearchHit> hits;
    for (const auto& [pid, entry] : records_) {
        const MedicalRecord& rec = entry.record;
        for (const auto& [field, blob] : rec.obfuscated_fields) {
            const auto h = rec.hidden_for.find(field);
            if (h != rec.hidden_for.end() && h->second.contains(requester)) continue;
            const bool hit = std::any_of(blob.keyword_index.begin(), blob.keyword_index.end(),
                                         [&](const std::string& kw) { return wanted.contains(lower(kw)); });
            if (hit) hits.push_back({pid, field});
        }
    }
    return hits;
}

void EhrStore::set_visibility(const PatientIdentifier& pid, const std::string& field, const std::string& md_id,
                              bool hidden) {
    std::unique_lock lock(mutex_);
    const auto it = records_.find(pid);
    if (it == records_.end()) fail(ErrorCode::NotFound, "PID not present in " + name_);
    const MedicalRecord& rec = it->second.record;
    if (!rec.obfuscated_fields.contains(field)) {
        if (rec.clear_fields.contains(field)) {
            fail(ErrorCode::InvalidField, "visibility applies to obfuscated fields only");
        }
        fail(ErrorCode::NotFound, "no obfuscated field '" + field + "'");
    }
    commit({{"op", "visibility"}, {"pid", pid}, {"field", field}, {"md", md_id}, {"hidden", hidden}});
}

void EhrStore::claim_owner(const PatientIdentifier& pid, const crypto::Digest& verifier) {
    std::unique_lock lock(mutex_);
    const auto it = records_.find(pid);
    if (it == records_.end()) fail(ErrorCode::NotFound, "PID not present in " + name_);
    if (it->second.owner) {
        if (*it->second.owner == verifier) return;
        fail(ErrorCode::NotAuthorized, "record already claimed");
    }
    commit({{"op", "claim"}, {"pid", pid}, {"verifier", to_hex(verifier)}});
}

bool EhrStore::owner_matches(const PatientIdentifier& pid, const crypto::Digest& verifier) const {
    std::shared_lock lock(mutex_);
    const auto it = records_.find(pid);
    return it != records_.end() && it->second.owner && constant_time_equal(*it->second.owner, verifier);
}

bool EhrStore::has_owner(const PatientIdentifier& pid) const {
    std::shared_lock lock(mutex_);
    const auto it = records_.find(pid);
    return it != records_.end() && it->second.owner.has_value();
}

std::vector<double> EhrStore::numeric_values(const std::string& field) const {
    std::shared_lock lock(mutex_);
    std::vector<double> out;
    for (const auto& [pid, entry] : records_) {
        const auto it = entry.record.clear_fields.find(field);
        if (it != entry.record.clear_fields.end() && it->second.is_number()) out.push_back(it->second.get<double>());
    }
    return out;
}

double EhrStore::stats(const std::string& field, Statistic statistic) const {
    const auto values = numeric_values(field);
    return compute_statistic(values, statistic);
}

json EhrStore::dump() const {
    std::shared_lock lock(mutex_);
    json records = json::array();
    for (const auto& [pid, entry] : records_) {
        json r = entry.record;
        if (entry.owner) r["owner_verifier"] = to_hex(*entry.owner);
        records.push_back(std::move(r));
    }
    return {{"name", name_}, {"records", records}, {"legacy", legacy_}};
}

std::size_t EhrStore::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

} // namespace nusa::ehr
