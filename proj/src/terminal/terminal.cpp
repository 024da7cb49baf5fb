#include "nusa/terminal/terminal.hpp"

#include <fstream>

#include "nusa/error.hpp"

namespace nusa::terminal {

using nlohmann::json;

std::string_view to_string(TerminalKind kind) noexcept {
    switch (kind) {
    case TerminalKind::Master: return "master";
    case TerminalKind::Slave: return "slave";
    case TerminalKind::Patient: return "patient";
    }
    return "?";
}

TerminalKind terminal_kind_from_string(std::string_view name) {
    if (name == "master") return TerminalKind::Master;
    if (name == "slave") return TerminalKind::Slave;
    if (name == "patient") return TerminalKind::Patient;
    fail(ErrorCode::InvalidInput, "unknown terminal kind " + std::string(name));
}

void from_json(const json& j, LegacyPatient& p) {
    p.identity = j.at("identity").get<Identity>();
    p.clear = j.value("clear", ehr::FieldMap{});
    p.obfuscated.clear();
    const json obfuscated = j.value("obfuscated", json::object());
    for (const auto& [field, v] : obfuscated.items()) {
        p.obfuscated[field] = ObfuscatedInput{v.at("text").get<std::string>(),
                                              v.value("keywords", std::vector<std::string>{})};
    }
    p.stores = j.value("stores", std::vector<std::size_t>{0});
}

void to_json(json& j, const LegacyPatient& p) {
    json obf = json::object();
    for (const auto& [field, v] : p.obfuscated) obf[field] = {{"text", v.text}, {"keywords", v.keywords}};
    j = {{"identity", p.identity}, {"clear", p.clear}, {"obfuscated", obf}, {"stores", p.stores}};
}

Terminal::Terminal(TerminalOptions options, std::unique_ptr<Transport> transport, KeyStore keys)
    : options_(std::move(options)),
      client_(std::move(transport)),
      keys_(std::move(keys)),
      local_(options_.kind == TerminalKind::Master ? LocalDatabase(options_.local_db) : LocalDatabase()) {
    if (options_.principal_id.empty()) fail(ErrorCode::InvalidInput, "terminal without principal");
}

void Terminal::login() {
    const json session =
        client_.request("login", {{"principal", options_.principal_id}, {"credential", options_.credential}});
    client_.set_token(session.at("token").get<std::string>());
    // A slave shares its master's key; only the master (or a standalone
    // device) publishes it, so a stale slave cannot rebind an old key.
    if (options_.kind != TerminalKind::Slave) {
        client_.request("register_key", {{"key_id", to_hex(keys_.current().key_id())}});
    }
}

void Terminal::require_master() const {
    if (options_.kind != TerminalKind::Master) {
        fail(ErrorCode::RequiresMasterTerminal, "only the master terminal holds the local patient database");
    }
}

void Terminal::require_md() const {
    if (options_.kind == TerminalKind::Patient) fail(ErrorCode::NotAuthorized, "not an MD terminal");
}

void Terminal::require_patient() const {
    if (options_.kind != TerminalKind::Patient) fail(ErrorCode::NotAuthorized, "not a patient terminal");
}

void Terminal::persist_keys() const {
    if (!options_.keystore_file.empty()) keys_.save(options_.keystore_file, options_.passphrase);
}

crypto::ObfuscationKey Terminal::obfuscation_key(const Identity& identity) const {
    return crypto::derive_obfuscation_key(canonical_personal_data(identity), options_.salt, options_.work_factor);
}

// ---------------------------------------------------------------------------
// Population

std::vector<ItemResult> Terminal::master_populate(const std::vector<LegacyPatient>& patients) {
    require_master();
    std::vector<ItemResult> results;
    for (const auto& p : patients) {
        ItemResult item{p.identity.fiscal_code, std::nullopt, {}};
        try {
            LocalPatientEntry entry;
            if (const auto* existing = local_.find(p.identity.fiscal_code)) {
                entry = *existing;
            } else {
                entry.identity = p.identity;
                entry.pid = crypto::generate_pid();
                local_.put(entry);
            }
            const auto epid = crypto::add_layer(crypto::LayeredCiphertext::plain(entry.pid), keys_.current());

            ehr::MedicalRecord record;
            record.pid = entry.pid;
            record.clear_fields = p.clear;
            if (!p.obfuscated.empty()) {
                const auto okey = obfuscation_key(p.identity);
                for (const auto& [field, input] : p.obfuscated) {
                    record.obfuscated_fields[field] = crypto::obfuscate(as_bytes(input.text), okey, input.keywords);
                }
            }
            json records = json::array();
            for (const auto store : p.stores) records.push_back({{"store", store}, {"record", record}});
            client_.request("populate", {{"identity", p.identity}, {"epid", epid}, {"records", records}});
        } catch (const Error& e) {
            item.error = e.code();
            item.message = e.what();
        }
        results.push_back(std::move(item));
    }
    return results;
}

std::vector<ItemResult> Terminal::master_populate_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::IoError, "cannot read " + file.string());
    std::vector<LegacyPatient> patients;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            patients.push_back(json::parse(line).get<LegacyPatient>());
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return master_populate(patients);
}

// ---------------------------------------------------------------------------
// Query

std::pair<json, crypto::PatientIdentifier> Terminal::resolve(const IdentityQuery& query) {
    const json answer = client_.request("query_epid", {{"query", query}});
    const auto epid = answer.at("epid").get<crypto::LayeredCiphertext>();
    if (epid.layer_count() != 1) fail(ErrorCode::InvalidPayload, "EPID must carry one layer");
    const crypto::SecretKey* key = keys_.find(epid.layers.front().key_id);
    if (!key) fail(ErrorCode::NotFound, "EPID is not under any local key");
    return {answer, crypto::remove_layer(epid, *key).to_pid()};
}

crypto::PatientIdentifier Terminal::resolve_pid(const IdentityQuery& query) { return resolve(query).second; }

std::vector<DecodedView> Terminal::decode(const Identity& identity, const json& views) const {
    std::vector<DecodedView> out;
    std::optional<crypto::ObfuscationKey> okey;
    for (const auto& v : views) {
        DecodedView d;
        d.store = v.at("store").get<std::size_t>();
        d.view = v.at("view").get<ehr::RecordView>();
        for (const auto& [field, blob] : d.view.obfuscated_fields) {
            if (!okey) okey = obfuscation_key(identity);
            d.revealed[field] = as_string(crypto::deobfuscate(blob, *okey));
        }
        out.push_back(std::move(d));
    }
    return out;
}

PatientLookup Terminal::lookup_patient(const IdentityQuery& query) {
    require_md();
    const auto [answer, pid] = resolve(query);
    const auto identity = answer.at("identity").get<Identity>();
    const json fetched = client_.request("fetch_records", {{"pid", pid}});
    return PatientLookup{identity, pid, decode(identity, fetched.at("views"))};
}

// ---------------------------------------------------------------------------
// Record maintenance

std::size_t Terminal::update_record(const IdentityQuery& query, const ehr::RecordDelta& delta) {
    require_md();
    const auto pid = resolve_pid(query);
    return client_.request("update_record", {{"pid", pid}, {"delta", delta}}).at("stores").get<std::size_t>();
}

void Terminal::edit_local(const IdentityQuery& query, const std::string& field, const json& value) {
    require_master();
    const auto* found = local_.find(query);
    if (!found) fail(ErrorCode::NotFound, "patient not in local database");
    LocalPatientEntry entry = *found;
    entry.dirty[field] = value;
    for (auto& v : entry.cached) v.view.clear_fields[field] = value;
    local_.put(entry);
}

std::size_t Terminal::attach_legacy(const IdentityQuery& query, std::size_t store, const ehr::FieldMap& match) {
    require_md();
    const auto pid = resolve_pid(query);
    return client_.request("attach_legacy", {{"store", store}, {"match", match}, {"pid", pid}})
        .at("attached")
        .get<std::size_t>();
}

void Terminal::remove_patient(const IdentityQuery& query) {
    require_master();
    const auto* found = local_.find(query);
    if (!found) fail(ErrorCode::NotFound, "patient not in local database");
    const LocalPatientEntry entry = *found;
    const json answer = client_.request("query_epid", {{"query", IdentityQuery::from(entry.identity)}});
    client_.request("remove_patient_stage1", {{"pid", entry.pid}});
    client_.request("remove_patient_stage2", {{"epid", answer.at("epid")}});
    local_.remove(entry.identity.fiscal_code);
}

SyncResult Terminal::sync_master() {
    require_master();
    SyncResult result;
    for (auto entry : local_.entries()) {
        try {
            if (entry.is_dirty()) {
                ehr::RecordDelta delta;
                delta.set_clear = entry.dirty;
                client_.request("update_record", {{"pid", entry.pid}, {"delta", delta}});
                entry.dirty.clear();
                ++result.pushed;
                local_.put(entry);
            }
            const json fetched = client_.request("fetch_records", {{"pid", entry.pid}});
            ++result.fetched;
            auto views = fetched.at("views").get<std::vector<als::StoreView>>();
            if (!(views == entry.cached)) {
                entry.cached = std::move(views);
                ++result.refreshed;
                local_.put(entry);
            }
        } catch (const Error& e) {
            result.errors.push_back(ItemResult{entry.identity.fiscal_code, e.code(), e.what()});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Delegation

std::vector<als::TicketId> Terminal::offer_delegation(const std::vector<IdentityQuery>& patients,
                                                      const std::string& smd_id, const std::vector<Window>& windows) {
    require_md();
    return client_.request("delegate_offer", {{"patients", patients}, {"smd", smd_id}, {"windows", windows}})
        .at("tickets")
        .get<std::vector<als::TicketId>>();
}

std::vector<als::Ticket> Terminal::inbox() {
    return client_.request("inbox").at("tickets").get<std::vector<als::Ticket>>();
}

void Terminal::accept_offered(const als::Ticket& ticket) {
    if (ticket.stage != als::TicketStage::OFFERED) fail(ErrorCode::InvalidStage, "ticket is not OFFERED");
    const auto eepid = crypto::add_layer(ticket.payload, keys_.current());
    const char* op = ticket.kind == als::TicketKind::Delegation ? "accept_delegation" : "accept_access";
    client_.request(op, {{"ticket", ticket.id}, {"eepid", eepid}});
}

std::vector<als::Ticket> Terminal::pending_accepted() {
    require_md();
    return client_.request("pmd_inbox").at("tickets").get<std::vector<als::Ticket>>();
}

void Terminal::finalize_accepted(const als::Ticket& ticket, std::optional<std::vector<Window>> windows) {
    require_md();
    if (ticket.stage != als::TicketStage::ACCEPTED) fail(ErrorCode::InvalidStage, "ticket is not ACCEPTED");
    const auto epid = crypto::remove_layer(ticket.payload, keys_.current());
    const char* op = ticket.kind == als::TicketKind::Delegation ? "complete_delegation" : "complete_access";
    client_.request(op, {{"ticket", ticket.id}, {"epid", epid}, {"windows", windows.value_or(ticket.windows)}});
}

void Terminal::revoke(const IdentityQuery& patient, const std::string& principal_id) {
    require_md();
    client_.request("revoke_grant", {{"patient", patient}, {"principal", principal_id}});
}

// ---------------------------------------------------------------------------
// Key loss

als::RecoveryResult Terminal::regenerate_key(KeyLossReason reason) {
    require_md();
    als::RecoveryResult result;
    if (reason == KeyLossReason::PmdLoss) {
        require_master();
        auto next = crypto::generate_key();
        client_.request("register_key", {{"key_id", to_hex(next.key_id())}});
        json items = json::array();
        const json listings = client_.request("list_patients");
        for (const auto& listing : listings.at("patients")) {
            if (listing.at("grant").at("role").get<std::string>() != "PMD") continue;
            const auto identity = listing.at("identity").get<Identity>();
            const auto* entry = local_.find(identity.fiscal_code);
            if (!entry) continue;
            const auto fresh = crypto::add_layer(crypto::LayeredCiphertext::plain(entry->pid), next);
            items.push_back({{"old", listing.at("grant").at("epid")}, {"new", fresh}});
        }
        const json r = client_.request("recover_pmd_key", {{"items", items}});
        keys_.replace_current(std::move(next), false);
        result.replaced = r.at("replaced").get<std::size_t>();
        for (const auto& e : r.at("errors")) {
            result.errors.push_back(als::ItemError{
                e.at("index").get<std::size_t>(),
                error_code_from_string(e.at("error").get<std::string>()).value_or(ErrorCode::ProtocolError),
                e.value("message", std::string{})});
        }
    } else {
        auto next = crypto::generate_key();
        const json r = client_.request("recover_smd_key", {{"key_id", to_hex(next.key_id())}});
        keys_.replace_current(std::move(next), false);
        result.replaced = r.at("revoked").get<std::size_t>();
    }
    persist_keys();
    return result;
}

// ---------------------------------------------------------------------------
// Patient side

als::Ticket Terminal::patient_request_access() {
    require_patient();
    auto ticket = client_.request("patient_access_request").at("ticket").get<als::Ticket>();
    accept_offered(ticket);
    return ticket;
}

crypto::Digest Terminal::owner_proof(const crypto::PatientIdentifier& pid) const {
    static constexpr std::string_view kDomain = "nusa-owner";
    Bytes material(kDomain.begin(), kDomain.end());
    material.insert(material.end(), keys_.current().material().begin(), keys_.current().material().end());
    material.insert(material.end(), pid.bytes.begin(), pid.bytes.end());
    return crypto::sha256(material);
}

PatientLookup Terminal::patient_view() {
    require_patient();
    const auto [answer, pid] = resolve(IdentityQuery{});
    const auto identity = answer.at("identity").get<Identity>();
    client_.request("claim_record", {{"pid", pid}, {"verifier", to_hex(crypto::sha256(owner_proof(pid)))}});
    const json fetched = client_.request("fetch_records", {{"pid", pid}});
    return PatientLookup{identity, pid, decode(identity, fetched.at("views"))};
}

void Terminal::patient_set_visibility(const std::string& field, const std::string& md_id, bool hidden) {
    require_patient();
    const auto pid = resolve_pid(IdentityQuery{});
    const auto proof = owner_proof(pid);
    client_.request("claim_record", {{"pid", pid}, {"verifier", to_hex(crypto::sha256(proof))}});
    client_.request("set_visibility",
                    {{"pid", pid}, {"proof", to_hex(proof)}, {"field", field}, {"md", md_id}, {"hidden", hidden}});
}

} // namespace nusa::terminal
