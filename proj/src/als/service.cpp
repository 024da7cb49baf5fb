#include "nusa/als/service.hpp"

#include <algorithm>
#include <sstream>

#include "nusa/crypto/primitives.hpp"

namespace nusa::als {

using nlohmann::json;
using registry::AccessGrant;
using registry::Role;

std::string_view to_string(PrincipalKind kind) noexcept { return kind == PrincipalKind::MD ? "MD" : "PATIENT"; }

std::string_view to_string(TicketKind kind) noexcept {
    return kind == TicketKind::Delegation ? "delegation" : "access";
}

std::string_view to_string(TicketStage stage) noexcept {
    switch (stage) {
    case TicketStage::OFFERED: return "OFFERED";
    case TicketStage::ACCEPTED: return "ACCEPTED";
    case TicketStage::COMPLETED: return "COMPLETED";
    }
    return "?";
}

PrincipalKind principal_kind_from_string(std::string_view name) {
    if (name == "MD") return PrincipalKind::MD;
    if (name == "PATIENT") return PrincipalKind::PATIENT;
    fail(ErrorCode::InvalidInput, "unknown principal kind " + std::string(name));
}

namespace {

TicketKind ticket_kind_from_string(std::string_view s) {
    if (s == "delegation") return TicketKind::Delegation;
    if (s == "access") return TicketKind::Access;
    fail(ErrorCode::InvalidInput, "unknown ticket kind");
}

TicketStage ticket_stage_from_string(std::string_view s) {
    if (s == "OFFERED") return TicketStage::OFFERED;
    if (s == "ACCEPTED") return TicketStage::ACCEPTED;
    if (s == "COMPLETED") return TicketStage::COMPLETED;
    fail(ErrorCode::InvalidInput, "unknown ticket stage");
}

crypto::Digest credential_digest(const std::string& credential) { return crypto::sha256(as_bytes(credential)); }

} // namespace

void to_json(json& j, const StoreView& v) { j = {{"store", v.store}, {"view", v.view}}; }

void from_json(const json& j, StoreView& v) {
    v.store = j.at("store").get<std::size_t>();
    v.view = j.at("view").get<ehr::RecordView>();
}

void to_json(json& j, const Ticket& t) {
    j = {{"id", t.id},
         {"kind", to_string(t.kind)},
         {"pmd", t.pmd_id},
         {"grantee", t.grantee_id},
         {"record", t.record_id},
         {"stage", to_string(t.stage)},
         {"payload", t.payload},
         {"windows", t.windows}};
}

void from_json(const json& j, Ticket& t) {
    t.id = j.at("id").get<TicketId>();
    t.kind = ticket_kind_from_string(j.at("kind").get<std::string>());
    t.pmd_id = j.at("pmd").get<std::string>();
    t.grantee_id = j.at("grantee").get<std::string>();
    t.record_id = j.at("record").get<RecordId>();
    t.stage = ticket_stage_from_string(j.at("stage").get<std::string>());
    t.payload = j.at("payload").get<LayeredCiphertext>();
    t.windows = j.value("windows", std::vector<Window>{});
}

void to_json(json& j, const Session& s) {
    j = {{"principal", s.principal_id}, {"kind", to_string(s.kind)}, {"token", s.token}, {"expiry", s.expiry}};
}

AlsService::AlsService(std::shared_ptr<registry::PatientRegistry> registry,
                       std::vector<std::shared_ptr<ehr::EhrStore>> stores, std::shared_ptr<const Clock> clock,
                       AlsConfig config)
    : registry_(std::move(registry)), stores_(std::move(stores)), clock_(std::move(clock)), config_(std::move(config)) {
    if (!registry_ || !clock_) fail(ErrorCode::InvalidInput, "ALS needs a registry and a clock");
    if (stores_.empty()) fail(ErrorCode::InvalidInput, "ALS needs at least one EHR store");
    if (config_.session_lifetime_s <= 0) fail(ErrorCode::ValidationError, "session lifetime must be positive");
    if (!config_.state_dir.empty()) {
        std::filesystem::create_directories(config_.state_dir);
        ticket_journal_ = Journal(config_.state_dir / "als_tickets.journal");
        ticket_journal_.replay([this](const json& e) {
            const auto op = e.at("op").get<std::string>();
            if (op == "ticket") {
                auto t = e.at("ticket").get<Ticket>();
                next_ticket_ = std::max(next_ticket_, t.id + 1);
                tickets_[t.id] = std::move(t);
            } else if (op == "drop") {
                tickets_.erase(e.at("id").get<TicketId>());
            }
        });
        log_file_.open(config_.state_dir / "als.log", std::ios::app);
    }
}

void AlsService::set_fault_injector(FaultInjector injector) { fault_injector_ = std::move(injector); }

void AlsService::fault(std::string_view phase) {
    if (fault_injector_) fault_injector_(phase);
}

void AlsService::log(const std::string& line) {
    const std::string stamped = format_utc(clock_->now()) + " " + line;
    std::lock_guard lock(log_mutex_);
    log_.push_back(stamped);
    if (log_file_.is_open()) {
        log_file_ << stamped << '\n';
        log_file_.flush();
    }
}

std::vector<std::string> AlsService::log_lines() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

// ---------------------------------------------------------------------------
// Authentication

void AlsService::enroll(const std::string& principal_id, PrincipalKind kind, const std::string& credential,
                        std::optional<std::string> fiscal_code) {
    if (principal_id.empty() || credential.empty()) fail(ErrorCode::InvalidInput, "empty principal or credential");
    if (kind == PrincipalKind::PATIENT && (!fiscal_code || fiscal_code->empty())) {
        fail(ErrorCode::InvalidInput, "patients are enrolled with their fiscal code");
    }
    std::lock_guard lock(state_mutex_);
    if (principals_.contains(principal_id)) fail(ErrorCode::AlreadyExists, "principal already enrolled");
    principals_[principal_id] = Principal{kind, credential_digest(credential), std::move(fiscal_code)};
}

Session AlsService::authenticate(const std::string& principal_id, const std::string& credential) {
    const auto presented = credential_digest(credential);
    std::unique_lock lock(state_mutex_);
    const auto it = principals_.find(principal_id);
    // Compare against a dummy digest for unknown principals so timing does not reveal enrollment.
    const crypto::Digest expected = it != principals_.end() ? it->second.credential_digest : crypto::Digest{};
    const bool ok = constant_time_equal(expected, presented) && it != principals_.end();
    if (!ok) {
        lock.unlock();
        log("op=authenticate status=AuthFailed");
        fail(ErrorCode::AuthFailed, "bad credential");
    }
    Session s;
    s.principal_id = principal_id;
    s.kind = it->second.kind;
    s.token = to_hex(crypto::random_array<16>());
    s.expiry = clock_->now() + config_.session_lifetime_s;
    sessions_[s.token] = s;
    lock.unlock();
    log("op=authenticate principal=" + principal_id);
    return s;
}

Session AlsService::require_session(const std::string& token) {
    std::lock_guard lock(state_mutex_);
    const auto it = sessions_.find(token);
    if (it == sessions_.end()) fail(ErrorCode::AuthFailed, "unknown session token");
    // Expired entries are kept so the token keeps reporting SessionExpired.
    if (clock_->now() > it->second.expiry) fail(ErrorCode::SessionExpired, "session expired");
    return it->second;
}

Session AlsService::require(const std::string& token, PrincipalKind kind) {
    Session s = require_session(token);
    if (s.kind != kind) fail(ErrorCode::NotAuthorized, "operation requires a " + std::string(to_string(kind)) + " session");
    return s;
}

Session AlsService::renew(const std::string& token) {
    require_session(token);
    std::lock_guard lock(state_mutex_);
    auto& s = sessions_.at(token);
    s.expiry = clock_->now() + config_.session_lifetime_s;
    return s;
}

void AlsService::register_key(const std::string& token, const crypto::KeyId& key_id) {
    const Session s = require_session(token);
    registry_->bind_key(s.principal_id, key_id);
    log("op=register_key principal=" + s.principal_id + " key_id=" + to_hex(key_id));
}

// ---------------------------------------------------------------------------
// Population and query

RecordId AlsService::populate(const std::string& token, const Identity& identity, const LayeredCiphertext& epid,
                              const std::vector<PopulateRecord>& records) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);

    // Phase 1: validate everything that can be checked without writing.
    for (const auto& r : records) {
        if (r.store >= stores_.size()) fail(ErrorCode::InvalidInput, "no EHR store " + std::to_string(r.store));
        if (r.record.pid != records.front().record.pid) {
            fail(ErrorCode::InvalidPayload, "all medical records of one patient share a PID");
        }
        ehr::check_identity_leak(r.record.clear_fields, r.record.obfuscated_fields);
        if (stores_[r.store]->contains(r.record.pid)) fail(ErrorCode::AlreadyExists, "PID already stored");
    }

    // Phase 2: apply, undoing completed steps on failure.
    const RecordId id = registry_->create_entry(identity, AccessGrant{s.principal_id, Role::PMD, epid, {}});
    std::vector<std::size_t> inserted;
    try {
        fault("populate:registry_written");
        for (const auto& r : records) {
            stores_[r.store]->insert(r.record);
            inserted.push_back(r.store);
            fault("populate:ehr_written");
        }
    } catch (...) {
        for (const auto idx : inserted) {
            try {
                stores_[idx]->remove_by_pid(records.front().record.pid);
            } catch (const Error&) {
            }
        }
        registry_->remove_entry(id);
        log("op=populate principal=" + s.principal_id + " status=rolled_back");
        throw;
    }
    log("op=populate principal=" + s.principal_id + " record=" + std::to_string(id) +
        " ehr_records=" + std::to_string(records.size()));
    return id;
}

registry::PersonalRecord AlsService::own_patient_record(const Session& caller) const {
    std::optional<std::string> fiscal;
    {
        std::lock_guard lock(state_mutex_);
        fiscal = principals_.at(caller.principal_id).fiscal_code;
    }
    return registry_->find(IdentityQuery::by_fiscal_code(*fiscal));
}

void AlsService::require_patient_grant(const Session& caller) const {
    const auto rec = own_patient_record(caller);
    const AccessGrant* g = rec.grant_of(caller.principal_id);
    if (!g || g->role != Role::PATIENT || !g->valid_at(clock_->now())) {
        fail(ErrorCode::NotAuthorized, "patient has no access grant");
    }
}

EpidAnswer AlsService::query_patient_epid(const std::string& token, const IdentityQuery& query) {
    const Session s = require_session(token);
    IdentityQuery effective = query;
    if (s.kind == PrincipalKind::PATIENT) {
        // Patients only ever see their own entry; an empty query means "mine".
        const auto own = own_patient_record(s);
        const bool empty = !query.fiscal_code && !query.surname && !query.given_name && !query.birthdate;
        if (!empty && !matches(query, own.identity)) fail(ErrorCode::NotAuthorized, "patients query their own record only");
        effective = IdentityQuery::by_fiscal_code(own.identity.fiscal_code);
    }
    const auto now = clock_->now();
    const AccessGrant grant = registry_->lookup_grant(effective, s.principal_id, now);
    const auto rec = registry_->find(effective);
    log("op=query_epid principal=" + s.principal_id + " record=" + std::to_string(rec.id));
    return EpidAnswer{rec.id, rec.identity, grant.epid};
}

std::vector<StoreView> AlsService::fetch_records(const std::string& token, const PatientIdentifier& pid) {
    const Session s = require_session(token);
    std::vector<StoreView> out;
    for (std::size_t i = 0; i < stores_.size(); ++i) {
        if (!stores_[i]->contains(pid)) continue;
        out.push_back(StoreView{i, stores_[i]->query_by_pid(pid, s.principal_id)});
    }
    log("op=fetch_records principal=" + s.principal_id + " views=" + std::to_string(out.size()));
    if (out.empty()) fail(ErrorCode::NotFound, "no EHR store holds this PID");
    return out;
}

std::vector<registry::PatientListing> AlsService::list_patients(const std::string& token) {
    const Session s = require(token, PrincipalKind::MD);
    return registry_->list_patients_of(s.principal_id, clock_->now());
}

std::vector<std::size_t> AlsService::target_stores(const PatientIdentifier& pid,
                                                   std::optional<std::size_t> store) const {
    std::vector<std::size_t> out;
    if (store) {
        if (*store >= stores_.size()) fail(ErrorCode::InvalidInput, "no EHR store " + std::to_string(*store));
        if (stores_[*store]->contains(pid)) out.push_back(*store);
    } else {
        for (std::size_t i = 0; i < stores_.size(); ++i) {
            if (stores_[i]->editable() && stores_[i]->contains(pid)) out.push_back(i);
        }
    }
    if (out.empty()) fail(ErrorCode::NotFound, "no editable EHR store holds this PID");
    return out;
}

std::size_t AlsService::update_record(const std::string& token, const PatientIdentifier& pid,
                                      const ehr::RecordDelta& delta, std::optional<std::size_t> store) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    ehr::check_identity_leak(delta.set_clear, delta.set_obfuscated);
    const auto targets = target_stores(pid, store);
    for (const auto i : targets) stores_[i]->update(pid, delta);
    log("op=update_record principal=" + s.principal_id + " stores=" + std::to_string(targets.size()));
    return targets.size();
}

std::size_t AlsService::replace_record(const std::string& token, const PatientIdentifier& pid,
                                       const ehr::MedicalRecord& record, std::optional<std::size_t> store) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    ehr::check_identity_leak(record.clear_fields, record.obfuscated_fields);
    const auto targets = target_stores(pid, store);
    for (const auto i : targets) stores_[i]->replace(pid, record);
    log("op=replace_record principal=" + s.principal_id + " stores=" + std::to_string(targets.size()));
    return targets.size();
}

std::size_t AlsService::attach_legacy(const std::string& token, std::size_t store, const ehr::FieldMap& match,
                                      const PatientIdentifier& pid) {
    const Session s = require(token, PrincipalKind::MD);
    if (store >= stores_.size()) fail(ErrorCode::InvalidInput, "no EHR store " + std::to_string(store));
    const auto n = stores_[store]->attach_pid_to_legacy(match, pid);
    log("op=attach_legacy principal=" + s.principal_id + " store=" + std::to_string(store) +
        " attached=" + std::to_string(n));
    return n;
}

// ---------------------------------------------------------------------------
// Tickets

void AlsService::persist_ticket_locked(const Ticket& ticket) {
    ticket_journal_.append({{"op", "ticket"}, {"ticket", ticket}});
}

TicketId AlsService::queue_ticket_locked(Ticket ticket) {
    ticket.id = next_ticket_++;
    persist_ticket_locked(ticket);
    const TicketId id = ticket.id;
    tickets_[id] = std::move(ticket);
    return id;
}

void AlsService::drop_ticket_locked(TicketId id) {
    ticket_journal_.append({{"op", "drop"}, {"id", id}});
    tickets_.erase(id);
}

bool AlsService::pending_exists_locked(RecordId record, const std::string& grantee, TicketKind kind) const {
    return std::any_of(tickets_.begin(), tickets_.end(), [&](const auto& kv) {
        const Ticket& t = kv.second;
        return t.record_id == record && t.grantee_id == grantee && t.kind == kind && t.stage != TicketStage::COMPLETED;
    });
}

std::optional<Ticket> AlsService::ticket(TicketId id) const {
    std::lock_guard lock(state_mutex_);
    const auto it = tickets_.find(id);
    if (it == tickets_.end()) return std::nullopt;
    return it->second;
}

std::vector<TicketId> AlsService::delegate_offer(const std::string& token, const std::vector<IdentityQuery>& patients,
                                                 const std::string& smd_id, const std::vector<Window>& windows) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    {
        std::lock_guard lock(state_mutex_);
        const auto it = principals_.find(smd_id);
        if (it == principals_.end() || it->second.kind != PrincipalKind::MD) {
            fail(ErrorCode::NotFound, "unknown SMD " + smd_id);
        }
    }
    if (smd_id == s.principal_id) fail(ErrorCode::InvalidInput, "a PMD cannot delegate to himself");

    std::vector<Ticket> pending;
    for (const auto& q : patients) {
        const auto rec = registry_->find(q);
        const AccessGrant& pmd = rec.pmd_grant();
        if (pmd.principal_id != s.principal_id) fail(ErrorCode::NotAuthorized, "caller is not the patient's PMD");
        if (rec.grant_of(smd_id)) fail(ErrorCode::AlreadyExists, smd_id + " already holds a grant for this patient");
        Ticket t;
        t.kind = TicketKind::Delegation;
        t.pmd_id = s.principal_id;
        t.grantee_id = smd_id;
        t.record_id = rec.id;
        t.payload = pmd.epid;
        t.windows = windows;
        pending.push_back(std::move(t));
    }

    std::lock_guard lock(state_mutex_);
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const bool repeated = std::any_of(pending.begin(), pending.begin() + static_cast<std::ptrdiff_t>(i),
                                          [&](const Ticket& t) { return t.record_id == pending[i].record_id; });
        if (repeated || pending_exists_locked(pending[i].record_id, smd_id, TicketKind::Delegation)) {
            fail(ErrorCode::DuplicateTicket, "a delegation for this patient and SMD is already pending");
        }
    }
    std::vector<TicketId> ids;
    for (auto& t : pending) ids.push_back(queue_ticket_locked(std::move(t)));
    log("op=delegate_offer principal=" + s.principal_id + " smd=" + smd_id + " tickets=" + std::to_string(ids.size()));
    return ids;
}

std::vector<Ticket> AlsService::inbox(const std::string& token) {
    const Session s = require_session(token);
    std::lock_guard lock(state_mutex_);
    std::vector<Ticket> out;
    for (const auto& [id, t] : tickets_) {
        if (t.grantee_id == s.principal_id && t.stage == TicketStage::OFFERED) out.push_back(t);
    }
    return out;
}

std::vector<Ticket> AlsService::pmd_inbox(const std::string& token) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard lock(state_mutex_);
    std::vector<Ticket> out;
    for (const auto& [id, t] : tickets_) {
        if (t.pmd_id == s.principal_id && t.stage == TicketStage::ACCEPTED) out.push_back(t);
    }
    return out;
}

void AlsService::accept_ticket(const Session& caller, TicketId id, const LayeredCiphertext& eepid, TicketKind kind) {
    const auto caller_key = registry_->bound_key(caller.principal_id);
    std::lock_guard lock(state_mutex_);
    const auto it = tickets_.find(id);
    if (it == tickets_.end() || it->second.kind != kind) fail(ErrorCode::NotFound, "no such ticket");
    Ticket& t = it->second;
    if (t.grantee_id != caller.principal_id) fail(ErrorCode::NotAuthorized, "ticket is addressed to someone else");
    if (t.stage != TicketStage::OFFERED) fail(ErrorCode::InvalidStage, "ticket is not OFFERED");
    if (t.payload.layer_count() != 1) fail(ErrorCode::InvalidPayload, "offered payload must carry one layer");

    const auto& offered = t.payload.layers.front();
    const bool keeps_offered = std::find(eepid.layers.begin(), eepid.layers.end(), offered) != eepid.layers.end();
    const bool adds_own = caller_key && eepid.has_layer(*caller_key) && *caller_key != offered.key_id;
    if (eepid.layer_count() != 2 || !keeps_offered || !adds_own) {
        fail(ErrorCode::InvalidPayload, "expected the offered layer plus exactly one layer under the caller's key");
    }
    t.payload = eepid;
    t.stage = TicketStage::ACCEPTED;
    persist_ticket_locked(t);
}

void AlsService::complete_ticket(const Session& caller, TicketId id, const LayeredCiphertext& epid, TicketKind kind,
                                 const std::vector<Window>& windows) {
    Ticket t;
    {
        std::lock_guard lock(state_mutex_);
        const auto it = tickets_.find(id);
        if (it == tickets_.end() || it->second.kind != kind) fail(ErrorCode::NotFound, "no such ticket");
        t = it->second;
    }
    if (t.pmd_id != caller.principal_id) fail(ErrorCode::NotAuthorized, "ticket belongs to another PMD");
    if (t.stage != TicketStage::ACCEPTED) fail(ErrorCode::InvalidStage, "ticket is not ACCEPTED");

    const auto grantee_key = registry_->bound_key(t.grantee_id);
    const auto grantee_layer = std::find_if(t.payload.layers.begin(), t.payload.layers.end(), [&](const auto& l) {
        return grantee_key && l.key_id == *grantee_key;
    });
    if (epid.layer_count() != 1 || grantee_layer == t.payload.layers.end() || epid.layers.front() != *grantee_layer) {
        fail(ErrorCode::InvalidPayload, "expected exactly the grantee's layer");
    }

    const Role role = kind == TicketKind::Delegation ? Role::SMD : Role::PATIENT;
    const auto rec = registry_->record(t.record_id);
    if (!rec) fail(ErrorCode::NotFound, "patient no longer registered");
    if (const AccessGrant* existing = rec->grant_of(t.grantee_id)) {
        if (existing->role != role) fail(ErrorCode::InvalidGrant, "grantee already holds a different role");
        registry_->revoke_grant(t.record_id, t.grantee_id);
    }
    registry_->add_grant(t.record_id, AccessGrant{t.grantee_id, role, epid, windows});

    std::lock_guard lock(state_mutex_);
    auto& stored = tickets_.at(id);
    stored.stage = TicketStage::COMPLETED;
    persist_ticket_locked(stored);
}

void AlsService::accept_delegation(const std::string& token, TicketId id, const LayeredCiphertext& eepid) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    accept_ticket(s, id, eepid, TicketKind::Delegation);
    log("op=accept_delegation principal=" + s.principal_id + " ticket=" + std::to_string(id));
}

void AlsService::complete_delegation(const std::string& token, TicketId id, const LayeredCiphertext& epid_smd,
                                     const std::vector<Window>& windows) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    complete_ticket(s, id, epid_smd, TicketKind::Delegation, windows);
    log("op=complete_delegation principal=" + s.principal_id + " ticket=" + std::to_string(id));
}

void AlsService::revoke_grant(const std::string& token, const IdentityQuery& patient, const std::string& principal_id) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    const auto rec = registry_->find(patient);
    if (rec.pmd_grant().principal_id != s.principal_id) fail(ErrorCode::NotAuthorized, "caller is not the PMD");
    registry_->revoke_grant(rec.id, principal_id);
    log("op=revoke_grant principal=" + s.principal_id + " record=" + std::to_string(rec.id) + " revoked=" + principal_id);
}

// ---------------------------------------------------------------------------
// Patient access

Ticket AlsService::patient_access_request(const std::string& token) {
    const Session s = require(token, PrincipalKind::PATIENT);
    std::lock_guard flow(flow_mutex_);
    const auto rec = own_patient_record(s);
    const AccessGrant& pmd = rec.pmd_grant();
    Ticket t;
    t.kind = TicketKind::Access;
    t.pmd_id = pmd.principal_id;
    t.grantee_id = s.principal_id;
    t.record_id = rec.id;
    t.payload = pmd.epid;
    std::lock_guard lock(state_mutex_);
    if (pending_exists_locked(rec.id, s.principal_id, TicketKind::Access)) {
        fail(ErrorCode::DuplicateTicket, "an access request is already pending");
    }
    t.id = queue_ticket_locked(t);
    log("op=patient_access_request principal=" + s.principal_id + " ticket=" + std::to_string(t.id));
    return t;
}

void AlsService::accept_access(const std::string& token, TicketId id, const LayeredCiphertext& eepid) {
    const Session s = require(token, PrincipalKind::PATIENT);
    std::lock_guard flow(flow_mutex_);
    accept_ticket(s, id, eepid, TicketKind::Access);
    log("op=accept_access principal=" + s.principal_id + " ticket=" + std::to_string(id));
}

void AlsService::complete_access(const std::string& token, TicketId id, const LayeredCiphertext& epid_patient,
                                 const std::vector<Window>& windows) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    complete_ticket(s, id, epid_patient, TicketKind::Access, windows);
    log("op=complete_access principal=" + s.principal_id + " ticket=" + std::to_string(id));
}

void AlsService::claim_record(const std::string& token, const PatientIdentifier& pid, const crypto::Digest& verifier) {
    const Session s = require(token, PrincipalKind::PATIENT);
    std::lock_guard flow(flow_mutex_);
    require_patient_grant(s);
    std::size_t claimed = 0;
    for (const auto& store : stores_) {
        if (!store->contains(pid)) continue;
        try {
            store->claim_owner(pid, verifier);
            ++claimed;
        } catch (const Error& e) {
            // Attached legacy records have no owner slot.
            if (e.code() != ErrorCode::NotFound) throw;
        }
    }
    if (claimed == 0) fail(ErrorCode::NotFound, "no medical record to claim");
    log("op=claim_record principal=" + s.principal_id + " stores=" + std::to_string(claimed));
}

void AlsService::set_obfuscation_visibility(const std::string& token, const PatientIdentifier& pid,
                                            const crypto::Digest& owner_proof, const std::string& field,
                                            const std::string& md_id, bool hidden) {
    const Session s = require(token, PrincipalKind::PATIENT);
    std::lock_guard flow(flow_mutex_);
    require_patient_grant(s);
    const auto verifier = crypto::sha256(owner_proof);
    std::vector<std::size_t> owned;
    for (std::size_t i = 0; i < stores_.size(); ++i) {
        if (stores_[i]->owner_matches(pid, verifier)) owned.push_back(i);
    }
    if (owned.empty()) fail(ErrorCode::NotAuthorized, "record is not owned by the caller");
    std::size_t applied = 0;
    std::optional<Error> last;
    for (const auto i : owned) {
        try {
            stores_[i]->set_visibility(pid, field, md_id, hidden);
            ++applied;
        } catch (const Error& e) {
            last = e;
        }
    }
    if (applied == 0 && last) throw *last;
    log("op=set_visibility principal=" + s.principal_id + " field=" + field + " md=" + md_id +
        " hidden=" + (hidden ? "true" : "false"));
}

// ---------------------------------------------------------------------------
// Removal and key loss

std::size_t AlsService::remove_patient_stage1(const std::string& token, const PatientIdentifier& pid) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    const auto held = registry_->grants_held_by(s.principal_id);
    const bool is_pmd = std::any_of(held.begin(), held.end(), [](const auto& l) { return l.grant.role == Role::PMD; });
    if (!is_pmd) fail(ErrorCode::NotAuthorized, "only a PMD removes patients");
    const auto targets = target_stores(pid, std::nullopt);
    for (const auto i : targets) stores_[i]->remove_by_pid(pid);
    {
        std::lock_guard lock(state_mutex_);
        ++outstanding_stage1_[s.principal_id];
    }
    log("op=remove_patient_stage1 principal=" + s.principal_id + " stores=" + std::to_string(targets.size()));
    return targets.size();
}

void AlsService::remove_patient_stage2(const std::string& token, const LayeredCiphertext& epid) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    const auto id = registry_->find_by_grant_epid(s.principal_id, epid);
    if (!id) fail(ErrorCode::NotFound, "no registry entry holds this EPID for the caller");
    const auto rec = registry_->record(*id);
    if (!rec || rec->pmd_grant().principal_id != s.principal_id) {
        fail(ErrorCode::NotAuthorized, "only the PMD removes the registry entry");
    }
    bool in_order = false;
    {
        std::lock_guard lock(state_mutex_);
        auto& pending = outstanding_stage1_[s.principal_id];
        if (pending > 0) {
            --pending;
            in_order = true;
        }
    }
    if (!in_order) log("op=remove_patient_stage2 principal=" + s.principal_id + " warning=stage2_before_stage1");
    registry_->remove_entry(*id);
    {
        std::lock_guard lock(state_mutex_);
        std::vector<TicketId> stale;
        for (const auto& [tid, t] : tickets_) {
            if (t.record_id == *id && t.stage != TicketStage::COMPLETED) stale.push_back(tid);
        }
        for (const auto tid : stale) drop_ticket_locked(tid);
    }
    log("op=remove_patient_stage2 principal=" + s.principal_id + " record=" + std::to_string(*id));
}

RecoveryResult AlsService::recover_pmd_key(const std::string& token, const std::vector<EpidReplacement>& items) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    RecoveryResult result;
    for (std::size_t i = 0; i < items.size(); ++i) {
        try {
            const auto id = registry_->find_by_grant_epid(s.principal_id, items[i].old_epid);
            if (!id) fail(ErrorCode::NotFound, "old EPID does not match any grant of the caller");
            const auto rec = registry_->record(*id);
            if (!rec || rec->pmd_grant().principal_id != s.principal_id) {
                fail(ErrorCode::NotAuthorized, "grant is not a PMD grant of the caller");
            }
            registry_->replace_grant_epid(*id, s.principal_id, items[i].new_epid);
            ++result.replaced;

            std::lock_guard lock(state_mutex_);
            std::vector<TicketId> reoffer;
            for (auto& [tid, t] : tickets_) {
                if (t.record_id != *id || t.pmd_id != s.principal_id) continue;
                if (t.stage == TicketStage::OFFERED) {
                    t.payload = items[i].new_epid;
                    persist_ticket_locked(t);
                } else if (t.stage == TicketStage::ACCEPTED) {
                    reoffer.push_back(tid);
                }
            }
            for (const auto tid : reoffer) {
                Ticket fresh = tickets_.at(tid);
                drop_ticket_locked(tid);
                fresh.stage = TicketStage::OFFERED;
                fresh.payload = items[i].new_epid;
                queue_ticket_locked(std::move(fresh));
            }
        } catch (const Error& e) {
            result.errors.push_back(ItemError{i, e.code(), e.what()});
        }
    }
    log("op=recover_pmd_key principal=" + s.principal_id + " replaced=" + std::to_string(result.replaced) +
        " errors=" + std::to_string(result.errors.size()));
    return result;
}

SmdRecoveryResult AlsService::recover_smd_key(const std::string& token, const crypto::KeyId& new_key_id) {
    const Session s = require(token, PrincipalKind::MD);
    std::lock_guard flow(flow_mutex_);
    registry_->bind_key(s.principal_id, new_key_id);
    SmdRecoveryResult result;
    for (const auto& listing : registry_->grants_held_by(s.principal_id)) {
        if (listing.grant.role != Role::SMD) continue;
        const auto rec = registry_->record(listing.record_id);
        registry_->revoke_grant(listing.record_id, s.principal_id);
        ++result.revoked;
        Ticket t;
        t.kind = TicketKind::Delegation;
        t.pmd_id = rec->pmd_grant().principal_id;
        t.grantee_id = s.principal_id;
        t.record_id = listing.record_id;
        t.payload = rec->pmd_grant().epid;
        t.windows = listing.grant.windows;
        std::lock_guard lock(state_mutex_);
        if (!pending_exists_locked(t.record_id, t.grantee_id, TicketKind::Delegation)) {
            result.tickets.push_back(queue_ticket_locked(std::move(t)));
        }
    }
    {
        // Accepted tickets carry a layer under the lost key; offer them again.
        std::lock_guard lock(state_mutex_);
        std::vector<TicketId> stale;
        for (const auto& [tid, t] : tickets_) {
            if (t.grantee_id == s.principal_id && t.kind == TicketKind::Delegation && t.stage == TicketStage::ACCEPTED) {
                stale.push_back(tid);
            }
        }
        for (const auto tid : stale) {
            Ticket fresh = tickets_.at(tid);
            drop_ticket_locked(tid);
            const auto rec = registry_->record(fresh.record_id);
            if (!rec) continue;
            fresh.stage = TicketStage::OFFERED;
            fresh.payload = rec->pmd_grant().epid;
            result.tickets.push_back(queue_ticket_locked(std::move(fresh)));
        }
    }
    log("op=recover_smd_key principal=" + s.principal_id + " revoked=" + std::to_string(result.revoked) +
        " tickets=" + std::to_string(result.tickets.size()));
    return result;
}

// ---------------------------------------------------------------------------
// Search, statistics, sweeps

std::vector<StoreHit> AlsService::keyword_search(const std::string& token, const std::vector<std::string>& terms) {
    const Session s = require_session(token);
    std::vector<StoreHit> out;
    for (std::size_t i = 0; i < stores_.size(); ++i) {
        for (auto& hit : stores_[i]->keyword_search(terms, s.principal_id)) out.push_back(StoreHit{i, std::move(hit)});
    }
    log("op=keyword_search principal=" + s.principal_id + " hits=" + std::to_string(out.size()));
    return out;
}

double AlsService::stats(const std::string& token, const std::string& field, ehr::Statistic statistic) {
    const Session s = require(token, PrincipalKind::MD);
    std::vector<double> values;
    for (const auto& store : stores_) {
        const auto v = store->numeric_values(field);
        values.insert(values.end(), v.begin(), v.end());
    }
    log("op=stats principal=" + s.principal_id + " field=" + field);
    return ehr::compute_statistic(values, statistic);
}

std::size_t AlsService::sweep_expired() {
    std::lock_guard flow(flow_mutex_);
    const auto removed = registry_->sweep_expired(clock_->now());
    log("op=sweep_expired removed=" + std::to_string(removed));
    return removed;
}

} // namespace nusa::als
