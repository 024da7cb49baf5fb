#include "nusa/als/dispatcher.hpp"

namespace nusa::als {

using nlohmann::json;

namespace {

std::optional<std::size_t> optional_store(const json& args) {
    if (auto it = args.find("store"); it != args.end() && !it->is_null()) return it->get<std::size_t>();
    return std::nullopt;
}

std::vector<Window> windows_arg(const json& args) { return args.value("windows", std::vector<Window>{}); }

json listing_json(const registry::PatientListing& l) {
    return {{"record_id", l.record_id}, {"identity", l.identity}, {"grant", l.grant}};
}

} // namespace

Dispatcher::Dispatcher(AlsService& service) : service_(service) { install(); }

json Dispatcher::ok(json payload) { return {{"status", "ok"}, {"payload", std::move(payload)}}; }

json Dispatcher::error(ErrorCode code, const std::string& message) {
    return {{"status", "error"}, {"error", std::string(to_string(code))}, {"message", message}};
}

void Dispatcher::install() {
    auto& s = service_;
    handlers_["login"] = [&s](const std::string&, const json& a) {
        return json(s.authenticate(a.at("principal").get<std::string>(), a.at("credential").get<std::string>()));
    };
    handlers_["renew"] = [&s](const std::string& t, const json&) { return json(s.renew(t)); };
    handlers_["register_key"] = [&s](const std::string& t, const json& a) {
        s.register_key(t, fixed_from_hex<crypto::kKeyIdSize>(a.at("key_id").get<std::string>()));
        return json::object();
    };
    handlers_["populate"] = [&s](const std::string& t, const json& a) {
        std::vector<PopulateRecord> records;
        for (const auto& r : a.value("records", json::array())) {
            records.push_back(PopulateRecord{r.value("store", std::size_t{0}), r.at("record").get<ehr::MedicalRecord>()});
        }
        const auto id = s.populate(t, a.at("identity").get<Identity>(), a.at("epid").get<LayeredCiphertext>(), records);
        return json{{"record_id", id}};
    };
    handlers_["query_epid"] = [&s](const std::string& t, const json& a) {
        const auto ans = s.query_patient_epid(t, a.value("query", json::object()).get<IdentityQuery>());
        return json{{"record_id", ans.record_id}, {"identity", ans.identity}, {"epid", ans.epid}};
    };
    handlers_["fetch_records"] = [&s](const std::string& t, const json& a) {
        json views = json::array();
        for (const auto& v : s.fetch_records(t, a.at("pid").get<PatientIdentifier>())) {
            views.push_back({{"store", v.store}, {"view", v.view}});
        }
        return json{{"views", views}};
    };
    handlers_["list_patients"] = [&s](const std::string& t, const json&) {
        json out = json::array();
        for (const auto& l : s.list_patients(t)) out.push_back(listing_json(l));
        return json{{"patients", out}};
    };
    handlers_["update_record"] = [&s](const std::string& t, const json& a) {
        const auto n = s.update_record(t, a.at("pid").get<PatientIdentifier>(), a.at("delta").get<ehr::RecordDelta>(),
                                       optional_store(a));
        return json{{"stores", n}};
    };
    handlers_["replace_record"] = [&s](const std::string& t, const json& a) {
        const auto n = s.replace_record(t, a.at("pid").get<PatientIdentifier>(),
                                        a.at("record").get<ehr::MedicalRecord>(), optional_store(a));
        return json{{"stores", n}};
    };
    handlers_["attach_legacy"] = [&s](const std::string& t, const json& a) {
        const auto n = s.attach_legacy(t, a.at("store").get<std::size_t>(), a.at("match").get<ehr::FieldMap>(),
                                       a.at("pid").get<PatientIdentifier>());
        return json{{"attached", n}};
    };
    handlers_["delegate_offer"] = [&s](const std::string& t, const json& a) {
        const auto ids = s.delegate_offer(t, a.at("patients").get<std::vector<IdentityQuery>>(),
                                          a.at("smd").get<std::string>(), windows_arg(a));
        return json{{"tickets", ids}};
    };
    handlers_["inbox"] = [&s](const std::string& t, const json&) { return json{{"tickets", s.inbox(t)}}; };
    handlers_["pmd_inbox"] = [&s](const std::string& t, const json&) { return json{{"tickets", s.pmd_inbox(t)}}; };
    handlers_["accept_delegation"] = [&s](const std::string& t, const json& a) {
        s.accept_delegation(t, a.at("ticket").get<TicketId>(), a.at("eepid").get<LayeredCiphertext>());
        return json::object();
    };
    handlers_["complete_delegation"] = [&s](const std::string& t, const json& a) {
        s.complete_delegation(t, a.at("ticket").get<TicketId>(), a.at("epid").get<LayeredCiphertext>(),
                              windows_arg(a));
        return json::object();
    };
    handlers_["revoke_grant"] = [&s](const std::string& t, const json& a) {
        s.revoke_grant(t, a.at("patient").get<IdentityQuery>(), a.at("principal").get<std::string>());
        return json::object();
    };
    handlers_["patient_access_request"] = [&s](const std::string& t, const json&) {
        return json{{"ticket", s.patient_access_request(t)}};
    };
    handlers_["accept_access"] = [&s](const std::string& t, const json& a) {
        s.accept_access(t, a.at("ticket").get<TicketId>(), a.at("eepid").get<LayeredCiphertext>());
        return json::object();
    };
    handlers_["complete_access"] = [&s](const std::string& t, const json& a) {
        s.complete_access(t, a.at("ticket").get<TicketId>(), a.at("epid").get<LayeredCiphertext>(), windows_arg(a));
        return json::object();
    };
    handlers_["claim_record"] = [&s](const std::string& t, const json& a) {
        s.claim_record(t, a.at("pid").get<PatientIdentifier>(),
                       fixed_from_hex<crypto::kDigestSize>(a.at("verifier").get<std::string>()));
        return json::object();
    };
    handlers_["set_visibility"] = [&s](const std::string& t, const json& a) {
        s.set_obfuscation_visibility(t, a.at("pid").get<PatientIdentifier>(),
                                     fixed_from_hex<crypto::kDigestSize>(a.at("proof").get<std::string>()),
                                     a.at("field").get<std::string>(), a.at("md").get<std::string>(),
                                     a.at("hidden").get<bool>());
        return json::object();
    };
    handlers_["remove_patient_stage1"] = [&s](const std::string& t, const json& a) {
        return json{{"stores", s.remove_patient_stage1(t, a.at("pid").get<PatientIdentifier>())}};
    };
    handlers_["remove_patient_stage2"] = [&s](const std::string& t, const json& a) {
        s.remove_patient_stage2(t, a.at("epid").get<LayeredCiphertext>());
        return json::object();
    };
    handlers_["recover_pmd_key"] = [&s](const std::string& t, const json& a) {
        std::vector<EpidReplacement> items;
        for (const auto& item : a.at("items")) {
            items.push_back({item.at("old").get<LayeredCiphertext>(), item.at("new").get<LayeredCiphertext>()});
        }
        const auto r = s.recover_pmd_key(t, items);
        json errors = json::array();
        for (const auto& e : r.errors) {
            errors.push_back({{"index", e.index}, {"error", std::string(to_string(e.code))}, {"message", e.message}});
        }
        return json{{"replaced", r.replaced}, {"errors", errors}};
    };
    handlers_["recover_smd_key"] = [&s](const std::string& t, const json& a) {
        const auto r = s.recover_smd_key(t, fixed_from_hex<crypto::kKeyIdSize>(a.at("key_id").get<std::string>()));
        return json{{"revoked", r.revoked}, {"tickets", r.tickets}};
    };
    handlers_["keyword_search"] = [&s](const std::string& t, const json& a) {
        json hits = json::array();
        for (const auto& h : s.keyword_search(t, a.at("terms").get<std::vector<std::string>>())) {
            hits.push_back({{"store", h.store}, {"pid", h.hit.pid}, {"field", h.hit.field}});
        }
        return json{{"hits", hits}};
    };
    handlers_["stats"] = [&s](const std::string& t, const json& a) {
        const auto v = s.stats(t, a.at("field").get<std::string>(),
                               ehr::statistic_from_string(a.at("statistic").get<std::string>()));
        return json{{"value", v}};
    };
}

json Dispatcher::dispatch(const json& request) {
    try {
        if (!request.is_object()) return error(ErrorCode::ProtocolError, "request must be a JSON object");
        const auto op = request.value("op", std::string{});
        const auto it = handlers_.find(op);
        if (it == handlers_.end()) return error(ErrorCode::ProtocolError, "unknown op '" + op + "'");
        const auto token = request.value("token", std::string{});
        const json args = request.value("args", json::object());
        return ok(it->second(token, args));
    } catch (const Error& e) {
        return error(e.code(), e.what());
    } catch (const json::exception& e) {
        return error(ErrorCode::InvalidInput, e.what());
    } catch (const std::exception& e) {
        return error(ErrorCode::ProtocolError, e.what());
    }
}

json Dispatcher::Connection::handle(const json& request) {
    if (!handshaken_) {
        if (request.is_object() && request.value("op", std::string{}) == "hello" &&
            request.value("version", std::string{}) == kProtocolVersion) {
            handshaken_ = true;
            return ok({{"version", kProtocolVersion}});
        }
        return error(ErrorCode::ProtocolError, "expected hello with version nusa/1");
    }
    return dispatcher_->dispatch(request);
}

std::string Dispatcher::Connection::handle_line(std::string_view line) {
    json request;
    try {
        request = json::parse(line);
    } catch (const json::parse_error& e) {
        return error(ErrorCode::ProtocolError, std::string("malformed JSON: ") + e.what()).dump();
    }
    return handle(request).dump();
}

} // namespace nusa::als
