#include "nusa/identity.hpp"

#include "nusa/error.hpp"

namespace nusa {
namespace {

std::string ascii_upper(std::string s) {
    for (auto& c : s) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    }
    return s;
}

template <typename T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

template <typename T>
void get_optional(const nlohmann::json& j, const char* key, std::optional<T>& v) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) v = it->get<T>();
}

} // namespace

IdentityQuery IdentityQuery::by_fiscal_code(std::string code) {
    IdentityQuery q;
    q.fiscal_code = std::move(code);
    return q;
}

IdentityQuery IdentityQuery::from(const Identity& id) { return by_fiscal_code(id.fiscal_code); }

void validate(const IdentityQuery& query) {
    if (query.fiscal_code && !query.fiscal_code->empty()) return;
    if (query.surname && query.given_name && query.birthdate) return;
    fail(ErrorCode::InvalidInput, "identity query needs a fiscal code or surname, given name and birthdate");
}

bool matches(const IdentityQuery& query, const Identity& identity) {
    if (query.fiscal_code && !query.fiscal_code->empty()) {
        return *query.fiscal_code == identity.fiscal_code;
    }
    return query.surname && query.given_name && query.birthdate &&
           *query.surname == identity.surname && *query.given_name == identity.given_name &&
           *query.birthdate == identity.birthdate;
}

std::string canonical_personal_data(const Identity& identity) {
    return ascii_upper(identity.surname) + "|" + ascii_upper(identity.given_name) + "|" +
           identity.birthdate + "|" + identity.fiscal_code;
}

void to_json(nlohmann::json& j, const Identity& id) {
    j = {{"surname", id.surname},
         {"given_name", id.given_name},
         {"birthdate", id.birthdate},
         {"fiscal_code", id.fiscal_code}};
}

void from_json(const nlohmann::json& j, Identity& id) {
    id.surname = j.at("surname").get<std::string>();
    id.given_name = j.at("given_name").get<std::string>();
    id.birthdate = j.at("birthdate").get<std::string>();
    id.fiscal_code = j.at("fiscal_code").get<std::string>();
}

void to_json(nlohmann::json& j, const IdentityQuery& q) {
    j = nlohmann::json::object();
    put_optional(j, "surname", q.surname);
    put_optional(j, "given_name", q.given_name);
    put_optional(j, "birthdate", q.birthdate);
    put_optional(j, "fiscal_code", q.fiscal_code);
}

void from_json(const nlohmann::json& j, IdentityQuery& q) {
    get_optional(j, "surname", q.surname);
    get_optional(j, "given_name", q.given_name);
    get_optional(j, "birthdate", q.birthdate);
    get_optional(j, "fiscal_code", q.fiscal_code);
}

} // namespace nusa
