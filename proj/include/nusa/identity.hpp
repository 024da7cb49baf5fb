#pragma once

#include <optional>
#include <string>

#include <json.hpp>

namespace nusa {

/// Patient demographics as held by the Patient Registry and the master terminal.
struct Identity {
    std::string surname;
    std::string given_name;
    std::string birthdate;  // ISO-8601 date, YYYY-MM-DD
    std::string fiscal_code;

    friend bool operator==(const Identity&, const Identity&) = default;
};

/// Partial identity. fiscal_code takes precedence; otherwise surname, given_name
/// and birthdate must all be present and match exactly.
struct IdentityQuery {
    std::optional<std::string> surname;
    std::optional<std::string> given_name;
    std::optional<std::string> birthdate;
    std::optional<std::string> fiscal_code;

    static IdentityQuery by_fiscal_code(std::string code);
    static IdentityQuery from(const Identity& id);
};

/// Throws InvalidInput when the query has neither a fiscal code nor the full name triple.
void validate(const IdentityQuery& query);
bool matches(const IdentityQuery& query, const Identity& identity);

/// UPPER(surname) | UPPER(given_name) | birthdate | fiscal_code. Only ASCII letters are
/// case-folded.
std::string canonical_personal_data(const Identity& identity);

void to_json(nlohmann::json& j, const Identity& id);
void from_json(const nlohmann::json& j, Identity& id);
void to_json(nlohmann::json& j, const IdentityQuery& q);
void from_json(const nlohmann::json& j, IdentityQuery& q);

} // namespace nusa
