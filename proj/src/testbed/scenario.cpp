#include "nusa/testbed/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "nusa/error.hpp"
#include "nusa/testbed/deployment.hpp"

namespace nusa::testbed {

using nlohmann::json;

const std::vector<std::string>& known_operations() {
    static const std::vector<std::string> ops = {
        // terminal operations
        "login", "populate", "lookup", "view", "update", "edit_local", "sync", "remove_patient", "offer",
        "accept_all", "finalize_all", "revoke", "regenerate_key", "request_access", "set_visibility", "search",
        "stats", "list_patients", "attach_legacy",
        // harness operations
        "advance_clock", "set_clock", "sweep", "import_legacy", "corrupt", "barrier"};
    return ops;
}

namespace {

bool is_harness_op(const std::string& op) {
    return op == "advance_clock" || op == "set_clock" || op == "sweep" || op == "import_legacy" || op == "corrupt" ||
           op == "barrier";
}

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
    fail(ErrorCode::ParseError, source + ":" + std::to_string(line) + ": " + what);
}

ActorSpec parse_actor(const std::string& name, const json& j) {
    ActorSpec a;
    a.name = name;
    a.principal = j.value("principal", name);
    a.terminal = terminal::terminal_kind_from_string(j.value("terminal", std::string("master")));
    if (j.contains("fiscal_code")) a.fiscal_code = j.at("fiscal_code").get<std::string>();
    if (a.terminal == terminal::TerminalKind::Patient && !a.fiscal_code) {
        fail(ErrorCode::InvalidInput, "patient actor " + name + " needs a fiscal_code");
    }
    return a;
}

} // namespace

Scenario Scenario::parse(std::istream& in, const std::string& source) {
    Scenario s;
    bool have_header = false;
    std::set<std::string> actor_names;
    std::string text;
    std::size_t lineno = 0;
    while (std::getline(in, text)) {
        ++lineno;
        const auto first = text.find_first_not_of(" \t\r");
        if (first == std::string::npos || text.compare(first, 2, "//") == 0) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            parse_fail(source, lineno, e.what());
        }
        if (!j.is_object()) parse_fail(source, lineno, "expected a JSON object");
        try {
            if (!have_header) {
                if (!j.contains("scenario")) parse_fail(source, lineno, "first line must be the scenario header");
                s.name = j.at("scenario").get<std::string>();
                s.seed = j.value("seed", std::uint64_t{0});
                s.ehr_stores = j.value("ehr_stores", std::size_t{2});
                s.read_only_stores = j.value("read_only_stores", std::vector<std::size_t>{});
                s.work_factor = j.value("work_factor", std::uint32_t{1024});
                s.session_lifetime_s = j.value("session_lifetime_s", std::int64_t{30 * 60});
                s.start_time = j.value("start_time", Timestamp{1'700'000'000});
                s.expect_violations = j.value("expect_violations", std::size_t{0});
                for (const auto& [name, spec] : j.at("actors").items()) {
                    if (name == kHarnessActor) parse_fail(source, lineno, "actor name 'harness' is reserved");
                    s.actors.push_back(parse_actor(name, spec));
                    actor_names.insert(name);
                }
                if (s.ehr_stores == 0) parse_fail(source, lineno, "ehr_stores must be positive");
                if (s.work_factor == 0) parse_fail(source, lineno, "work_factor must be positive");
                have_header = true;
                continue;
            }
            Step step;
            step.line = lineno;
            step.actor = j.value("actor", std::string(kHarnessActor));
            step.op = j.at("op").get<std::string>();
            step.args = j.value("args", json::object());
            step.expect = j.value("expect", std::string("ok"));
            step.check = j.value("check", json::object());
            step.concurrent = j.value("concurrent", false);
            const auto& ops = known_operations();
            if (std::find(ops.begin(), ops.end(), step.op) == ops.end()) {
                parse_fail(source, lineno, "unknown operation " + step.op);
            }
            const bool harness = step.actor == kHarnessActor;
            if (!harness && !actor_names.count(step.actor)) parse_fail(source, lineno, "unknown actor " + step.actor);
            if (harness != is_harness_op(step.op)) {
                parse_fail(source, lineno, "operation " + step.op + (harness ? " needs a terminal actor"
                                                                               : " is run by the harness"));
            }
            if (step.expect != "ok" && !error_code_from_string(step.expect)) {
                parse_fail(source, lineno, "unknown expected outcome " + step.expect);
            }
            if (!step.args.is_object() || !step.check.is_object()) {
                parse_fail(source, lineno, "args and check must be objects");
            }
            if (step.concurrent && (harness || s.steps.empty())) {
                parse_fail(source, lineno, "concurrent needs a preceding step and a terminal actor");
            }
            s.steps.push_back(std::move(step));
        } catch (const json::exception& e) {
            parse_fail(source, lineno, e.what());
        } catch (const Error& e) {
            if (e.code() == ErrorCode::ParseError) throw;
            parse_fail(source, lineno, e.what());
        }
    }
    if (!have_header) parse_fail(source, lineno, "missing scenario header");
    return s;
}

Scenario Scenario::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) fail(ErrorCode::ParseError, "cannot read scenario " + file.string());
    return parse(in, file.string());
}

bool Report::steps_passed() const {
    return std::all_of(steps.begin(), steps.end(), [](const StepOutcome& s) { return s.passed; });
}

json Report::to_json(bool with_timing) const {
    json steps_json = json::array();
    json steps_ms = json::array();
    for (const auto& s : steps) {
        json entry = {{"index", s.index}, {"line", s.line},       {"actor", s.actor},  {"op", s.op},
                      {"expect", s.expect}, {"outcome", s.outcome}, {"passed", s.passed}};
        if (!s.detail.empty()) entry["detail"] = s.detail;
        steps_json.push_back(std::move(entry));
        steps_ms.push_back(s.elapsed_ms);
    }
    json j = {{"scenario", scenario},
              {"seed", seed},
              {"passed", passed()},
              {"steps", steps_json},
              {"scan", {{"violations", violations}, {"expected", expected_violations}, {"passed", scan_passed()}}}};
    if (with_timing) j["timing"] = {{"total_ms", total_ms}, {"steps_ms", steps_ms}};
    return j;
}

namespace {

const char* const kSurnames[] = {"Rossi",  "Bianchi", "Romano",  "Colombo", "Ricci",   "Marino", "Greco",
                                 "Bruno",  "Gallo",   "Conti",   "Costa",   "Giordano", "Mancini", "Rizzo",
                                 "Lombardi", "Moretti", "Barbieri", "Fontana", "Santoro", "Mariani"};
const char* const kGivenNames[] = {"Marco", "Giulia", "Luca",   "Sara",   "Paolo",  "Elena",  "Andrea",
                                   "Chiara", "Matteo", "Anna",  "Simone", "Laura",  "Davide", "Marta"};
const char* const kBloodTypes[] = {"A+", "A-", "B+", "B-", "AB+", "AB-", "0+", "0-"};
const char* const kSymptoms[] = {"headache", "fever",     "cough",   "fatigue", "nausea",
                                 "dizziness", "insomnia", "rash",    "asthma",  "migraine"};

template <std::size_t N>
const char* pick(std::mt19937_64& rng, const char* const (&items)[N]) {
    return items[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

std::string fiscal_code(std::mt19937_64& rng) {
    static constexpr std::string_view kMonths = "ABCDEHLMPRST";
    std::uniform_int_distribution<int> letter(0, 25), digit(0, 9);
    std::string code;
    auto letters = [&](int n) {
        for (int i = 0; i < n; ++i) code += static_cast<char>('A' + letter(rng));
    };
    auto digits = [&](int n) {
        for (int i = 0; i < n; ++i) code += static_cast<char>('0' + digit(rng));
    };
    letters(6);
    digits(2);
    code += kMonths[std::uniform_int_distribution<std::size_t>(0, kMonths.size() - 1)(rng)];
    digits(2);
    letters(1);
    digits(3);
    letters(1);
    return code;
}

terminal::LegacyPatient generate_patient(std::mt19937_64& rng, const std::vector<std::size_t>& stores,
                                         bool obfuscated) {
    terminal::LegacyPatient p;
    p.identity.surname = pick(rng, kSurnames);
    p.identity.given_name = pick(rng, kGivenNames);
    char date[16];
    std::snprintf(date, sizeof date, "%04d-%02d-%02d", std::uniform_int_distribution<int>(1930, 2015)(rng),
                  std::uniform_int_distribution<int>(1, 12)(rng), std::uniform_int_distribution<int>(1, 28)(rng));
    p.identity.birthdate = date;
    p.identity.fiscal_code = fiscal_code(rng);
    p.clear["blood_type"] = pick(rng, kBloodTypes);
    p.clear["glucose"] = std::uniform_int_distribution<int>(70, 180)(rng);
    p.clear["age"] = std::uniform_int_distribution<int>(1, 95)(rng);
    if (obfuscated) {
        const std::string a = pick(rng, kSymptoms);
        const std::string b = pick(rng, kSymptoms);
        p.obfuscated["notes"] = {"reports " + a + " and " + b, a == b ? std::vector<std::string>{a}
                                                                       : std::vector<std::string>{a, b}};
    }
    p.stores = stores;
    return p;
}

std::string format_json(const json& v) { return v.dump(); }

struct Actor {
    ActorSpec spec;
    std::unique_ptr<terminal::Terminal> term;
    bool logged_in = false;
};

class Runner {
public:
    Runner(const Scenario& scenario, const RunOptions& options)
        : scenario_(scenario), options_(options), seed_(options.seed.value_or(scenario.seed)) {}

    RunResult run();

private:
    StepOutcome execute(std::size_t index);
    json perform(std::size_t index, const Step& step);
    json perform_terminal(std::size_t index, const Step& step, Actor& actor);
    json perform_harness(const Step& step);
    std::optional<std::string> verify(const Step& step, const json& result) const;

    IdentityQuery query_of(const json& value) const;
    std::vector<Window> windows_of(const json& args) const;
    json lookup_result(const terminal::PatientLookup& lookup) const;
    void collect_truth();

    const Scenario& scenario_;
    const RunOptions& options_;
    std::uint64_t seed_;
    std::unique_ptr<Deployment> deployment_;
    std::map<std::string, Actor> actors_;

    mutable std::mutex shared_mutex_;
    std::map<std::size_t, std::vector<Identity>> generated_;  // by step index, so "#n" is order-stable
    std::map<std::string, TruthEntry> truth_;                  // by PID hex
};

IdentityQuery Runner::query_of(const json& value) const {
    if (value.is_object()) return value.get<IdentityQuery>();
    if (!value.is_string()) fail(ErrorCode::InvalidInput, "patient reference must be a string or an object");
    const auto ref = value.get<std::string>();
    if (!ref.empty() && ref[0] == '#') {
        std::size_t wanted = std::stoul(ref.substr(1));
        std::lock_guard lock(shared_mutex_);
        for (const auto& [step, ids] : generated_) {
            if (wanted < ids.size()) return IdentityQuery::from(ids[wanted]);
            wanted -= ids.size();
        }
        fail(ErrorCode::InvalidInput, "no generated patient " + ref);
    }
    return IdentityQuery::by_fiscal_code(ref);
}

std::vector<Window> Runner::windows_of(const json& args) const {
    if (args.contains("window")) {
        // Relative to the current clock: [from_now, to_now].
        const auto rel = args.at("window").get<std::array<std::int64_t, 2>>();
        const auto now = deployment_->clock().now();
        return {Window{now + rel[0], now + rel[1]}};
    }
    return args.value("windows", std::vector<Window>{});
}

json Runner::lookup_result(const terminal::PatientLookup& lookup) const {
    // "fields"/"revealed" merge every view (earlier stores win); "stores" keeps them apart.
    json fields = json::object();
    json revealed = json::object();
    json stores = json::object();
    std::size_t legacy = 0;
    for (auto it = lookup.views.rbegin(); it != lookup.views.rend(); ++it) {
        json store_fields = json::object();
        for (const auto& [k, val] : it->view.clear_fields) fields[k] = store_fields[k] = val;
        for (const auto& [k, text] : it->revealed) revealed[k] = store_fields[k] = text;
        legacy += it->view.legacy.size();
        stores[std::to_string(it->store)] = store_fields;
    }
    return {{"views", lookup.views.size()}, {"fields", fields}, {"revealed", revealed}, {"stores", stores},
            {"legacy", legacy}};
}

json Runner::perform_harness(const Step& step) {
    const auto& a = step.args;
    if (step.op == "advance_clock" || step.op == "set_clock") {
        auto* clock = deployment_->manual_clock();
        if (!clock) fail(ErrorCode::InvalidOperation, "deployment runs on the system clock");
        if (step.op == "advance_clock") {
            clock->advance(a.at("seconds").get<std::int64_t>());
        } else {
            clock->set(a.at("at").get<Timestamp>());
        }
        return {{"now", clock->now()}};
    }
    // Harness steps never run concurrently with anything, so a barrier only orders the steps around it.
    if (step.op == "barrier") return json::object();
    if (step.op == "sweep") return {{"removed", deployment_->als().sweep_expired()}};
    if (step.op == "import_legacy") {
        auto& store = deployment_->store(a.at("store").get<std::size_t>());
        std::size_t imported = 0;
        for (const auto& r : a.at("records")) {
            store.add_legacy(r.get<ehr::LegacyRecord>());
            ++imported;
        }
        return {{"imported", imported}};
    }
    if (step.op == "corrupt") {
        // Fault injection for the privacy scan: plant a linkage on the deployment side.
        const auto query = query_of(a.at("patient"));
        std::optional<TruthEntry> target;
        {
            std::lock_guard lock(shared_mutex_);
            for (const auto& [hex, t] : truth_) {
                if (matches(query, t.identity)) target = t;
            }
        }
        if (!target) fail(ErrorCode::NotFound, "patient unknown to the harness");
        const auto kind = a.at("kind").get<std::string>();
        std::filesystem::path file;
        json line;
        const auto& state = options_.state_dir;
        if (kind == "pid_into_pr") {
            file = state / "pr" / "registry.journal";
            line = {{"op", "note"}, {"pid", target->pid.hex()}};
        } else if (kind == "identity_into_ehr") {
            file = state / ("ehr" + std::to_string(a.value("store", std::size_t{0}))) / "records.journal";
            line = {{"op", "note"}, {"fiscal_code", target->identity.fiscal_code}};
        } else if (kind == "link_into_als") {
            file = state / "als" / "als.log";
            line = {{"pid", target->pid.hex()}, {"surname", target->identity.surname}};
        } else {
            fail(ErrorCode::InvalidInput, "unknown corruption " + kind);
        }
        std::ofstream out(file, std::ios::app);
        out << line.dump() << '\n';
        return {{"planted", 1}};
    }
    fail(ErrorCode::InvalidInput, "unknown harness operation " + step.op);
}

json Runner::perform_terminal(std::size_t index, const Step& step, Actor& actor) {
    auto& t = *actor.term;
    const auto& a = step.args;
    if (step.op == "login") {
        t.login();
        actor.logged_in = true;
        return json::object();
    }
    if (!actor.logged_in) {
        t.login();
        actor.logged_in = true;
    }

    if (step.op == "populate") {
        std::vector<terminal::LegacyPatient> patients;
        if (a.contains("generate")) {
            std::seed_seq seq{seed_, static_cast<std::uint64_t>(index)};
            std::mt19937_64 rng(seq);
            const auto stores = a.value("stores", std::vector<std::size_t>{0});
            const bool obfuscated = a.value("obfuscated", true);
            std::vector<Identity> ids;
            for (std::size_t i = 0, n = a.at("generate").get<std::size_t>(); i < n; ++i) {
                patients.push_back(generate_patient(rng, stores, obfuscated));
                ids.push_back(patients.back().identity);
            }
            std::lock_guard lock(shared_mutex_);
            generated_[index] = std::move(ids);
        } else {
            patients = a.at("patients").get<std::vector<terminal::LegacyPatient>>();
        }
        const auto results = t.master_populate(patients);
        std::size_t ok = 0;
        std::optional<ErrorCode> first_error;
        for (const auto& r : results) {
            if (r.ok()) {
                ++ok;
            } else if (!first_error) {
                first_error = r.error;
            }
        }
        if (first_error && a.value("strict", true)) {
            fail(*first_error, std::to_string(results.size() - ok) + " of " + std::to_string(results.size()) +
                                   " patients failed");
        }
        return {{"populated", ok}, {"errors", results.size() - ok}};
    }
    if (step.op == "lookup") return lookup_result(t.lookup_patient(query_of(a.at("patient"))));
    if (step.op == "view") return lookup_result(t.patient_view());
    if (step.op == "update") {
        ehr::RecordDelta delta;
        delta.set_clear = a.value("set", ehr::FieldMap{});
        delta.erase_clear = a.value("erase", std::vector<std::string>{});
        return {{"stores", t.update_record(query_of(a.at("patient")), delta)}};
    }
    if (step.op == "edit_local") {
        t.edit_local(query_of(a.at("patient")), a.at("field").get<std::string>(), a.at("value"));
        return json::object();
    }
    if (step.op == "sync") {
        const auto r = t.sync_master();
        if (!r.errors.empty()) fail(*r.errors.front().error, r.errors.front().message);
        return {{"fetched", r.fetched}, {"refreshed", r.refreshed}, {"pushed", r.pushed}};
    }
    if (step.op == "remove_patient") {
        t.remove_patient(query_of(a.at("patient")));
        return json::object();
    }
    if (step.op == "offer") {
        std::vector<IdentityQuery> patients;
        for (const auto& p : a.at("patients")) patients.push_back(query_of(p));
        return {{"tickets", t.offer_delegation(patients, a.at("smd").get<std::string>(), windows_of(a)).size()}};
    }
    if (step.op == "accept_all") {
        const auto tickets = t.inbox();
        for (const auto& ticket : tickets) t.accept_offered(ticket);
        return {{"accepted", tickets.size()}};
    }
    if (step.op == "finalize_all") {
        const auto tickets = t.pending_accepted();
        std::optional<std::vector<Window>> windows;
        if (a.contains("window") || a.contains("windows")) windows = windows_of(a);
        for (const auto& ticket : tickets) t.finalize_accepted(ticket, windows);
        return {{"completed", tickets.size()}};
    }
    if (step.op == "revoke") {
        t.revoke(query_of(a.at("patient")), a.at("principal").get<std::string>());
        return json::object();
    }
    if (step.op == "regenerate_key") {
        const auto reason = a.value("reason", std::string("pmd"));
        if (reason != "pmd" && reason != "smd") fail(ErrorCode::InvalidInput, "reason must be pmd or smd");
        const auto r = t.regenerate_key(reason == "pmd" ? terminal::KeyLossReason::PmdLoss
                                                        : terminal::KeyLossReason::SmdLoss);
        return {{"replaced", r.replaced}, {"errors", r.errors.size()}};
    }
    if (step.op == "request_access") {
        t.patient_request_access();
        return json::object();
    }
    if (step.op == "set_visibility") {
        t.patient_set_visibility(a.at("field").get<std::string>(), a.at("md").get<std::string>(),
                                 a.value("hidden", true));
        return json::object();
    }
    if (step.op == "search") {
        const auto r = t.client().request("keyword_search", {{"terms", a.at("terms")}});
        return {{"hits", r.at("hits").size()}};
    }
    if (step.op == "stats") {
        const auto r = t.client().request("stats", {{"field", a.at("field")}, {"statistic", a.at("statistic")}});
        return {{"value", r.at("value")}};
    }
    if (step.op == "list_patients") {
        return {{"count", t.client().request("list_patients").at("patients").size()}};
    }
    if (step.op == "attach_legacy") {
        return {{"attached", t.attach_legacy(query_of(a.at("patient")), a.value("store", std::size_t{0}),
                                             a.at("match").get<ehr::FieldMap>())}};
    }
    fail(ErrorCode::InvalidInput, "unknown terminal operation " + step.op);
}

json Runner::perform(std::size_t index, const Step& step) {
    if (step.actor == kHarnessActor) return perform_harness(step);
    return perform_terminal(index, step, actors_.at(step.actor));
}

// Objects in `want` match as subsets, recursively; floats within `tolerance`.
std::optional<std::string> mismatch(const std::string& path, const json& got, const json& want, double tolerance) {
    if (want.is_object()) {
        if (!got.is_object()) return path + ": got " + format_json(got) + ", want an object";
        for (const auto& [k, v] : want.items()) {
            if (!got.contains(k)) return path + "." + k + ": missing";
            if (auto m = mismatch(path + "." + k, got.at(k), v, tolerance)) return m;
        }
        return std::nullopt;
    }
    if (want.is_number_float() && got.is_number()) {
        if (std::fabs(got.get<double>() - want.get<double>()) <= tolerance) return std::nullopt;
    } else if (got == want) {
        return std::nullopt;
    }
    return path + ": got " + format_json(got) + ", want " + format_json(want);
}

std::optional<std::string> Runner::verify(const Step& step, const json& result) const {
    const double tolerance = step.check.value("tolerance", 1e-9);
    for (const auto& [key, want] : step.check.items()) {
        if (key == "tolerance") continue;
        if (key == "hidden" || key == "absent") {
            const auto& pool = result.value(key == "hidden" ? "revealed" : "fields", json::object());
            for (const auto& name : want) {
                if (pool.contains(name.get<std::string>())) return key + ": " + name.get<std::string>() + " present";
            }
            continue;
        }
        if (!result.contains(key)) return "no result for " + key;
        if (auto m = mismatch(key, result.at(key), want, tolerance)) return m;
    }
    return std::nullopt;
}

StepOutcome Runner::execute(std::size_t index) {
    const auto& step = scenario_.steps[index];
    StepOutcome out{index, step.line, step.actor, step.op, step.expect, "ok", false, {}, 0};
    const auto started = std::chrono::steady_clock::now();
    std::string message;
    json result;
    try {
        result = perform(index, step);
    } catch (const Error& e) {
        out.outcome = std::string(to_string(e.code()));
        message = e.what();
    } catch (const json::exception& e) {
        out.outcome = std::string(to_string(ErrorCode::InvalidInput));
        message = e.what();
    } catch (const std::exception& e) {
        out.outcome = "Exception";
        message = e.what();
    }
    out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    if (out.outcome == "ok") {
        if (auto problem = verify(step, result)) {
            out.outcome = "CheckFailed";
            message = *problem;
        }
    }
    out.passed = out.outcome == step.expect;
    if (!out.passed) out.detail = message.empty() ? "expected " + step.expect : message;
    return out;
}

void Runner::collect_truth() {
    std::lock_guard lock(shared_mutex_);
    for (const auto& [name, actor] : actors_) {
        if (actor.spec.terminal != terminal::TerminalKind::Master) continue;
        for (const auto& entry : actor.term->local().entries()) {
            truth_[entry.pid.hex()] = TruthEntry{entry.identity, entry.pid};
        }
    }
}

RunResult Runner::run() {
    if (options_.state_dir.empty()) fail(ErrorCode::InvalidInput, "run needs a state directory");
    if (std::filesystem::exists(options_.state_dir) && !std::filesystem::is_empty(options_.state_dir)) {
        fail(ErrorCode::InvalidInput, "state directory " + options_.state_dir.string() + " is not empty");
    }
    const auto started = std::chrono::steady_clock::now();

    DeploymentConfig config;
    config.state_dir = options_.state_dir;
    config.ehr_count = scenario_.ehr_stores;
    config.read_only_stores = scenario_.read_only_stores;
    config.work_factor = scenario_.work_factor;
    config.session_lifetime_s = scenario_.session_lifetime_s;
    config.manual_clock_start = scenario_.start_time;
    deployment_ = std::make_unique<Deployment>(config);

    // One principal per distinct actor principal; devices of one principal share its key.
    std::map<std::string, terminal::KeyStore> keys;
    for (const auto& spec : scenario_.actors) {
        if (keys.count(spec.principal)) continue;
        PrincipalConfig p;
        p.id = spec.principal;
        p.credential = "pw-" + spec.principal;
        if (spec.terminal == terminal::TerminalKind::Patient) {
            p.kind = als::PrincipalKind::PATIENT;
            p.fiscal_code = spec.fiscal_code;
        }
        deployment_->enroll(p);
        keys.emplace(spec.principal, terminal::KeyStore::generate());
    }
    for (const auto& spec : scenario_.actors) {
        actors_[spec.name] =
            Actor{spec, deployment_->open_terminal(spec.principal, spec.terminal, keys.at(spec.principal), spec.name)};
    }

    Report report;
    report.scenario = scenario_.name;
    report.seed = seed_;
    report.expected_violations = scenario_.expect_violations;
    report.steps.resize(scenario_.steps.size());

    const auto& steps = scenario_.steps;
    for (std::size_t i = 0; i < steps.size();) {
        // A group is one step, or with --parallel-actors a step followed by the
        // steps marked concurrent, as long as their actors stay distinct.
        std::size_t end = i + 1;
        if (options_.parallel_actors && steps[i].actor != kHarnessActor) {
            std::set<std::string> seen{steps[i].actor};
            while (end < steps.size() && steps[end].concurrent && seen.insert(steps[end].actor).second) ++end;
        }
        if (end - i == 1) {
            report.steps[i] = execute(i);
        } else {
            std::vector<std::thread> threads;
            for (std::size_t k = i; k < end; ++k) {
                threads.emplace_back([this, k, &report] { report.steps[k] = execute(k); });
            }
            for (auto& th : threads) th.join();
        }
        collect_truth();
        i = end;
    }

    RunResult result;
    for (const auto& [hex, t] : truth_) result.truth.push_back(t);
    std::stable_sort(result.truth.begin(), result.truth.end(), [](const TruthEntry& a, const TruthEntry& b) {
        return a.identity.fiscal_code < b.identity.fiscal_code;
    });
    report.violations = privacy_scan(options_.state_dir, result.truth);
    report.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    result.report = std::move(report);
    return result;
}

} // namespace

RunResult run_scenario(const Scenario& scenario, const RunOptions& options) {
    Runner runner(scenario, options);
    return runner.run();
}

} // namespace nusa::testbed
