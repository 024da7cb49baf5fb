#include <fstream>

#include <gtest/gtest.h>

#include "nusa/testbed/deployment.hpp"
#include "test_util.hpp"

using namespace nusa;
using namespace nusa::terminal;
using testbed::Deployment;
using testbed::DeploymentConfig;
using testbed::PrincipalConfig;

namespace {

Identity person(int i) {
    char fc[32];
    std::snprintf(fc, sizeof fc, "TRMN%02dC03L219%03d", i % 100, i % 1000);
    return Identity{"Cognome" + std::to_string(i), "Nome", "1975-03-03", std::string(fc)};
}

LegacyPatient legacy(int i, std::vector<std::size_t> stores = {0}) {
    LegacyPatient p;
    p.identity = person(i);
    p.clear = {{"glucose", 90 + i}, {"blood_type", "0-"}};
    p.obfuscated = {{"notes", {"history of migraine " + std::to_string(i), {"migraine"}}}};
    p.stores = std::move(stores);
    return p;
}

IdentityQuery q(int i) { return IdentityQuery::by_fiscal_code(person(i).fiscal_code); }

class TerminalTest : public ::testing::Test {
protected:
    void SetUp() override {
        DeploymentConfig cfg;
        cfg.state_dir = dir_.path();
        cfg.ehr_count = 2;
        cfg.work_factor = 8;
        cfg.manual_clock_start = 1'700'000'000;
        deployment_ = std::make_unique<Deployment>(cfg);
        for (const std::string id : {"pmd", "smd", "smd2"}) deployment_->enroll({id, als::PrincipalKind::MD, "pw-" + id, {}});
    }

    std::unique_ptr<Terminal> open(const std::string& who, TerminalKind kind, KeyStore keys, const std::string& device) {
        auto t = deployment_->open_terminal(who, kind, std::move(keys), device);
        t->login();
        return t;
    }

    void populate(Terminal& master, int n) {
        std::vector<LegacyPatient> ps;
        for (int i = 0; i < n; ++i) ps.push_back(legacy(i));
        for (const auto& r : master.master_populate(ps)) ASSERT_TRUE(r.ok()) << r.message;
    }

    void delegate(Terminal& pmd, Terminal& smd, std::vector<IdentityQuery> patients) {
        pmd.offer_delegation(patients, smd.principal_id());
        for (const auto& t : smd.inbox()) smd.accept_offered(t);
        for (const auto& t : pmd.pending_accepted()) pmd.finalize_accepted(t);
    }

    test::TempDir dir_;
    std::unique_ptr<Deployment> deployment_;
};

} // namespace

TEST(KeyStoreTest, SaveLoadRoundTrip) {
    test::TempDir dir;
    KeyStore ks = KeyStore::generate();
    const auto first = ks.current();
    ks.replace_current(crypto::generate_key(), true);
    ks.save(dir / "keys", "hunter2", 16);
    const auto loaded = KeyStore::load(dir / "keys", "hunter2");
    EXPECT_EQ(loaded.current().key_id(), ks.current().key_id());
    ASSERT_EQ(loaded.previous().size(), 1u);
    EXPECT_EQ(loaded.previous()[0].key_id(), first.key_id());
    EXPECT_NE(loaded.find(first.key_id()), nullptr);
    EXPECT_NUSA_ERROR(KeyStore::load(dir / "keys", "hunter3"), ErrorCode::WrongPassphrase);

    std::ifstream in(dir / "keys");
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(text.find(to_hex(ks.current().material())), std::string::npos);
}

TEST(KeyStoreTest, LostKeyIsDropped) {
    KeyStore ks = KeyStore::generate();
    const auto old = ks.current();
    ks.replace_current(crypto::generate_key(), false);
    EXPECT_EQ(ks.find(old.key_id()), nullptr);
    EXPECT_TRUE(ks.previous().empty());
}

TEST(LocalDatabaseTest, Persistence) {
    test::TempDir dir;
    LocalPatientEntry e{person(1), crypto::generate_pid(), {}, {{"glucose", 3}}};
    {
        LocalDatabase db(dir / "db");
        db.put(e);
        db.put(LocalPatientEntry{person(2), crypto::generate_pid(), {}, {}});
        db.remove(person(2).fiscal_code);
    }
    LocalDatabase db(dir / "db");
    ASSERT_EQ(db.size(), 1u);
    const auto* found = db.find(q(1));
    ASSERT_NE(found, nullptr);
    EXPECT_EQ(found->pid, e.pid);
    EXPECT_TRUE(found->is_dirty());
    EXPECT_EQ(db.find(q(2)), nullptr);
}

TEST_F(TerminalTest, PopulateIsIdempotentAndRoundTrips) {
    auto master = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    std::vector<LegacyPatient> ps;
    for (int i = 0; i < 100; ++i) ps.push_back(legacy(i, {0, 1}));
    for (const auto& r : master->master_populate(ps)) ASSERT_TRUE(r.ok()) << r.message;
    EXPECT_EQ(deployment_->registry().size(), 100u);
    EXPECT_EQ(master->local().size(), 100u);
    const auto again = master->master_populate(ps);
    ASSERT_EQ(again.size(), 100u);
    for (const auto& r : again) EXPECT_EQ(r.error, ErrorCode::AlreadyExists);
    EXPECT_EQ(deployment_->registry().size(), 100u);
    EXPECT_EQ(deployment_->store(0).size(), 100u);

    for (int i = 0; i < 100; ++i) {
        const auto lookup = master->lookup_patient(q(i));
        EXPECT_EQ(lookup.pid, master->local().find(person(i).fiscal_code)->pid);
        ASSERT_EQ(lookup.views.size(), 2u);
        EXPECT_EQ(lookup.views[0].revealed.at("notes"), "history of migraine " + std::to_string(i));
    }
}

TEST_F(TerminalTest, PopulateFromFile) {
    auto master = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    {
        std::ofstream out(dir_ / "legacy.jsonl");
        for (int i = 0; i < 3; ++i) out << nlohmann::json(legacy(i)).dump() << "\n";
    }
    const auto res = master->master_populate_file(dir_ / "legacy.jsonl");
    EXPECT_EQ(res.size(), 3u);
    EXPECT_TRUE(std::all_of(res.begin(), res.end(), [](const ItemResult& r) { return r.ok(); }));
}

TEST_F(TerminalTest, SlaveSeesSameRecordsAndStoresNoPid) {
    const auto keys = KeyStore::generate();
    auto master = open("pmd", TerminalKind::Master, keys, "pmd-master");
    auto slave = open("pmd", TerminalKind::Slave, keys, "pmd-slave");
    populate(*master, 5);
    for (int i = 0; i < 5; ++i) {
        const auto a = master->lookup_patient(q(i));
        const auto b = slave->lookup_patient(q(i));
        EXPECT_EQ(a.pid, b.pid);
        ASSERT_EQ(a.views.size(), b.views.size());
        EXPECT_EQ(a.views[0].view, b.views[0].view);
        EXPECT_EQ(a.views[0].revealed, b.views[0].revealed);
    }
    EXPECT_NUSA_ERROR(slave->master_populate({legacy(50)}), ErrorCode::RequiresMasterTerminal);
    EXPECT_NUSA_ERROR(slave->remove_patient(q(0)), ErrorCode::RequiresMasterTerminal);
    EXPECT_NUSA_ERROR(slave->regenerate_key(KeyLossReason::PmdLoss), ErrorCode::RequiresMasterTerminal);
    EXPECT_NUSA_ERROR(slave->sync_master(), ErrorCode::RequiresMasterTerminal);
    EXPECT_EQ(slave->local().size(), 0u);
    for (const auto& entry : std::filesystem::recursive_directory_iterator(deployment_->terminals_dir() / "pmd-slave")) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path());
        const std::string text((std::istreambuf_iterator<char>(in)), {});
        for (int i = 0; i < 5; ++i) EXPECT_EQ(text.find(master->local().find(person(i).fiscal_code)->pid.hex()), std::string::npos);
    }
}

TEST_F(TerminalTest, WrongKeyGivesNotFound) {
    auto master = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    populate(*master, 1);
    auto stranger = open("pmd", TerminalKind::Slave, KeyStore::generate(), "pmd-lost");
    EXPECT_NUSA_ERROR(stranger->lookup_patient(q(0)), ErrorCode::NotFound);
}

TEST_F(TerminalTest, DelegationLayers) {
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 2);
    const auto ids = pmd->offer_delegation({q(0), q(1)}, "smd");
    EXPECT_EQ(ids.size(), 2u);
    const auto inbox = smd->inbox();
    ASSERT_EQ(inbox.size(), 2u);
    EXPECT_NUSA_ERROR(pmd->finalize_accepted(inbox[0]), ErrorCode::InvalidStage);
    for (const auto& t : inbox) smd->accept_offered(t);
    const auto accepted = pmd->pending_accepted();
    ASSERT_EQ(accepted.size(), 2u);
    EXPECT_EQ(accepted[0].payload.layer_count(), 2u);
    EXPECT_NUSA_ERROR(smd->accept_offered(accepted[0]), ErrorCode::InvalidStage);
    for (const auto& t : accepted) pmd->finalize_accepted(t);
    const auto grant = deployment_->registry().lookup_grant(q(0), "smd", deployment_->clock().now());
    ASSERT_EQ(grant.epid.layer_count(), 1u);
    EXPECT_EQ(grant.epid.layers[0].key_id, smd->keys().current().key_id());

    const auto seen = smd->lookup_patient(q(1));
    EXPECT_EQ(seen.pid, pmd->local().find(person(1).fiscal_code)->pid);
    EXPECT_EQ(seen.views[0].revealed.at("notes"), "history of migraine 1");

    pmd->revoke(q(1), "smd");
    EXPECT_NUSA_ERROR(smd->lookup_patient(q(1)), ErrorCode::NotAuthorized);
}

TEST_F(TerminalTest, SyncPicksUpRemoteChanges) {
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 3);
    delegate(*pmd, *smd, {q(0)});
    auto first = pmd->sync_master();
    EXPECT_EQ(first.fetched, 3u);
    EXPECT_TRUE(first.errors.empty());
    const auto idle = pmd->sync_master();
    EXPECT_EQ(idle.fetched, 3u);
    EXPECT_EQ(idle.refreshed, 0u);

    ehr::RecordDelta d;
    d.set_clear["glucose"] = 140;
    smd->update_record(q(0), d);
    pmd->edit_local(q(0), "blood_type", "AB+");
    const auto after = pmd->sync_master();
    EXPECT_EQ(after.pushed, 1u);
    EXPECT_EQ(after.refreshed, 1u);
    const auto* entry = pmd->local().find(person(0).fiscal_code);
    ASSERT_NE(entry, nullptr);
    EXPECT_FALSE(entry->is_dirty());
    ASSERT_FALSE(entry->cached.empty());
    EXPECT_EQ(entry->cached[0].view.clear_fields.at("glucose"), 140);
    EXPECT_EQ(entry->cached[0].view.clear_fields.at("blood_type"), "AB+");
    EXPECT_EQ(pmd->sync_master().refreshed, 0u);
}

TEST_F(TerminalTest, LocalDatabaseSurvivesRestart) {
    const auto keys = KeyStore::generate();
    crypto::PatientIdentifier pid;
    {
        auto pmd = open("pmd", TerminalKind::Master, keys, "pmd-master");
        populate(*pmd, 1);
        pid = pmd->local().find(person(0).fiscal_code)->pid;
    }
    auto reopened = open("pmd", TerminalKind::Master, keys, "pmd-master");
    ASSERT_NE(reopened->local().find(person(0).fiscal_code), nullptr);
    EXPECT_EQ(reopened->local().find(person(0).fiscal_code)->pid, pid);
}

TEST_F(TerminalTest, PmdKeyLossPreservesPatientSet) {
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 10);
    delegate(*pmd, *smd, {q(3)});
    const auto before = deployment_->registry().dump();
    const auto old_id = pmd->keys().current().key_id();
    const auto res = pmd->regenerate_key(KeyLossReason::PmdLoss);
    EXPECT_EQ(res.replaced, 10u);
    EXPECT_TRUE(res.errors.empty());
    EXPECT_NE(pmd->keys().current().key_id(), old_id);
    EXPECT_EQ(pmd->keys().find(old_id), nullptr);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(pmd->lookup_patient(q(i)).pid, pmd->local().find(person(i).fiscal_code)->pid);
    EXPECT_NO_THROW(smd->lookup_patient(q(3)));

    const auto after = deployment_->registry().dump();
    ASSERT_EQ(before.at("records").size(), after.at("records").size());
    for (std::size_t r = 0; r < before.at("records").size(); ++r) {
        const auto& gb = before.at("records")[r].at("grants");
        const auto& ga = after.at("records")[r].at("grants");
        ASSERT_EQ(gb.size(), ga.size());
        for (std::size_t g = 0; g < gb.size(); ++g) {
            EXPECT_EQ(gb[g].at("principal"), ga[g].at("principal"));
            EXPECT_EQ(gb[g].at("role"), ga[g].at("role"));
            EXPECT_EQ(gb[g].at("windows"), ga[g].at("windows"));
        }
    }
}

TEST_F(TerminalTest, SmdKeyLossRequiresRedelegation) {
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 2);
    delegate(*pmd, *smd, {q(0), q(1)});
    smd->regenerate_key(KeyLossReason::SmdLoss);
    EXPECT_NUSA_ERROR(smd->lookup_patient(q(0)), ErrorCode::NotAuthorized);
    const auto inbox = smd->inbox();
    EXPECT_EQ(inbox.size(), 2u);
    for (const auto& t : inbox) smd->accept_offered(t);
    for (const auto& t : pmd->pending_accepted()) pmd->finalize_accepted(t);
    EXPECT_EQ(smd->lookup_patient(q(0)).pid, pmd->local().find(person(0).fiscal_code)->pid);
}

TEST_F(TerminalTest, RemovePatient) {
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 2);
    delegate(*pmd, *smd, {q(0)});
    pmd->remove_patient(q(0));
    EXPECT_EQ(pmd->local().find(person(0).fiscal_code), nullptr);
    EXPECT_EQ(deployment_->registry().size(), 1u);
    EXPECT_EQ(deployment_->store(0).size(), 1u);
    EXPECT_NUSA_ERROR(smd->lookup_patient(q(0)), ErrorCode::NotFound);
    EXPECT_NUSA_ERROR(pmd->remove_patient(q(0)), ErrorCode::NotFound);
}

TEST_F(TerminalTest, LegacyAttach) {
    deployment_->store(1).add_legacy({"AMB-7", {{"ward", "derm"}}, std::nullopt});
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    populate(*pmd, 1);
    EXPECT_EQ(pmd->attach_legacy(q(0), 1, {{"native_key", "AMB-7"}}), 1u);
    EXPECT_EQ(pmd->attach_legacy(q(0), 1, {{"native_key", "AMB-8"}}), 0u);
    const auto lookup = pmd->lookup_patient(q(0));
    ASSERT_EQ(lookup.views.size(), 2u);
    EXPECT_EQ(lookup.views[1].view.legacy.size(), 1u);
}

TEST_F(TerminalTest, PatientAccessFlow) {
    deployment_->enroll({"pt0", als::PrincipalKind::PATIENT, "pw-pt0", person(0).fiscal_code});
    auto pmd = open("pmd", TerminalKind::Master, KeyStore::generate(), "pmd-master");
    auto smd = open("smd", TerminalKind::Master, KeyStore::generate(), "smd-master");
    populate(*pmd, 2);
    delegate(*pmd, *smd, {q(0)});
    auto pt = open("pt0", TerminalKind::Patient, KeyStore::generate(), "pt0");
    EXPECT_NUSA_ERROR(pt->patient_view(), ErrorCode::NotAuthorized);
    const auto t = pt->patient_request_access();
    EXPECT_EQ(t.kind, als::TicketKind::Access);
    const auto pending = pmd->pending_accepted();
    ASSERT_EQ(pending.size(), 1u);
    EXPECT_EQ(pending[0].payload.layer_count(), 2u);
    pmd->finalize_accepted(pending[0]);

    const auto view = pt->patient_view();
    EXPECT_EQ(view.identity, person(0));
    ASSERT_EQ(view.views.size(), 1u);
    EXPECT_EQ(view.views[0].revealed.at("notes"), "history of migraine 0");

    pt->patient_set_visibility("notes", "smd", true);
    EXPECT_FALSE(smd->lookup_patient(q(0)).views[0].view.obfuscated_fields.contains("notes"));
    EXPECT_TRUE(pmd->lookup_patient(q(0)).views[0].view.obfuscated_fields.contains("notes"));
    pt->patient_set_visibility("notes", "smd", false);
    EXPECT_TRUE(smd->lookup_patient(q(0)).views[0].view.obfuscated_fields.contains("notes"));
    EXPECT_NUSA_ERROR(pmd->patient_view(), ErrorCode::NotAuthorized);
}

TEST_F(TerminalTest, KeystoreFilePersistsRegeneratedKey) {
    TerminalOptions opts;
    opts.principal_id = "pmd";
    opts.credential = "pw-pmd";
    opts.kind = TerminalKind::Master;
    opts.local_db = dir_ / "own.journal";
    opts.keystore_file = dir_ / "own.keys";
    opts.passphrase = "pass";
    opts.work_factor = 8;
    Terminal t(opts, std::make_unique<InProcessTransport>(deployment_->dispatcher()), KeyStore::generate());
    t.login();
    populate(t, 2);
    t.regenerate_key(KeyLossReason::PmdLoss);
    const auto reloaded = KeyStore::load(dir_ / "own.keys", "pass");
    EXPECT_EQ(reloaded.current().key_id(), t.keys().current().key_id());
}
