#include <atomic>
#include <fstream>
#include <random>
#include <regex>
#include <thread>

#include <gtest/gtest.h>

#include "nusa/als/service.hpp"
#include "test_util.hpp"

using namespace nusa;
using namespace nusa::als;
using crypto::LayeredCiphertext;
using crypto::SecretKey;

namespace {

struct Actor {
    std::string id;
    SecretKey key;
    std::string token;
};

Identity person(int i) {
    char fc[32];
    std::snprintf(fc, sizeof fc, "PTNT%02dB12F205%03d", i % 100, i % 1000);
    return Identity{"Family" + std::to_string(i), "Name" + std::to_string(i), "1980-05-05", std::string(fc)};
}

class AlsTest : public ::testing::Test {
protected:
    void SetUp() override { build(2); }

    void build(std::size_t store_count, AlsConfig config = {}) {
        registry_ = std::make_shared<registry::PatientRegistry>();
        stores_.clear();
        for (std::size_t i = 0; i < store_count; ++i) {
            stores_.push_back(std::make_shared<ehr::EhrStore>("ehr" + std::to_string(i)));
        }
        clock_ = std::make_shared<ManualClock>(1'000'000);
        als_ = std::make_unique<AlsService>(registry_, stores_, clock_, config);
    }

    Actor md(const std::string& id) {
        Actor a{id, crypto::generate_key(), {}};
        als_->enroll(id, PrincipalKind::MD, "pw-" + id);
        a.token = als_->authenticate(id, "pw-" + id).token;
        als_->register_key(a.token, a.key.key_id());
        return a;
    }

    Actor patient(const std::string& id, const Identity& identity) {
        Actor a{id, crypto::generate_key(), {}};
        als_->enroll(id, PrincipalKind::PATIENT, "pw-" + id, identity.fiscal_code);
        a.token = als_->authenticate(id, "pw-" + id).token;
        als_->register_key(a.token, a.key.key_id());
        return a;
    }

    crypto::PatientIdentifier populate(const Actor& pmd, int i, std::vector<std::size_t> stores = {0}) {
        const auto pid = crypto::generate_pid();
        std::vector<PopulateRecord> recs;
        for (auto s : stores) {
            ehr::MedicalRecord r;
            r.pid = pid;
            r.clear_fields = {{"glucose", 80 + i}};
            r.obfuscated_fields = {
                {"notes", crypto::obfuscate(as_bytes(std::string("note")), crypto::derive_obfuscation_key("x", {}, 1),
                                            {"note"})}};
            recs.push_back({s, r});
        }
        als_->populate(pmd.token, person(i), crypto::add_layer(LayeredCiphertext::plain(pid), pmd.key), recs);
        return pid;
    }

    // Client sides of the staged delegation, done by hand.
    void delegate(const Actor& pmd, const Actor& smd, int i, const std::vector<Window>& windows = {}) {
        const auto ids = als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(i).fiscal_code)},
                                              smd.id, windows);
        ASSERT_EQ(ids.size(), 1u);
        const auto offered = *als_->ticket(ids[0]);
        als_->accept_delegation(smd.token, ids[0], crypto::add_layer(offered.payload, smd.key));
        const auto accepted = *als_->ticket(ids[0]);
        als_->complete_delegation(pmd.token, ids[0], crypto::remove_layer(accepted.payload, pmd.key), windows);
    }

    crypto::PatientIdentifier resolve(const Actor& a, int i) {
        const auto ans = als_->query_patient_epid(a.token, IdentityQuery::by_fiscal_code(person(i).fiscal_code));
        return crypto::remove_layer(ans.epid, a.key).to_pid();
    }

    std::shared_ptr<registry::PatientRegistry> registry_;
    std::vector<std::shared_ptr<ehr::EhrStore>> stores_;
    std::shared_ptr<ManualClock> clock_;
    std::unique_ptr<AlsService> als_;
};

} // namespace

TEST_F(AlsTest, Authentication) {
    als_->enroll("md1", PrincipalKind::MD, "secret");
    EXPECT_NUSA_ERROR(als_->authenticate("md1", "wrong"), ErrorCode::AuthFailed);
    EXPECT_NUSA_ERROR(als_->authenticate("nobody", "secret"), ErrorCode::AuthFailed);
    const auto s1 = als_->authenticate("md1", "secret");
    const auto s2 = als_->authenticate("md1", "secret");
    EXPECT_EQ(s1.token.size(), 32u);
    EXPECT_NE(s1.token, s2.token);
    EXPECT_EQ(s1.expiry, clock_->now() + 30 * 60);
    EXPECT_NUSA_ERROR(als_->enroll("md1", PrincipalKind::MD, "x"), ErrorCode::AlreadyExists);
    EXPECT_NUSA_ERROR(als_->enroll("pt", PrincipalKind::PATIENT, "x"), ErrorCode::InvalidInput);
    EXPECT_NUSA_ERROR(als_->list_patients("bogus"), ErrorCode::AuthFailed);
}

TEST_F(AlsTest, SessionExpiryAndRenewal) {
    const auto a = md("md1");
    clock_->advance(30 * 60);
    EXPECT_NO_THROW(als_->list_patients(a.token));
    const auto renewed = als_->renew(a.token);
    EXPECT_EQ(renewed.expiry, clock_->now() + 30 * 60);
    clock_->advance(30 * 60 + 1);
    EXPECT_NUSA_ERROR(als_->list_patients(a.token), ErrorCode::SessionExpired);
    EXPECT_NUSA_ERROR(als_->renew(a.token), ErrorCode::SessionExpired);
}

TEST_F(AlsTest, PopulateAndQuery) {
    const auto pmd = md("pmd");
    const auto other = md("other");
    const auto pid = populate(pmd, 1, {0, 1});
    EXPECT_EQ(resolve(pmd, 1), pid);
    EXPECT_EQ(als_->fetch_records(pmd.token, pid).size(), 2u);
    EXPECT_NUSA_ERROR(als_->query_patient_epid(other.token, IdentityQuery::by_fiscal_code(person(1).fiscal_code)),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->fetch_records(pmd.token, crypto::generate_pid()), ErrorCode::NotFound);
    const auto listing = als_->list_patients(pmd.token);
    ASSERT_EQ(listing.size(), 1u);
    EXPECT_EQ(listing[0].identity, person(1));
}

TEST_F(AlsTest, PopulateRejectsForeignEpid) {
    const auto pmd = md("pmd");
    const auto other = md("other");
    const auto pid = crypto::generate_pid();
    ehr::MedicalRecord r;
    r.pid = pid;
    EXPECT_NUSA_ERROR(als_->populate(pmd.token, person(1), crypto::add_layer(LayeredCiphertext::plain(pid), other.key),
                                     {{0, r}}),
                      ErrorCode::InvalidGrant);
    EXPECT_EQ(stores_[0]->size(), 0u);
}

TEST_F(AlsTest, PopulateDuplicateIsAtomic) {
    const auto pmd = md("pmd");
    populate(pmd, 1);
    EXPECT_NUSA_ERROR(populate(pmd, 1, {0, 1}), ErrorCode::AlreadyExists);
    EXPECT_EQ(stores_[0]->size(), 1u);
    EXPECT_EQ(stores_[1]->size(), 0u);
    EXPECT_EQ(registry_->size(), 1u);
}

TEST_F(AlsTest, PopulateRollsBackOnFault) {
    const auto pmd = md("pmd");
    for (const std::string phase : {"populate:registry_written", "populate:ehr_written"}) {
        als_->set_fault_injector([phase](std::string_view p) {
            if (p == phase) throw Error(ErrorCode::IoError, "injected");
        });
        EXPECT_NUSA_ERROR(populate(pmd, 7, {0, 1}), ErrorCode::IoError);
        EXPECT_EQ(registry_->size(), 0u) << phase;
        EXPECT_EQ(stores_[0]->size(), 0u) << phase;
        EXPECT_EQ(stores_[1]->size(), 0u) << phase;
    }
    als_->set_fault_injector({});
    EXPECT_NO_THROW(populate(pmd, 7, {0, 1}));
}

TEST_F(AlsTest, PopulateRejectsIdentityLeak) {
    const auto pmd = md("pmd");
    const auto pid = crypto::generate_pid();
    ehr::MedicalRecord r;
    r.pid = pid;
    r.clear_fields["fiscal_code"] = person(1).fiscal_code;
    EXPECT_NUSA_ERROR(
        als_->populate(pmd.token, person(1), crypto::add_layer(LayeredCiphertext::plain(pid), pmd.key), {{0, r}}),
        ErrorCode::IdentityLeakRejected);
    EXPECT_EQ(registry_->size(), 0u);
}

TEST_F(AlsTest, DelegationFlow) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    const auto pid = populate(pmd, 1);
    populate(pmd, 2);
    populate(pmd, 3);
    const auto ids = als_->delegate_offer(pmd.token,
                                          {IdentityQuery::by_fiscal_code(person(1).fiscal_code),
                                           IdentityQuery::by_fiscal_code(person(2).fiscal_code),
                                           IdentityQuery::by_fiscal_code(person(3).fiscal_code)},
                                          "smd");
    EXPECT_EQ(ids.size(), 3u);
    EXPECT_EQ(als_->inbox(smd.token).size(), 3u);
    EXPECT_TRUE(als_->inbox(pmd.token).empty());
    EXPECT_NUSA_ERROR(als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "smd"),
                      ErrorCode::DuplicateTicket);

    const auto t = *als_->ticket(ids[0]);
    EXPECT_EQ(t.stage, TicketStage::OFFERED);
    EXPECT_EQ(t.payload.layer_count(), 1u);
    // caller layer missing, wrong grantee, then the real thing
    EXPECT_NUSA_ERROR(als_->accept_delegation(smd.token, ids[0], t.payload), ErrorCode::InvalidPayload);
    EXPECT_NUSA_ERROR(als_->accept_delegation(pmd.token, ids[0], crypto::add_layer(t.payload, smd.key)),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->complete_delegation(pmd.token, ids[0], t.payload, {}), ErrorCode::InvalidStage);
    const auto eepid = crypto::add_layer(t.payload, smd.key);
    als_->accept_delegation(smd.token, ids[0], eepid);
    EXPECT_NUSA_ERROR(als_->accept_delegation(smd.token, ids[0], eepid), ErrorCode::InvalidStage);
    EXPECT_EQ(als_->ticket(ids[0])->payload.layer_count(), 2u);
    EXPECT_EQ(als_->pmd_inbox(pmd.token).size(), 1u);

    // PMD must strip exactly its own layer
    EXPECT_NUSA_ERROR(als_->complete_delegation(pmd.token, ids[0], eepid, {}), ErrorCode::InvalidPayload);
    EXPECT_NUSA_ERROR(als_->complete_delegation(smd.token, ids[0], crypto::remove_layer(eepid, pmd.key), {}),
                      ErrorCode::NotAuthorized);
    als_->complete_delegation(pmd.token, ids[0], crypto::remove_layer(eepid, pmd.key), {});
    EXPECT_EQ(als_->ticket(ids[0])->stage, TicketStage::COMPLETED);
    EXPECT_NUSA_ERROR(als_->complete_delegation(pmd.token, ids[0], crypto::remove_layer(eepid, pmd.key), {}),
                      ErrorCode::InvalidStage);
    EXPECT_EQ(resolve(smd, 1), pid);
    EXPECT_EQ(als_->fetch_records(smd.token, pid).size(), 1u);
}

TEST_F(AlsTest, OnlyPmdDelegates) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    const auto third = md("third");
    populate(pmd, 1);
    delegate(pmd, smd, 1);
    EXPECT_NUSA_ERROR(als_->delegate_offer(smd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "third"),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "ghost"),
                      ErrorCode::NotFound);
    EXPECT_NUSA_ERROR(als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "smd"),
                      ErrorCode::AlreadyExists);
    (void)third;
}

TEST_F(AlsTest, CorruptedBodyLeadsToNotFound) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    populate(pmd, 1);
    const auto ids = als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "smd");
    als_->accept_delegation(smd.token, ids[0], crypto::add_layer(als_->ticket(ids[0])->payload, smd.key));
    auto epid_sk = crypto::remove_layer(als_->ticket(ids[0])->payload, pmd.key);
    epid_sk.body[3] ^= 0x40;  // client bug flips a bit
    als_->complete_delegation(pmd.token, ids[0], epid_sk, {});
    const auto garbage = resolve(smd, 1);
    EXPECT_NUSA_ERROR(als_->fetch_records(smd.token, garbage), ErrorCode::NotFound);
}

TEST_F(AlsTest, WindowHonoredAtEndRejectedAfterSweep) {
    const auto pmd = md("pmd");
    auto smd = md("smd");
    const auto pid = populate(pmd, 1);
    const Timestamp t = clock_->now();
    delegate(pmd, smd, 1, {{t + 10, t + 60}});
    EXPECT_NUSA_ERROR(resolve(smd, 1), ErrorCode::NotAuthorized);
    clock_->set(t + 60);
    EXPECT_EQ(resolve(smd, 1), pid);
    clock_->set(t + 61);
    EXPECT_NUSA_ERROR(resolve(smd, 1), ErrorCode::NotAuthorized);
    EXPECT_EQ(als_->sweep_expired(), 1u);
    EXPECT_EQ(registry_->grant_count(), 1u);
    EXPECT_NUSA_ERROR(resolve(smd, 1), ErrorCode::NotAuthorized);
}

TEST_F(AlsTest, Revocation) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    populate(pmd, 1);
    delegate(pmd, smd, 1);
    EXPECT_NUSA_ERROR(als_->revoke_grant(smd.token, IdentityQuery::by_fiscal_code(person(1).fiscal_code), "smd"),
                      ErrorCode::NotAuthorized);
    als_->revoke_grant(pmd.token, IdentityQuery::by_fiscal_code(person(1).fiscal_code), "smd");
    EXPECT_NUSA_ERROR(resolve(smd, 1), ErrorCode::NotAuthorized);
}

TEST_F(AlsTest, PatientAccessAndVisibility) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    const auto pid = populate(pmd, 1);
    delegate(pmd, smd, 1);
    auto pt = patient("pt1", person(1));
    const auto stranger = patient("pt2", person(2));
    EXPECT_NUSA_ERROR(als_->patient_access_request(stranger.token), ErrorCode::NotFound);

    const auto t = als_->patient_access_request(pt.token);
    EXPECT_NUSA_ERROR(als_->patient_access_request(pt.token), ErrorCode::DuplicateTicket);
    EXPECT_EQ(t.payload.layer_count(), 1u);
    EXPECT_TRUE(als_->inbox(pmd.token).empty());
    als_->accept_access(pt.token, t.id, crypto::add_layer(t.payload, pt.key));
    ASSERT_EQ(als_->pmd_inbox(pmd.token).size(), 1u);  // pending at the PMD's next login
    als_->complete_access(pmd.token, t.id, crypto::remove_layer(*&als_->ticket(t.id)->payload, pmd.key));

    const auto own = als_->query_patient_epid(pt.token, IdentityQuery::by_fiscal_code(person(1).fiscal_code));
    EXPECT_EQ(crypto::remove_layer(own.epid, pt.key).to_pid(), pid);
    EXPECT_EQ(als_->fetch_records(pt.token, pid).size(), 1u);
    EXPECT_NUSA_ERROR(als_->query_patient_epid(pt.token, IdentityQuery::by_fiscal_code(person(2).fiscal_code)),
                      ErrorCode::NotAuthorized);
    EXPECT_EQ(als_->query_patient_epid(pt.token, IdentityQuery{}).epid, own.epid);

    crypto::Digest proof{};
    proof[0] = 42;
    als_->claim_record(pt.token, pid, crypto::sha256(proof));
    als_->set_obfuscation_visibility(pt.token, pid, proof, "notes", "smd", true);
    EXPECT_FALSE(als_->fetch_records(smd.token, pid)[0].view.obfuscated_fields.contains("notes"));
    EXPECT_TRUE(als_->fetch_records(pmd.token, pid)[0].view.obfuscated_fields.contains("notes"));

    crypto::Digest wrong{};
    EXPECT_NUSA_ERROR(als_->set_obfuscation_visibility(pt.token, pid, wrong, "notes", "smd", false),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->set_obfuscation_visibility(pmd.token, pid, proof, "notes", "smd", false),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->set_obfuscation_visibility(pt.token, pid, proof, "glucose", "smd", true),
                      ErrorCode::InvalidField);
    als_->set_obfuscation_visibility(pt.token, pid, proof, "notes", "smd", false);
    EXPECT_TRUE(als_->fetch_records(smd.token, pid)[0].view.obfuscated_fields.contains("notes"));
}

TEST_F(AlsTest, ForeignPatientCannotTouchRecord) {
    const auto pmd = md("pmd");
    const auto pid1 = populate(pmd, 1);
    populate(pmd, 2);
    auto give_access = [&](const Actor& pt) {
        const auto t = als_->patient_access_request(pt.token);
        als_->accept_access(pt.token, t.id, crypto::add_layer(t.payload, pt.key));
        als_->complete_access(pmd.token, t.id, crypto::remove_layer(als_->ticket(t.id)->payload, pmd.key));
    };
    const auto p1 = patient("p1", person(1));
    const auto p2 = patient("p2", person(2));
    give_access(p1);
    give_access(p2);
    crypto::Digest proof{};
    proof[1] = 7;
    als_->claim_record(p1.token, pid1, crypto::sha256(proof));
    crypto::Digest p2_proof{};
    p2_proof[1] = 8;
    EXPECT_NUSA_ERROR(als_->set_obfuscation_visibility(p2.token, pid1, p2_proof, "notes", "pmd", true),
                      ErrorCode::NotAuthorized);
    EXPECT_NUSA_ERROR(als_->claim_record(p2.token, pid1, crypto::sha256(crypto::Digest{})), ErrorCode::NotAuthorized);
}

TEST_F(AlsTest, TwoStageRemoval) {
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    const auto pid = populate(pmd, 1, {0, 1});
    delegate(pmd, smd, 1);
    EXPECT_NUSA_ERROR(als_->remove_patient_stage1(smd.token, pid), ErrorCode::NotAuthorized);
    EXPECT_EQ(als_->remove_patient_stage1(pmd.token, pid), 2u);
    EXPECT_EQ(registry_->size(), 1u);  // dangling identity, no data
    EXPECT_NUSA_ERROR(als_->fetch_records(pmd.token, pid), ErrorCode::NotFound);
    const auto epid = als_->query_patient_epid(pmd.token, IdentityQuery::by_fiscal_code(person(1).fiscal_code)).epid;
    als_->remove_patient_stage2(pmd.token, epid);
    EXPECT_EQ(registry_->size(), 0u);
    EXPECT_EQ(registry_->grant_count(), 0u);
    EXPECT_NUSA_ERROR(als_->remove_patient_stage2(pmd.token, epid), ErrorCode::NotFound);
}

TEST_F(AlsTest, RemovalSkipsReadOnlyStores) {
    stores_.clear();
    registry_ = std::make_shared<registry::PatientRegistry>();
    stores_.push_back(std::make_shared<ehr::EhrStore>("ehr0"));
    stores_.push_back(std::make_shared<ehr::EhrStore>("ehr1", std::filesystem::path{}, false));
    als_ = std::make_unique<AlsService>(registry_, stores_, clock_);
    const auto pmd = md("pmd");
    const auto pid = populate(pmd, 1, {0, 1});
    EXPECT_EQ(als_->remove_patient_stage1(pmd.token, pid), 1u);
    EXPECT_TRUE(stores_[1]->contains(pid));
}

TEST_F(AlsTest, PmdKeyRecovery) {
    auto pmd = md("pmd");
    const auto smd = md("smd");
    std::vector<crypto::PatientIdentifier> pids;
    for (int i = 0; i < 10; ++i) pids.push_back(populate(pmd, i));
    delegate(pmd, smd, 0);
    const auto old_key = pmd.key;
    const auto fresh = crypto::generate_key();
    als_->register_key(pmd.token, fresh.key_id());
    std::vector<EpidReplacement> items;
    for (const auto& listing : als_->list_patients(pmd.token)) {
        const auto pid = crypto::remove_layer(listing.grant.epid, old_key).to_pid();
        items.push_back({listing.grant.epid, crypto::add_layer(LayeredCiphertext::plain(pid), fresh)});
    }
    // one stale entry
    items[4].old_epid = crypto::add_layer(LayeredCiphertext::plain(crypto::generate_pid()), old_key);
    const auto res = als_->recover_pmd_key(pmd.token, items);
    EXPECT_EQ(res.replaced, 9u);
    ASSERT_EQ(res.errors.size(), 1u);
    EXPECT_EQ(res.errors[0].index, 4u);
    EXPECT_EQ(res.errors[0].code, ErrorCode::NotFound);
    pmd.key = fresh;
    int ok = 0;
    for (int i = 0; i < 10; ++i) {
        try {
            if (resolve(pmd, i) == pids[static_cast<std::size_t>(i)]) ++ok;
        } catch (const Error&) {
        }
    }
    EXPECT_EQ(ok, 9);
    EXPECT_EQ(resolve(smd, 0), pids[0]);  // SMD grant untouched
}

TEST_F(AlsTest, SmdKeyRecovery) {
    const auto pmd1 = md("pmd1");
    const auto pmd2 = md("pmd2");
    auto smd = md("smd");
    const auto pid1 = populate(pmd1, 1);
    populate(pmd2, 2);
    delegate(pmd1, smd, 1);
    delegate(pmd2, smd, 2);
    const auto fresh = crypto::generate_key();
    const auto res = als_->recover_smd_key(smd.token, fresh.key_id());
    EXPECT_EQ(res.revoked, 2u);
    EXPECT_EQ(res.tickets.size(), 2u);
    smd.key = fresh;
    EXPECT_NUSA_ERROR(resolve(smd, 1), ErrorCode::NotAuthorized);
    ASSERT_EQ(als_->inbox(smd.token).size(), 2u);
    const auto t = als_->inbox(smd.token)[0];
    EXPECT_EQ(t.pmd_id, "pmd1");
    als_->accept_delegation(smd.token, t.id, crypto::add_layer(t.payload, smd.key));
    als_->complete_delegation(pmd1.token, t.id, crypto::remove_layer(als_->ticket(t.id)->payload, pmd1.key), {});
    EXPECT_EQ(resolve(smd, 1), pid1);

    const auto lonely = md("lonely");
    const auto none = als_->recover_smd_key(lonely.token, crypto::generate_key().key_id());
    EXPECT_EQ(none.revoked, 0u);
    EXPECT_TRUE(none.tickets.empty());
}

TEST_F(AlsTest, SearchAndStats) {
    const auto pmd = md("pmd");
    populate(pmd, 2, {0});
    populate(pmd, 4, {1});
    populate(pmd, 6, {0});
    EXPECT_DOUBLE_EQ(als_->stats(pmd.token, "glucose", ehr::Statistic::Mean), 84.0);
    EXPECT_NEAR(als_->stats(pmd.token, "glucose", ehr::Statistic::Variance), 8.0 / 3.0, 1e-12);
    EXPECT_EQ(als_->keyword_search(pmd.token, {"NOTE"}).size(), 3u);
    EXPECT_NUSA_ERROR(als_->stats(pmd.token, "weight", ehr::Statistic::Mean), ErrorCode::NoData);
}

TEST_F(AlsTest, EndToEndDelegationRandomized) {
    const auto pmd = md("pmd");
    std::vector<Actor> smds;
    for (int i = 0; i < 10; ++i) smds.push_back(md("smd" + std::to_string(i)));
    std::vector<crypto::PatientIdentifier> pids;
    for (int i = 0; i < 100; ++i) pids.push_back(populate(pmd, i));
    int runs = 0;
    for (int i = 0; i < 100; ++i) {
        for (const auto& smd : smds) {
            delegate(pmd, smd, i);
            const auto ans = als_->query_patient_epid(smd.token, IdentityQuery::by_fiscal_code(person(i).fiscal_code));
            ASSERT_EQ(crypto::remove_layer(ans.epid, smd.key).to_pid(), pids[static_cast<std::size_t>(i)]);
            ++runs;
        }
    }
    EXPECT_EQ(runs, 1000);
}

TEST_F(AlsTest, PersistentStateHasNoIdentityPidLink) {
    test::TempDir dir;
    AlsConfig cfg;
    cfg.state_dir = dir.path();
    build(2, cfg);
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    std::vector<crypto::PatientIdentifier> pids;
    for (int i = 0; i < 10; ++i) pids.push_back(populate(pmd, i, {0, 1}));
    for (int i = 0; i < 5; ++i) delegate(pmd, smd, i);
    als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(9).fiscal_code)}, "smd");
    als_->update_record(pmd.token, pids[1], ehr::RecordDelta{{{"glucose", 1}}, {}, {}, {}});
    als_->remove_patient_stage1(pmd.token, pids[2]);
    std::vector<std::string> lines = als_->log_lines();
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.path())) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path());
        for (std::string line; std::getline(in, line);) lines.push_back(line);
    }
    ASSERT_FALSE(lines.empty());
    for (const auto& line : lines) {
        for (const auto& pid : pids) ASSERT_EQ(line.find(pid.hex()), std::string::npos) << line;
    }
}

TEST_F(AlsTest, ConcurrentSessions) {
    std::vector<Actor> mds;
    for (int i = 0; i < 8; ++i) mds.push_back(md("md" + std::to_string(i)));
    std::atomic<int> failures{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] {
            try {
                for (int k = 0; k < 25; ++k) {
                    const int i = t * 100 + k;
                    const auto pid = populate(mds[static_cast<std::size_t>(t)], i);
                    if (resolve(mds[static_cast<std::size_t>(t)], i) != pid) ++failures;
                    als_->fetch_records(mds[static_cast<std::size_t>(t)].token, pid);
                }
            } catch (const Error&) {
                ++failures;
            }
        });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(failures.load(), 0);
    EXPECT_EQ(registry_->size(), 200u);
}

TEST_F(AlsTest, TicketJournalSurvivesRestart) {
    test::TempDir dir;
    AlsConfig cfg;
    cfg.state_dir = dir.path();
    build(1, cfg);
    const auto pmd = md("pmd");
    const auto smd = md("smd");
    populate(pmd, 1);
    const auto ids = als_->delegate_offer(pmd.token, {IdentityQuery::by_fiscal_code(person(1).fiscal_code)}, "smd");
    const auto before = *als_->ticket(ids[0]);
    als_ = std::make_unique<AlsService>(registry_, stores_, clock_, cfg);
    ASSERT_TRUE(als_->ticket(ids[0]).has_value());
    EXPECT_EQ(*als_->ticket(ids[0]), before);
    (void)smd;
}
