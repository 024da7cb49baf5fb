#include <gtest/gtest.h>

#include "nusa/bytes.hpp"
#include "nusa/identity.hpp"
#include "nusa/journal.hpp"
#include "nusa/time.hpp"
#include "test_util.hpp"

using namespace nusa;

TEST(Bytes, HexRoundTrip) {
    const Bytes data{0x00, 0x01, 0xab, 0xff};
    EXPECT_EQ(to_hex(data), "0001abff");
    EXPECT_EQ(from_hex("0001ABff"), data);
    EXPECT_NUSA_ERROR(from_hex("abc"), ErrorCode::InvalidInput);
    EXPECT_NUSA_ERROR(from_hex("zz"), ErrorCode::InvalidInput);
    EXPECT_NUSA_ERROR(fixed_from_hex<4>("0001"), ErrorCode::InvalidInput);
}

TEST(Bytes, ConstantTimeEqual) {
    const Bytes a{1, 2, 3};
    EXPECT_TRUE(constant_time_equal(a, Bytes{1, 2, 3}));
    EXPECT_FALSE(constant_time_equal(a, Bytes{1, 2, 4}));
    EXPECT_FALSE(constant_time_equal(a, Bytes{1, 2}));
}

TEST(Errors, NamesRoundTrip) {
    for (auto code : {ErrorCode::InvalidInput, ErrorCode::DuplicateLayer, ErrorCode::NotAuthorized,
                      ErrorCode::SessionExpired, ErrorCode::RequiresMasterTerminal, ErrorCode::IdentityLeakRejected}) {
        EXPECT_EQ(error_code_from_string(to_string(code)), code);
    }
    EXPECT_FALSE(error_code_from_string("Nope").has_value());
    const Error e(ErrorCode::NotFound, "missing");
    EXPECT_EQ(std::string(e.what()), "NotFound: missing");
}

TEST(Time, WindowsAreClosed) {
    const Window w{100, 200};
    EXPECT_FALSE(w.contains(99));
    EXPECT_TRUE(w.contains(100));
    EXPECT_TRUE(w.contains(200));
    EXPECT_FALSE(w.contains(201));
}

TEST(Time, EmptyWindowListAlwaysValid) {
    EXPECT_TRUE(windows_cover({}, 0));
    EXPECT_FALSE(windows_expired({}, 1'000'000'000'000));
    const std::vector<Window> ws{{10, 20}, {40, 50}};
    EXPECT_TRUE(windows_cover(ws, 45));
    EXPECT_FALSE(windows_cover(ws, 30));
    EXPECT_FALSE(windows_expired(ws, 30));
    EXPECT_FALSE(windows_expired(ws, 50));
    EXPECT_TRUE(windows_expired(ws, 51));
}

TEST(Time, ManualClockAndFormatting) {
    ManualClock clock(0);
    EXPECT_EQ(format_utc(clock.now()), "1970-01-01T00:00:00Z");
    clock.advance(86400 + 61);
    EXPECT_EQ(format_utc(clock.now()), "1970-01-02T00:01:01Z");
    clock.set(5);
    EXPECT_EQ(clock.now(), 5);
}

TEST(Identity, CanonicalString) {
    const Identity id{"Rossi", "Mario", "1970-01-01", "RSSMRA70A01H501U"};
    EXPECT_EQ(canonical_personal_data(id), "ROSSI|MARIO|1970-01-01|RSSMRA70A01H501U");
    const Identity accented{"D'Amato", "Niccolò", "1980-02-02", "X"};
    EXPECT_EQ(canonical_personal_data(accented), "D'AMATO|NICCOLò|1980-02-02|X");
}

TEST(Identity, QueryPrecedence) {
    const Identity id{"Rossi", "Mario", "1970-01-01", "RSSMRA70A01H501U"};
    EXPECT_TRUE(matches(IdentityQuery::by_fiscal_code("RSSMRA70A01H501U"), id));
    IdentityQuery q;
    q.surname = id.surname;
    q.given_name = id.given_name;
    q.birthdate = id.birthdate;
    EXPECT_TRUE(matches(q, id));
    q.surname = "Bianchi";
    EXPECT_FALSE(matches(q, id));
    // fiscal code wins even when name fields disagree
    IdentityQuery fq = IdentityQuery::by_fiscal_code("RSSMRA70A01H501U");
    fq.surname = "Bianchi";
    EXPECT_TRUE(matches(fq, id));
    IdentityQuery partial;
    partial.surname = "Rossi";
    EXPECT_NUSA_ERROR(validate(partial), ErrorCode::InvalidInput);
}

TEST(Journal, AppendReplayRewrite) {
    test::TempDir dir;
    {
        Journal j(dir / "j.log");
        j.append({{"n", 1}});
        j.append({{"n", 2}});
    }
    Journal j(dir / "j.log");
    std::vector<int> seen;
    j.replay([&](const nlohmann::json& e) { seen.push_back(e.at("n").get<int>()); });
    EXPECT_EQ(seen, (std::vector<int>{1, 2}));
    j.rewrite({{{"n", 9}}});
    j.append({{"n", 10}});
    seen.clear();
    Journal(dir / "j.log").replay([&](const nlohmann::json& e) { seen.push_back(e.at("n").get<int>()); });
    EXPECT_EQ(seen, (std::vector<int>{9, 10}));
}

TEST(Journal, CorruptLineIsParseError) {
    test::TempDir dir;
    {
        std::ofstream out(dir / "j.log");
        out << "{\"n\":1}\nnot json\n";
    }
    Journal j(dir / "j.log");
    EXPECT_NUSA_ERROR(j.replay([](const nlohmann::json&) {}), ErrorCode::ParseError);
}

TEST(Journal, DisabledJournalIsNoOp) {
    Journal j;
    EXPECT_FALSE(j.enabled());
    j.append({{"n", 1}});
    int calls = 0;
    j.replay([&](const nlohmann::json&) { ++calls; });
    EXPECT_EQ(calls, 0);
}
