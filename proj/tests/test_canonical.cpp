#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "acnbp/canonical.hpp"
#include "acnbp/core_model.hpp"
#include "support/fixtures.hpp"

using namespace acnbp;

TEST_CASE("object keys sorted by code point, no whitespace") {
    json v;
    v["b"] = 1;
    v["a"] = 2;
    CHECK(canonical::encode(v) == "{\"a\":2,\"b\":1}");
}

TEST_CASE("encoding is deterministic") {
    json v = {{"name", "x"}, {"vals", {1, 2, 3}}, {"nested", {{"z", 0.5}, {"a", true}}}};
    CHECK(canonical::encode(v) == canonical::encode(v));
}

TEST_CASE("integers minimal decimal, reals round-trip form") {
    json v = {{"i", 42}, {"neg", -7}, {"r", 0.5}, {"whole", 2.0}};
    CHECK(canonical::encode(v) == "{\"i\":42,\"neg\":-7,\"r\":0.5,\"whole\":2.0}");
}

TEST_CASE("NaN and infinity are unencodable") {
    json v = {{"x", std::nan("")}};
    CHECK_THROWS_AS(canonical::encode(v), DomainError);
    json inf = {{"x", std::numeric_limits<double>::infinity()}};
    CHECK_THROWS_AS(canonical::encode(inf), DomainError);
    json nested = {{"list", {1.0, -std::numeric_limits<double>::infinity()}}};
    CHECK_THROWS_AS(canonical::encode(nested), DomainError);
}

TEST_CASE("two ANRIs differing in one metadata key encode differently") {
    auto agents = fixtures::translator_cohort();
    Anri a = agents[0].anri;
    Anri b = a;
    b.metadata.reputation = 0.86;
    // brute structural comparison as the oracle
    bool structurally_equal = (json(a) == json(b));
    CHECK_FALSE(structurally_equal);
    CHECK(canonical::encode(json(a)) != canonical::encode(json(b)));
    // and equality of bytes for the untouched record
    CHECK(canonical::encode(json(a)) == canonical::encode(json(agents[0].anri)));
}

TEST_CASE("parse rejects garbage") {
    auto r = canonical::parse("{nope");
    REQUIRE_FALSE(r.ok());
    CHECK(r.code() == Err::ParseError);
}

static std::filesystem::path golden_dir() {
    return std::filesystem::path(ACNBP_SOURCE_DIR) / "tests" / "golden";
}

static void check_golden(const std::string& name, const std::string& bytes) {
    auto path = golden_dir() / name;
    REQUIRE_MESSAGE(std::filesystem::exists(path), "missing golden file " << path);
    std::ifstream in(path, std::ios::binary);
    std::string expected((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK_MESSAGE(bytes == expected, "wire bytes drifted from " << name);
}

TEST_CASE("golden wire bytes: ANRI, query, envelope, commitment") {
    auto agents = fixtures::translator_cohort();
    check_golden("anri_translator_c.golden", canonical::encode(json(agents[2].anri)));
    check_golden("query_legal_translation.golden",
                 canonical::encode(json(fixtures::legal_translation_query())));
    check_golden("envelope_ssr.golden", canonical::encode(json(fixtures::golden_envelope())));
    check_golden("commitment.golden", canonical::encode(json(fixtures::golden_commitment())));
}
