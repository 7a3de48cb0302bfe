#include "generators.hpp"

#include "mammofed/error.hpp"
#include "mammofed/query.hpp"

#include <algorithm>

#include <doctest.h>

using namespace mammofed;
using nlohmann::json;

namespace {

FormalQuery images_where(Predicate p) {
    FormalQuery q;
    q.target = Entity::images;
    q.predicate = std::move(p);
    return q;
}

Predicate shuffled(const Predicate& p, mftest::Rng& rng) {
    return std::visit(
        [&](const auto& n) -> Predicate {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                std::vector<Predicate> kids;
                for (const auto& c : n.children) kids.push_back(shuffled(c, rng));
                std::shuffle(kids.begin(), kids.end(), rng);
                return Predicate{T{std::move(kids)}};
            } else if constexpr (std::is_same_v<T, Not>) {
                return negate(shuffled(*n.child, rng));
            } else if constexpr (std::is_same_v<T, Cmp>) {
                Cmp c = n;
                if (c.op == CmpOp::in) std::shuffle(c.values.begin(), c.values.end(), rng);
                return Predicate{c};
            } else {
                return Predicate{n};
            }
        },
        p.node);
}

} // namespace

TEST_SUITE("query_model") {

TEST_CASE("FNV-1a 64 matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("numbers render in shortest round-trip form") {
    CHECK(format_number(50) == "50");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(1.0 / 3) == "0.3333333333333333");
    CHECK(render_literal(Literal{true}) == "true");
    CHECK(render_literal(Literal{std::string("a\"b")}) == "\"a\\\"b\"");
}

TEST_CASE("canonical text ignores child order, double negation and in-list order") {
    auto a = compare("patient.age_years", CmpOp::gt, {50.0});
    auto b = compare("patient.hrt", CmpOp::eq, {true});
    auto q1 = images_where(all_of({a, b}));
    auto q2 = images_where(all_of({b, negate(negate(a))}));
    CHECK(normalize(q1) == normalize(q2));

    auto in1 = images_where(compare("image.view", CmpOp::in, {std::string("MLO"), std::string("CC"), std::string("MLO")}));
    auto in2 = images_where(compare("image.view", CmpOp::in, {std::string("CC"), std::string("MLO")}));
    CHECK(normalize(in1) == normalize(in2));

    CHECK(normalize(q1) != normalize(images_where(any_of({a, b}))));
}

TEST_CASE("the cache key is the FNV hash of the canonical text") {
    auto c = normalize(images_where(compare("patient.age_years", CmpOp::between, {50.0, 55.0})));
    CHECK(c.key == fnv1a64(c.canonical_text));
}

TEST_CASE("origin site does not change the key but the hop budget does") {
    auto q = images_where(compare("patient.age_years", CmpOp::between, {50.0, 55.0}));
    auto from_a = q, from_b = q, local = q;
    from_a.scope.origin_site = "A";
    from_b.scope.origin_site = "B";
    local.scope.hop_budget = 0;
    CHECK(normalize(from_a) == normalize(from_b));
    CHECK(normalize(from_a) != normalize(local));
}

TEST_CASE("projection order and ALL are part of the key") {
    auto q = images_where(Predicate{And{}});
    auto explicit_all = q;
    explicit_all.projection = std::vector<std::string>{"image.image_id"};
    CHECK(normalize(q) != normalize(explicit_all));
}

TEST_CASE("canonical form is idempotent and insensitive to shuffling") {
    mftest::Rng rng(21);
    mftest::QueryGenOptions opts;
    opts.sample_ids = {"A-p1", "A-s2"};
    for (int i = 0; i < 300; ++i) {
        FormalQuery q = mftest::random_query(rng, opts);
        Predicate c = canonical_form(q.predicate);
        CHECK(canonical_form(c) == c);
        FormalQuery s = q;
        s.predicate = shuffled(q.predicate, rng);
        CHECK(normalize(s) == normalize(q));
    }
}

TEST_CASE("validation rejects ill-formed queries") {
    FormalQuery q;
    q.target = Entity::patients;
    q.predicate = compare("image.view", CmpOp::eq, {std::string("CC")});
    CHECK_THROWS_AS(validate(q), QueryError);  // images are not reachable from patients

    CHECK_THROWS_AS(validate(images_where(compare("patient.shoe_size", CmpOp::eq, {1.0}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("patient.age_years", CmpOp::between, {55.0, 50.0}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("patient.age_years", CmpOp::eq, {std::string("old")}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("image.view", CmpOp::eq, {std::string("LAT")}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("image.view", CmpOp::lt, {std::string("CC")}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("image.feature_vector", CmpOp::eq, {1.0}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(compare("patient.age_years", CmpOp::eq, {1.0, 2.0}))), QueryError);
    CHECK_THROWS_AS(validate(images_where(derived("density_asymmetry", json::object(), CmpOp::ge, {std::string("x")}))), QueryError);

    Predicate deep = compare("patient.age_years", CmpOp::gt, {1.0});
    for (int i = 0; i < kMaxPredicateDepth; ++i) deep = negate(deep);
    CHECK_THROWS_AS(validate(images_where(deep)), QueryError);

    auto hop = images_where(Predicate{And{}});
    hop.scope.hop_budget = 2;
    CHECK_THROWS_AS(validate(hop), QueryError);

    auto proj = images_where(Predicate{And{}});
    proj.projection = std::vector<std::string>{"annotation.kind"};
    CHECK_THROWS_AS(validate(proj), QueryError);

    CHECK_NOTHROW(validate(images_where(compare("patient.age_years", CmpOp::between, {50.0, 50.0}))));
}

TEST_CASE("encode and decode round-trip random trees") {
    mftest::Rng rng(22);
    mftest::QueryGenOptions opts;
    opts.reference_images = {"A-i0"};
    opts.sample_ids = {"A-p1", "quote\"d", "back\\slash"};
    for (int i = 0; i < 500; ++i) {
        FormalQuery q = mftest::random_query(rng, opts);
        q.scope.origin_site = "A";
        FormalQuery back = decode(encode(q));
        CHECK(back == q);
        CHECK(normalize(back) == normalize(q));
        CHECK(formal_query_from_json(to_json(q)) == q);
    }
}

TEST_CASE("malformed wire text reports a byte offset") {
    try {
        decode(R"({"target":"images", "predicate": )");
        FAIL("decode accepted truncated text");
    } catch (const ParseError& e) {
        CHECK(e.offset() > 0);
    }
    CHECK_THROWS_AS(decode(R"({"target":"scanners","predicate":{"kind":"and","children":[]},"projection":"ALL","scope":{"origin_site":"","hop_budget":1}})"),
                    ParseError);
    CHECK_THROWS_AS(decode(R"({"target":"images","predicate":{"kind":"xor"},"projection":"ALL","scope":{"origin_site":"","hop_budget":1}})"),
                    ParseError);
}

TEST_CASE("effective projection defaults to the target's own attributes") {
    auto q = images_where(Predicate{And{}});
    auto p = effective_projection(q);
    CHECK(p.front() == "image.image_id");
    CHECK(std::all_of(p.begin(), p.end(), [](const std::string& s) { return s.rfind("image.", 0) == 0; }));
    CHECK(depth(all_of({negate(compare("patient.age_years", CmpOp::gt, {1.0}))})) == 3);
}

}
