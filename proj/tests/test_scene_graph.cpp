#include "doctest.h"

#include "mmsg/common.hpp"
#include "mmsg/scene_graph.hpp"

using namespace mmsg;

namespace {

const VocabSpec& V() { return VocabSpec::default_or(); }

SceneGraph random_graph(Rng& rng, size_t max_triplets = 12) {
    const auto& ents = V().entities();
    const auto& preds = V().predicates();
    SceneGraph g;
    g.timepoint_id = static_cast<int64_t>(rng.index(1000));
    size_t n = rng.index(max_triplets + 1);
    for (size_t i = 0; i < n; ++i) {
        Triplet t;
        t.subject = ents[rng.index(ents.size())];
        do {
            t.object = ents[rng.index(ents.size())];
        } while (t.object == t.subject);
        t.predicate = preds[rng.index(preds.size())];
        g.insert(t);
    }
    return g;
}

}  // namespace

TEST_CASE("vocabulary is the closed 21/16 class set") {
    CHECK(V().entities().size() == 21);
    CHECK(V().predicates().size() == 16);
    CHECK(V().has_entity("head_surgeon"));
    CHECK(V().has_entity("mps_station"));
    CHECK(V().has_predicate("close_to"));
    CHECK(!V().has_entity("surgeonX"));
    for (size_t i = 0; i < V().entities().size(); ++i)
        CHECK(V().entity_index(V().entities()[i]) == static_cast<int>(i));
}

TEST_CASE("vocab json round-trip and version check") {
    auto j = V().to_json();
    auto v2 = VocabSpec::from_json(j);
    CHECK(v2.entities() == V().entities());
    CHECK(v2.predicates() == V().predicates());
    j["version"] = 99;
    CHECK_THROWS(VocabSpec::from_json(j));
}

TEST_CASE("validate_graph flags the spec'd violations") {
    SceneGraph ok;
    ok.insert({"head_surgeon", "patient", "drilling"});
    CHECK(validate_graph(ok, V()).empty());

    SceneGraph self_loop;
    self_loop.insert({"patient", "patient", "close_to"});
    auto v1 = validate_graph(self_loop, V());
    REQUIRE(v1.size() == 1);
    CHECK(v1[0].kind == ViolationKind::SelfLoop);

    SceneGraph unknown;
    unknown.insert({"surgeonX", "patient", "drilling"});
    auto v2 = validate_graph(unknown, V());
    REQUIRE(v2.size() == 1);
    CHECK(v2[0].kind == ViolationKind::UnknownSubject);

    SceneGraph dup;
    dup.triplets.push_back({"head_surgeon", "patient", "drilling"});
    dup.triplets.push_back({"head_surgeon", "patient", "drilling"});
    auto v3 = validate_graph(dup, V());
    REQUIRE(v3.size() == 1);
    CHECK(v3[0].kind == ViolationKind::DuplicateTriplet);
}

TEST_CASE("serialize matches the canonical text form") {
    SceneGraph g;
    g.insert({"head_surgeon", "drill", "holding"});
    CHECK(serialize_triplets(g, V()) == "head_surgeon,drill,holding;");

    SceneGraph g2;
    g2.insert({"patient", "operating_table", "lying_on"});
    CHECK(serialize_triplets(g2, V()) == "patient,operating_table,lying_on;");

    SceneGraph empty;
    CHECK(serialize_triplets(empty, V()) == "");

    SceneGraph bad;
    bad.insert({"patient", "patient", "close_to"});
    CHECK_THROWS_AS(serialize_triplets(bad, V()), std::invalid_argument);
}

TEST_CASE("parse accepts well-formed fragments and rejects the rest") {
    auto r = parse_triplets("patient,operating_table,lying_on;", V());
    REQUIRE(r.graph.size() == 1);
    CHECK(r.rejected.empty());
    CHECK(r.graph.triplets[0] == Triplet{"patient", "operating_table", "lying_on"});

    auto r2 = parse_triplets(
        "patient,operating_table,lying_on; garbage; patient,operating_table,lying_on;", V());
    CHECK(r2.graph.size() == 1);
    REQUIRE(r2.rejected.size() == 1);
    CHECK(r2.rejected[0] == "garbage");

    auto r3 = parse_triplets("", V());
    CHECK(r3.graph.empty());
    CHECK(r3.rejected.empty());

    // self-loops and out-of-vocabulary fragments are rejected, not fatal
    auto r4 = parse_triplets("patient,patient,close_to; foo,patient,holding;", V());
    CHECK(r4.graph.empty());
    CHECK(r4.rejected.size() == 2);
}

TEST_CASE("round-trip property over random graphs") {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        SceneGraph g = random_graph(rng);
        auto r = parse_triplets(serialize_triplets(g, V()), V());
        CHECK(r.rejected.empty());
        CHECK(r.graph.same_triplets(g));
    }
}

TEST_CASE("parser is total on arbitrary byte strings") {
    Rng rng(13);
    for (int i = 0; i < 500; ++i) {
        std::string s;
        size_t n = rng.index(120);
        for (size_t j = 0; j < n; ++j) s.push_back(static_cast<char>(rng.index(256)));
        auto r = parse_triplets(s, V());
        CHECK(r.graph.size() <= SceneGraph::kMaxTriplets + s.size());
    }
}

TEST_CASE("jaccard set arithmetic") {
    SceneGraph a, b;
    a.insert({"head_surgeon", "patient", "drilling"});
    a.insert({"patient", "operating_table", "lying_on"});
    b.insert({"patient", "operating_table", "lying_on"});
    b.insert({"nurse", "instrument_table", "close_to"});
    CHECK(jaccard(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(jaccard(a, a) == 1.0);

    SceneGraph e1, e2;
    CHECK(jaccard(e1, e2) == 1.0);

    SceneGraph c;
    c.insert({"student", "nurse", "close_to"});
    CHECK(jaccard(a, c) == 0.0);
}

TEST_CASE("jaccard properties: symmetric, bounded, 1 iff equal sets") {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        SceneGraph a = random_graph(rng), b = random_graph(rng);
        double j1 = jaccard(a, b), j2 = jaccard(b, a);
        CHECK(j1 == j2);
        CHECK(j1 >= 0.0);
        CHECK(j1 <= 1.0);
        bool equal_sets = a.same_triplets(b);
        if (!a.empty() || !b.empty()) CHECK((j1 == 1.0) == equal_sets);
    }
}

TEST_CASE("graph json round-trip") {
    Rng rng(5);
    SceneGraph g = random_graph(rng);
    auto j = graph_to_json(g);
    SceneGraph g2 = graph_from_json(j);
    CHECK(g2.timepoint_id == g.timepoint_id);
    CHECK(g2.same_triplets(g));
}
