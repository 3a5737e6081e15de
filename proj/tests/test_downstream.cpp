#include "doctest.h"

#include "mmsg/common.hpp"
#include "mmsg/downstream.hpp"

using namespace mmsg;

namespace {

const VocabSpec& V() { return VocabSpec::default_or(); }

SceneGraph make(std::initializer_list<Triplet> ts) {
    SceneGraph g;
    for (const auto& t : ts) g.insert(t);
    return g;
}

}  // namespace

TEST_CASE("detect_breach rule") {
    auto policy = SterilityPolicy::default_or();
    REQUIRE(policy.valid());

    // circulator (non-sterile) touching head_surgeon (sterile) -> breach
    auto g1 = make({{"circulator", "head_surgeon", "touching"}});
    auto r1 = detect_breach(g1, policy);
    CHECK(r1.breach);
    REQUIRE(r1.offending.size() == 1);

    // both sterile -> no breach
    auto g2 = make({{"head_surgeon", "patient", "drilling"}});
    CHECK(!detect_breach(g2, policy).breach);

    // proximity is not contact
    auto g3 = make({{"circulator", "head_surgeon", "close_to"}});
    CHECK(!detect_breach(g3, policy).breach);

    // direction does not matter
    auto g4 = make({{"head_surgeon", "circulator", "touching"}});
    CHECK(detect_breach(g4, policy).breach);

    // unclassified endpoints (patient, mako_robot) never breach
    auto g5 = make({{"mps", "mako_robot", "touching"}, {"patient", "head_surgeon", "touching"}});
    CHECK(!detect_breach(g5, policy).breach);
}

TEST_CASE("detect_breach is monotone under triplet addition") {
    auto policy = SterilityPolicy::default_or();
    Rng rng(31);
    const auto& ents = V().entities();
    const auto& preds = V().predicates();
    for (int iter = 0; iter < 1000; ++iter) {
        SceneGraph g;
        size_t n = rng.index(8);
        for (size_t i = 0; i < n; ++i) {
            std::string s = ents[rng.index(ents.size())];
            std::string o = ents[rng.index(ents.size())];
            if (s == o) continue;
            g.insert({s, o, preds[rng.index(preds.size())]});
        }
        bool before = detect_breach(g, policy).breach;
        SceneGraph extended = g;
        for (int extra = 0; extra < 3; ++extra) {
            std::string s = ents[rng.index(ents.size())];
            std::string o = ents[rng.index(ents.size())];
            if (s == o) continue;
            extended.insert({s, o, preds[rng.index(preds.size())]});
        }
        bool after = detect_breach(extended, policy).breach;
        if (before) CHECK(after);  // adding triplets never clears a breach
    }
}

TEST_CASE("sterility policy json round-trip rejects overlap") {
    auto policy = SterilityPolicy::default_or();
    auto j = policy.to_json();
    auto p2 = SterilityPolicy::from_json(j);
    CHECK(p2.sterile == policy.sterile);
    CHECK(p2.non_sterile == policy.non_sterile);
    CHECK(p2.contact_predicates == policy.contact_predicates);

    j["non_sterile"].push_back("head_surgeon");
    CHECK_THROWS(SterilityPolicy::from_json(j));
}

TEST_CASE("featurize_history dimensions and determinism") {
    auto A = Triplet{"patient", "operating_table", "lying_on"};
    auto B = Triplet{"head_surgeon", "patient", "close_to"};
    TripletEnumeration e;
    e.triplets = {A, B};

    std::vector<SceneGraph> window = {make({A}), make({A, B}), SceneGraph{}};
    auto f = featurize_history(window, e, V());
    size_t per = e.size() + V().predicates().size();
    REQUIRE(f.size() == window.size() * per);
    CHECK(f[0] == 1.0);                      // A present at w=0
    CHECK(f[1] == 0.0);                      // B absent at w=0
    CHECK(f[per + 1] == 1.0);                // B present at w=1
    CHECK(f[2 + V().predicate_index("lying_on")] == 1.0);  // count feature

    // empty graphs -> zero vector
    std::vector<SceneGraph> empty_window(2);
    auto f0 = featurize_history(empty_window, e, V());
    for (double x : f0) CHECK(x == 0.0);

    auto f2 = featurize_history(window, e, V());
    CHECK(f == f2);
}

TEST_CASE("task classifier learns separable phases and ties break by label order") {
    // two phases with disjoint signature triplets -> separable by construction
    auto A = Triplet{"mps", "mako_robot", "calibrating"};
    auto B = Triplet{"head_surgeon", "patient", "suturing"};
    std::vector<TaskSample> data;
    for (int i = 0; i < 20; ++i) {
        data.push_back({{make({A}), make({A})}, "robot_calibration"});
        data.push_back({{make({B}), make({B})}, "closure"});
    }
    TaskTrainConfig cfg;
    cfg.window = 2;
    cfg.hidden = 16;
    cfg.epochs = 40;
    cfg.seed = 5;
    std::vector<std::string> labels = {"closure", "robot_calibration"};
    auto c = train_task_classifier(data, "phase", labels, V(), cfg);

    size_t correct = 0;
    for (const auto& s : data)
        if (predict_task(c, s.window, V()) == s.label) ++correct;
    CHECK(correct == data.size());

    // determinism
    auto c2 = train_task_classifier(data, "phase", labels, V(), cfg);
    CHECK(c.w1 == c2.w1);
    CHECK(c.w2 == c2.w2);

    // zero-weight classifier -> first label by tie-break
    TaskClassifier zero = c;
    std::fill(zero.w1.begin(), zero.w1.end(), 0.0);
    std::fill(zero.b1.begin(), zero.b1.end(), 0.0);
    std::fill(zero.w2.begin(), zero.w2.end(), 0.0);
    std::fill(zero.b2.begin(), zero.b2.end(), 0.0);
    CHECK(predict_task(zero, data[0].window, V()) == "closure");

    // window of empty graphs -> defined label, no crash
    std::vector<SceneGraph> empty_window(2);
    CHECK_NOTHROW(predict_task(c, empty_window, V()));

    // prediction invariant to triplet ordering inside each graph
    auto g_fwd = make({A, B});
    SceneGraph g_rev;
    g_rev.insert(B);
    g_rev.insert(A);
    std::vector<SceneGraph> w1 = {g_fwd, g_fwd};
    std::vector<SceneGraph> w2 = {g_rev, g_rev};
    CHECK(predict_task(c, w1, V()) == predict_task(c, w2, V()));

    // single-class dataset -> degenerate classifier predicting that class
    std::vector<TaskSample> mono(data.begin(), data.begin() + 5);
    auto cm = train_task_classifier(mono, "phase", labels, V(), cfg);
    CHECK(predict_task(cm, mono[0].window, V()) == mono[0].label);

    CHECK_THROWS(train_task_classifier({}, "phase", labels, V(), cfg));
}
