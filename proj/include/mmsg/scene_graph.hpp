#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mmsg/common.hpp"
#include "mmsg/vocab.hpp"

namespace mmsg {

struct Triplet {
    std::string subject;
    std::string object;
    std::string predicate;

    auto operator<=>(const Triplet&) const = default;

    std::string text(const VocabSpec& v) const {
        const std::string& d = v.structural().field_delimiter;
        return subject + d + object + d + predicate;
    }
};

// Ordered set of triplets at one timepoint: insertion order is preserved for
// serialization, equality is set-based.
struct SceneGraph {
    int64_t timepoint_id = 0;
    std::vector<Triplet> triplets;

    static constexpr size_t kMaxTriplets = 64;

    bool contains(const Triplet& t) const {
        for (const auto& x : triplets)
            if (x == t) return true;
        return false;
    }

    // Returns false (and leaves the graph unchanged) on duplicates.
    bool insert(Triplet t) {
        if (contains(t)) return false;
        triplets.push_back(std::move(t));
        return true;
    }

    bool same_triplets(const SceneGraph& other) const {
        if (triplets.size() != other.triplets.size()) return false;
        for (const auto& t : triplets)
            if (!other.contains(t)) return false;
        return true;
    }

    bool empty() const { return triplets.empty(); }
    size_t size() const { return triplets.size(); }
};

enum class ViolationKind {
    UnknownSubject,
    UnknownObject,
    UnknownPredicate,
    SelfLoop,
    DuplicateTriplet,
    TooManyTriplets,
    NegativeTimepoint,
};

struct Violation {
    ViolationKind kind;
    std::string detail;
};

inline std::string to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::UnknownSubject: return "unknown subject";
        case ViolationKind::UnknownObject: return "unknown object";
        case ViolationKind::UnknownPredicate: return "unknown predicate";
        case ViolationKind::SelfLoop: return "self loop";
        case ViolationKind::DuplicateTriplet: return "duplicate triplet";
        case ViolationKind::TooManyTriplets: return "too many triplets";
        case ViolationKind::NegativeTimepoint: return "negative timepoint id";
    }
    return "unknown violation";
}

inline std::string to_string(const Violation& v) {
    return to_string(v.kind) + ": " + v.detail;
}

// Violations are data, not exceptions; empty list iff the graph is valid.
inline std::vector<Violation> validate_graph(const SceneGraph& g, const VocabSpec& v) {
    std::vector<Violation> out;
    if (g.timepoint_id < 0)
        out.push_back({ViolationKind::NegativeTimepoint, std::to_string(g.timepoint_id)});
    if (g.triplets.size() > SceneGraph::kMaxTriplets)
        out.push_back({ViolationKind::TooManyTriplets, std::to_string(g.triplets.size())});
    for (size_t i = 0; i < g.triplets.size(); ++i) {
        const Triplet& t = g.triplets[i];
        if (!v.has_entity(t.subject))
            out.push_back({ViolationKind::UnknownSubject, t.subject});
        if (!v.has_entity(t.object))
            out.push_back({ViolationKind::UnknownObject, t.object});
        if (!v.has_predicate(t.predicate))
            out.push_back({ViolationKind::UnknownPredicate, t.predicate});
        if (t.subject == t.object)
            out.push_back({ViolationKind::SelfLoop, t.text(v)});
        for (size_t j = i + 1; j < g.triplets.size(); ++j)
            if (g.triplets[j] == t)
                out.push_back({ViolationKind::DuplicateTriplet, t.text(v)});
    }
    return out;
}

// Canonical text form: "s,o,p; s,o,p;" in graph order; "" for the empty graph.
inline std::string serialize_triplets(const SceneGraph& g, const VocabSpec& v) {
    auto violations = validate_graph(g, v);
    if (!violations.empty())
        throw std::invalid_argument("serialize_triplets: invalid graph: " +
                                    to_string(violations.front()));
    std::string out;
    const std::string& sep = v.structural().separator;
    for (size_t i = 0; i < g.triplets.size(); ++i) {
        if (i) out += ' ';
        out += g.triplets[i].text(v);
        out += sep;
    }
    return out;
}

struct ParseResult {
    SceneGraph graph;
    std::vector<std::string> rejected;
};

// Tolerant inverse of serialize_triplets: total on arbitrary input. Well
// formed, in-vocabulary, non-self-loop fragments become triplets; duplicates
// are silently dropped; everything else lands in `rejected` verbatim.
inline ParseResult parse_triplets(std::string_view text, const VocabSpec& v) {
    ParseResult res;
    char sep = v.structural().separator.empty() ? ';' : v.structural().separator[0];
    char delim = v.structural().field_delimiter.empty() ? ',' : v.structural().field_delimiter[0];
    for (const std::string& raw : split(text, sep)) {
        std::string frag = trim(raw);
        if (frag.empty()) continue;
        auto fields = split(frag, delim);
        if (fields.size() != 3) {
            res.rejected.push_back(frag);
            continue;
        }
        Triplet t{trim(fields[0]), trim(fields[1]), trim(fields[2])};
        if (!v.has_entity(t.subject) || !v.has_entity(t.object) ||
            !v.has_predicate(t.predicate) || t.subject == t.object) {
            res.rejected.push_back(frag);
            continue;
        }
        res.graph.insert(std::move(t));
    }
    return res;
}

// |A∩B| / |A∪B| over triplet sets; 1.0 when both graphs are empty.
inline double jaccard(const SceneGraph& a, const SceneGraph& b) {
    if (a.empty() && b.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& t : a.triplets)
        if (b.contains(t)) ++inter;
    size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline nlohmann::json graph_to_json(const SceneGraph& g) {
    nlohmann::json triplets = nlohmann::json::array();
    for (const auto& t : g.triplets)
        triplets.push_back({t.subject, t.object, t.predicate});
    return {{"timepoint_id", g.timepoint_id}, {"triplets", triplets}};
}

inline SceneGraph graph_from_json(const nlohmann::json& j) {
    SceneGraph g;
    g.timepoint_id = j.at("timepoint_id").get<int64_t>();
    for (const auto& t : j.at("triplets")) {
        if (!t.is_array() || t.size() != 3)
            throw std::runtime_error("graph_from_json: triplet must be a 3-element array");
        g.insert({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
    }
    return g;
}

}  // namespace mmsg
