#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmsg/scene_graph.hpp"

namespace mmsg {

// Temporal context: the k most recent graphs verbatim, plus every triplet
// ever seen, kept once in order of first occurrence.
struct MemoryContext {
    std::vector<SceneGraph> short_term;
    std::vector<Triplet> long_term;

    bool empty() const { return short_term.empty() && long_term.empty(); }
};

inline MemoryContext build_memory(std::span<const SceneGraph> history, size_t k) {
    MemoryContext m;
    for (const SceneGraph& g : history) {
        for (const Triplet& t : g.triplets) {
            bool seen = false;
            for (const Triplet& u : m.long_term)
                if (u == t) {
                    seen = true;
                    break;
                }
            if (!seen) m.long_term.push_back(t);
        }
    }
    size_t start = history.size() > k ? history.size() - k : 0;
    m.short_term.assign(history.begin() + start, history.end());
    return m;
}

inline MemoryContext build_memory(const std::vector<SceneGraph>& history, size_t k) {
    return build_memory(std::span<const SceneGraph>(history), k);
}

// Deterministic text form: one long-term line, then one line per short-term
// graph, oldest first. Shape: "long: a,b,c;d,e,f | recent[t-2]: ... | recent[t-1]: ...".
inline std::string render_memory(const MemoryContext& m, const VocabSpec& v) {
    if (m.empty()) return "memory: none";
    std::string out = "long: ";
    if (m.long_term.empty()) {
        out += "none";
    } else {
        for (size_t i = 0; i < m.long_term.size(); ++i) {
            if (i) out += v.structural().separator;
            out += m.long_term[i].text(v);
        }
    }
    size_t n = m.short_term.size();
    for (size_t i = 0; i < n; ++i) {
        out += " | recent[t-" + std::to_string(n - i) + "]: ";
        const SceneGraph& g = m.short_term[i];
        if (g.empty()) {
            out += "none";
        } else {
            for (size_t j = 0; j < g.triplets.size(); ++j) {
                if (j) out += v.structural().separator;
                out += g.triplets[j].text(v);
            }
        }
    }
    return out;
}

}  // namespace mmsg
