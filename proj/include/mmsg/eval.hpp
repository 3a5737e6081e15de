#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/scene_graph.hpp"

namespace mmsg {

struct Tally {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
};

// Per-predicate confusion counts over exact triplet matches. Additive over
// dataset shards.
struct ConfusionTallies {
    std::map<std::string, Tally> per_predicate;

    void add(const ConfusionTallies& other) {
        for (const auto& [name, t] : other.per_predicate) {
            Tally& mine = per_predicate[name];
            mine.tp += t.tp;
            mine.fp += t.fp;
            mine.fn += t.fn;
        }
    }
};

// A predicted triplet is TP iff the identical (subject, object, predicate)
// exists in gt; unmatched predictions are FP, unmatched gt triplets FN.
inline ConfusionTallies tally(const SceneGraph& pred, const SceneGraph& gt) {
    ConfusionTallies out;
    for (const Triplet& p : pred.triplets) {
        if (gt.contains(p))
            out.per_predicate[p.predicate].tp += 1;
        else
            out.per_predicate[p.predicate].fp += 1;
    }
    for (const Triplet& g : gt.triplets)
        if (!pred.contains(g)) out.per_predicate[g.predicate].fn += 1;
    return out;
}

// 2pr/(p+r), 0 when p+r = 0.
inline double f1_from_pr(double p, double r) {
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

struct ClassStats {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;  // tp + fn
    long long tp = 0, fp = 0, fn = 0;
};

struct ClassReport {
    std::map<std::string, ClassStats> per_class;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
};

// P/R/F1 with the 0-on-zero-denominator convention. Macro averages run over
// predicates with any presence in the run (tp+fp+fn > 0); weighted averages
// are support-weighted.
inline ClassReport report(const ConfusionTallies& t,
                          const std::vector<std::string>& predicate_order) {
    ClassReport r;
    double macro_p = 0, macro_r = 0, macro_f = 0;
    long long n_macro = 0;
    double wsum_p = 0, wsum_r = 0, wsum_f = 0;
    long long total_support = 0;

    auto class_list = predicate_order;
    for (const auto& [name, tt] : t.per_predicate) {
        (void)tt;
        bool known = false;
        for (const auto& p : class_list)
            if (p == name) {
                known = true;
                break;
            }
        if (!known) class_list.push_back(name);
    }

    for (const std::string& name : class_list) {
        auto it = t.per_predicate.find(name);
        Tally tt = it == t.per_predicate.end() ? Tally{} : it->second;
        ClassStats cs;
        cs.tp = tt.tp;
        cs.fp = tt.fp;
        cs.fn = tt.fn;
        cs.support = tt.tp + tt.fn;
        cs.precision = (tt.tp + tt.fp) > 0 ? double(tt.tp) / double(tt.tp + tt.fp) : 0.0;
        cs.recall = (tt.tp + tt.fn) > 0 ? double(tt.tp) / double(tt.tp + tt.fn) : 0.0;
        cs.f1 = f1_from_pr(cs.precision, cs.recall);
        r.per_class[name] = cs;

        if (tt.tp + tt.fp + tt.fn > 0) {
            macro_p += cs.precision;
            macro_r += cs.recall;
            macro_f += cs.f1;
            ++n_macro;
        }
        wsum_p += cs.precision * double(cs.support);
        wsum_r += cs.recall * double(cs.support);
        wsum_f += cs.f1 * double(cs.support);
        total_support += cs.support;
    }
    if (n_macro > 0) {
        r.macro_precision = macro_p / double(n_macro);
        r.macro_recall = macro_r / double(n_macro);
        r.macro_f1 = macro_f / double(n_macro);
    }
    if (total_support > 0) {
        r.weighted_precision = wsum_p / double(total_support);
        r.weighted_recall = wsum_r / double(total_support);
        r.weighted_f1 = wsum_f / double(total_support);
    }
    return r;
}

// Frequency grouping by training occurrence counts.
struct FrequencyGroups {
    static constexpr long long kHeadMin = 10000;
    static constexpr long long kBodyMin = 1000;

    std::vector<std::string> head, body, tail;
    ClassReport head_report, body_report, tail_report;
};

inline FrequencyGroups group_by_frequency(const ConfusionTallies& t,
                                          const std::map<std::string, long long>& train_counts,
                                          const std::vector<std::string>& predicate_order) {
    FrequencyGroups g;
    std::vector<std::string> head_order, body_order, tail_order;
    ConfusionTallies head_t, body_t, tail_t;
    for (const std::string& name : predicate_order) {
        auto it = train_counts.find(name);
        long long c = it == train_counts.end() ? 0 : it->second;
        auto tit = t.per_predicate.find(name);
        Tally tt = tit == t.per_predicate.end() ? Tally{} : tit->second;
        if (c >= FrequencyGroups::kHeadMin) {
            g.head.push_back(name);
            head_t.per_predicate[name] = tt;
        } else if (c >= FrequencyGroups::kBodyMin) {
            g.body.push_back(name);
            body_t.per_predicate[name] = tt;
        } else {
            g.tail.push_back(name);
            tail_t.per_predicate[name] = tt;
        }
    }
    g.head_report = report(head_t, g.head);
    g.body_report = report(body_t, g.body);
    g.tail_report = report(tail_t, g.tail);
    return g;
}

// Multiview fusion: set union of triplets, view order preserved.
inline SceneGraph fuse_views(std::span<const SceneGraph> views) {
    if (views.empty()) throw std::invalid_argument("fuse_views: need at least one view");
    SceneGraph out;
    out.timepoint_id = views.front().timepoint_id;
    for (const SceneGraph& g : views)
        for (const Triplet& t : g.triplets) out.insert(t);
    return out;
}

inline SceneGraph fuse_views(const std::vector<SceneGraph>& views) {
    return fuse_views(std::span<const SceneGraph>(views));
}

inline std::string report_to_csv(const ClassReport& r,
                                 const std::vector<std::string>& predicate_order) {
    char buf[256];
    std::string csv = "predicate,precision,recall,f1,support,tp,fp,fn\n";
    auto row = [&](const std::string& name, const ClassStats& cs) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%lld,%lld,%lld,%lld\n",
                      name.c_str(), cs.precision, cs.recall, cs.f1, cs.support, cs.tp,
                      cs.fp, cs.fn);
        csv += buf;
    };
    for (const std::string& name : predicate_order) {
        auto it = r.per_class.find(name);
        if (it != r.per_class.end()) row(name, it->second);
    }
    for (const auto& [name, cs] : r.per_class) {
        bool in_order = false;
        for (const auto& p : predicate_order)
            if (p == name) {
                in_order = true;
                break;
            }
        if (!in_order) row(name, cs);
    }
    std::snprintf(buf, sizeof(buf), "macro_avg,%.6f,%.6f,%.6f,,,,\n", r.macro_precision,
                  r.macro_recall, r.macro_f1);
    csv += buf;
    std::snprintf(buf, sizeof(buf), "weighted_avg,%.6f,%.6f,%.6f,,,,\n",
                  r.weighted_precision, r.weighted_recall, r.weighted_f1);
    csv += buf;
    return csv;
}

inline nlohmann::json report_to_json(const ClassReport& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [name, cs] : r.per_class)
        per_class[name] = {{"precision", cs.precision}, {"recall", cs.recall},
                           {"f1", cs.f1},               {"support", cs.support},
                           {"tp", cs.tp},               {"fp", cs.fp},
                           {"fn", cs.fn}};
    return {{"per_class", per_class},
            {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
            {"weighted",
             {{"precision", r.weighted_precision},
              {"recall", r.weighted_recall},
              {"f1", r.weighted_f1}}}};
}

}  // namespace mmsg
