#pragma once

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/common.hpp"
#include "mmsg/scene_graph.hpp"

namespace mmsg {

struct SterilityPolicy {
    std::set<std::string> sterile;
    std::set<std::string> non_sterile;
    std::set<std::string> contact_predicates = {"touching", "holding", "manipulating"};

    static SterilityPolicy default_or() {
        SterilityPolicy p;
        p.sterile = {"head_surgeon", "assistant_surgeon", "nurse", "instrument",
                     "instrument_table", "drape", "drill", "saw", "hammer"};
        p.non_sterile = {"circulator", "anaesthetist", "mps", "student",
                         "anesthesia_equipment", "mps_station", "c_arm", "monitor"};
        return p;
    }

    bool valid() const {
        for (const auto& e : sterile)
            if (non_sterile.count(e)) return false;
        return true;
    }

    nlohmann::json to_json() const {
        return {{"sterile", std::vector<std::string>(sterile.begin(), sterile.end())},
                {"non_sterile", std::vector<std::string>(non_sterile.begin(), non_sterile.end())},
                {"contact_predicates",
                 std::vector<std::string>(contact_predicates.begin(), contact_predicates.end())}};
    }

    static SterilityPolicy from_json(const nlohmann::json& j) {
        SterilityPolicy p;
        p.sterile.clear();
        p.non_sterile.clear();
        p.contact_predicates.clear();
        for (const auto& e : j.at("sterile")) p.sterile.insert(e.get<std::string>());
        for (const auto& e : j.at("non_sterile")) p.non_sterile.insert(e.get<std::string>());
        for (const auto& e : j.at("contact_predicates"))
            p.contact_predicates.insert(e.get<std::string>());
        if (!p.valid()) throw std::runtime_error("sterility policy: sterile sets overlap");
        return p;
    }
};

struct BreachResult {
    bool breach = false;
    std::vector<Triplet> offending;
};

// Breach iff a contact-predicate triplet joins a sterile and a non-sterile
// entity (either direction). Monotone in the triplet set.
inline BreachResult detect_breach(const SceneGraph& g, const SterilityPolicy& policy) {
    BreachResult r;
    for (const Triplet& t : g.triplets) {
        if (!policy.contact_predicates.count(t.predicate)) continue;
        bool s_sterile = policy.sterile.count(t.subject) > 0;
        bool s_non = policy.non_sterile.count(t.subject) > 0;
        bool o_sterile = policy.sterile.count(t.object) > 0;
        bool o_non = policy.non_sterile.count(t.object) > 0;
        if ((s_sterile && o_non) || (s_non && o_sterile)) r.offending.push_back(t);
    }
    r.breach = !r.offending.empty();
    return r;
}

// Fixed enumeration of triplets observed in training; featurize_history maps
// each window position to presence bits over it plus per-predicate counts.
struct TripletEnumeration {
    std::vector<Triplet> triplets;

    static TripletEnumeration from_graphs(std::span<const SceneGraph> graphs) {
        TripletEnumeration e;
        SceneGraph seen;
        for (const SceneGraph& g : graphs)
            for (const Triplet& t : g.triplets)
                if (seen.insert(t)) e.triplets.push_back(t);
        return e;
    }

    size_t size() const { return triplets.size(); }
};

inline std::vector<double> featurize_history(std::span<const SceneGraph> window,
                                             const TripletEnumeration& enumeration,
                                             const VocabSpec& v) {
    if (window.empty()) throw std::invalid_argument("featurize_history: empty window");
    size_t per = enumeration.size() + v.predicates().size();
    std::vector<double> feats(window.size() * per, 0.0);
    for (size_t w = 0; w < window.size(); ++w) {
        const SceneGraph& g = window[w];
        double* f = feats.data() + w * per;
        for (size_t i = 0; i < enumeration.size(); ++i)
            if (g.contains(enumeration.triplets[i])) f[i] = 1.0;
        for (const Triplet& t : g.triplets) {
            int pi = v.predicate_index(t.predicate);
            if (pi >= 0) f[enumeration.size() + pi] += 1.0;
        }
    }
    return feats;
}

// Two-layer classifier over scene-graph-history features (the scene-graph-only
// baseline for phase prediction and next-action anticipation).
struct TaskClassifier {
    std::string task;  // "phase" or "next_action"
    size_t window = 8;
    TripletEnumeration enumeration;
    std::vector<std::string> labels;
    size_t feature_dim = 0;
    size_t hidden = 64;
    std::vector<double> w1, b1, w2, b2;  // w1: [feature_dim x hidden], w2: [hidden x labels]

    std::vector<double> logits(std::span<const double> x) const {
        std::vector<double> h(hidden, 0.0);
        for (size_t i = 0; i < feature_dim; ++i) {
            double xi = x[i];
            if (xi == 0.0) continue;
            const double* row = w1.data() + i * hidden;
            for (size_t j = 0; j < hidden; ++j) h[j] += xi * row[j];
        }
        for (size_t j = 0; j < hidden; ++j) h[j] = std::max(0.0, h[j] + b1[j]);
        std::vector<double> out(labels.size(), 0.0);
        for (size_t j = 0; j < hidden; ++j) {
            double hj = h[j];
            if (hj == 0.0) continue;
            const double* row = w2.data() + j * labels.size();
            for (size_t k = 0; k < labels.size(); ++k) out[k] += hj * row[k];
        }
        for (size_t k = 0; k < labels.size(); ++k) out[k] += b2[k];
        return out;
    }
};

// Argmax over label logits; ties broken by label-set order.
inline std::string predict_task(const TaskClassifier& c, std::span<const SceneGraph> window,
                                const VocabSpec& v) {
    if (window.size() != c.window)
        throw std::invalid_argument("predict_task: window length mismatch");
    auto feats = featurize_history(window, c.enumeration, v);
    if (feats.size() != c.feature_dim)
        throw std::invalid_argument("predict_task: feature dimension mismatch");
    auto lg = c.logits(feats);
    size_t best = 0;
    for (size_t k = 1; k < lg.size(); ++k)
        if (lg[k] > lg[best]) best = k;
    return c.labels[best];
}

struct TaskSample {
    std::vector<SceneGraph> window;
    std::string label;
};

struct TaskTrainConfig {
    size_t window = 8;
    size_t hidden = 64;
    size_t epochs = 60;
    size_t batch = 16;
    double lr = 1e-2;
    uint64_t seed = 1;
};

inline TaskClassifier train_task_classifier(std::span<const TaskSample> dataset,
                                            const std::string& task,
                                            const std::vector<std::string>& labels,
                                            const VocabSpec& v, const TaskTrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("train_task_classifier: empty dataset");
    TaskClassifier c;
    c.task = task;
    c.window = cfg.window;
    c.hidden = cfg.hidden;
    c.labels = labels;

    std::vector<SceneGraph> all;
    for (const auto& s : dataset)
        for (const auto& g : s.window) all.push_back(g);
    c.enumeration = TripletEnumeration::from_graphs(all);
    size_t per = c.enumeration.size() + v.predicates().size();
    c.feature_dim = cfg.window * per;

    Rng rng(cfg.seed);
    Rng init = rng.derive("task_init");
    double s1 = 1.0 / std::sqrt(double(c.feature_dim));
    double s2 = 1.0 / std::sqrt(double(cfg.hidden));
    c.w1.resize(c.feature_dim * cfg.hidden);
    c.b1.assign(cfg.hidden, 0.0);
    c.w2.resize(cfg.hidden * labels.size());
    c.b2.assign(labels.size(), 0.0);
    for (auto& w : c.w1) w = init.normal(0.0, s1);
    for (auto& w : c.w2) w = init.normal(0.0, s2);

    std::vector<std::vector<double>> feats;
    std::vector<size_t> ys;
    feats.reserve(dataset.size());
    for (const auto& s : dataset) {
        if (s.window.size() != cfg.window)
            throw std::invalid_argument("train_task_classifier: sample window length mismatch");
        feats.push_back(featurize_history(s.window, c.enumeration, v));
        size_t y = labels.size();
        for (size_t k = 0; k < labels.size(); ++k)
            if (labels[k] == s.label) {
                y = k;
                break;
            }
        if (y == labels.size())
            throw std::invalid_argument("train_task_classifier: label not in label set: " + s.label);
        ys.push_back(y);
    }

    size_t n = dataset.size();
    size_t n_labels = labels.size();
    Rng order_rng = rng.derive("task_order");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    std::vector<double> gw1(c.w1.size()), gb1(cfg.hidden), gw2(c.w2.size()), gb2(n_labels);
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t start = 0; start < n; start += cfg.batch) {
            size_t stop = std::min(n, start + cfg.batch);
            std::fill(gw1.begin(), gw1.end(), 0.0);
            std::fill(gb1.begin(), gb1.end(), 0.0);
            std::fill(gw2.begin(), gw2.end(), 0.0);
            std::fill(gb2.begin(), gb2.end(), 0.0);
            double inv = 1.0 / double(stop - start);
            for (size_t bi = start; bi < stop; ++bi) {
                size_t i = order[bi];
                const auto& x = feats[i];
                // forward with relu mask kept
                std::vector<double> h(cfg.hidden, 0.0);
                for (size_t ii = 0; ii < c.feature_dim; ++ii) {
                    double xi = x[ii];
                    if (xi == 0.0) continue;
                    const double* row = c.w1.data() + ii * cfg.hidden;
                    for (size_t j = 0; j < cfg.hidden; ++j) h[j] += xi * row[j];
                }
                std::vector<double> hr(cfg.hidden);
                for (size_t j = 0; j < cfg.hidden; ++j) hr[j] = std::max(0.0, h[j] + c.b1[j]);
                std::vector<double> lg(n_labels, 0.0);
                for (size_t j = 0; j < cfg.hidden; ++j) {
                    if (hr[j] == 0.0) continue;
                    const double* row = c.w2.data() + j * n_labels;
                    for (size_t k = 0; k < n_labels; ++k) lg[k] += hr[j] * row[k];
                }
                for (size_t k = 0; k < n_labels; ++k) lg[k] += c.b2[k];
                // softmax CE backward
                double mx = lg[0];
                for (double z : lg) mx = std::max(mx, z);
                double zsum = 0.0;
                for (double& z : lg) {
                    z = std::exp(z - mx);
                    zsum += z;
                }
                std::vector<double> dlg(n_labels);
                for (size_t k = 0; k < n_labels; ++k)
                    dlg[k] = (lg[k] / zsum - (k == ys[i] ? 1.0 : 0.0)) * inv;
                std::vector<double> dh(cfg.hidden, 0.0);
                for (size_t j = 0; j < cfg.hidden; ++j) {
                    double* row = gw2.data() + j * n_labels;
                    double hj = hr[j];
                    double acc = 0.0;
                    const double* wrow = c.w2.data() + j * n_labels;
                    for (size_t k = 0; k < n_labels; ++k) {
                        row[k] += hj * dlg[k];
                        acc += wrow[k] * dlg[k];
                    }
                    dh[j] = hr[j] > 0.0 ? acc : 0.0;
                }
                for (size_t k = 0; k < n_labels; ++k) gb2[k] += dlg[k];
                for (size_t j = 0; j < cfg.hidden; ++j) gb1[j] += dh[j];
                for (size_t ii = 0; ii < c.feature_dim; ++ii) {
                    double xi = x[ii];
                    if (xi == 0.0) continue;
                    double* row = gw1.data() + ii * cfg.hidden;
                    for (size_t j = 0; j < cfg.hidden; ++j) row[j] += xi * dh[j];
                }
            }
            for (size_t i = 0; i < c.w1.size(); ++i) c.w1[i] -= cfg.lr * gw1[i];
            for (size_t j = 0; j < cfg.hidden; ++j) c.b1[j] -= cfg.lr * gb1[j];
            for (size_t i = 0; i < c.w2.size(); ++i) c.w2[i] -= cfg.lr * gw2[i];
            for (size_t k = 0; k < n_labels; ++k) c.b2[k] -= cfg.lr * gb2[k];
        }
    }
    return c;
}

}  // namespace mmsg
