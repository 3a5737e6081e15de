#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/array.hpp"
#include "mmsg/common.hpp"
#include "mmsg/downstream.hpp"
#include "mmsg/scene_graph.hpp"
#include "mmsg/vocab.hpp"

namespace mmsg::synth {

// ---------------------------------------------------------------------------
// Config and script types
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& phase_labels() {
    static const std::vector<std::string> phases = {
        "idle",         "robot_calibration", "base_array_installation",
        "saw_installation", "registration",  "sawing_execution",
        "implant_placement", "closure"};
    return phases;
}

constexpr int kGeneratorVersion = 4;

struct DatasetConfig {
    int n_scenarios = 16;
    int min_timepoints = 44;
    int max_timepoints = 56;
    uint32_t image_h = 64;
    uint32_t image_w = 64;
    uint32_t n_points = 1024;
    uint32_t sample_rate = 4000;
    int n_room_views = 3;
    int n_detail_views = 1;
    double breach_rate = 0.35;
    double split_train = 0.70;
    double split_val = 0.15;
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"generator_version", kGeneratorVersion},
                {"n_scenarios", n_scenarios},
                {"min_timepoints", min_timepoints},
                {"max_timepoints", max_timepoints},
                {"image_h", image_h},
                {"image_w", image_w},
                {"n_points", n_points},
                {"sample_rate", sample_rate},
                {"n_room_views", n_room_views},
                {"n_detail_views", n_detail_views},
                {"breach_rate", breach_rate},
                {"split_train", split_train},
                {"split_val", split_val},
                {"seed", seed}};
    }

    static DatasetConfig from_json(const nlohmann::json& j) {
        DatasetConfig c;
        c.n_scenarios = j.at("n_scenarios").get<int>();
        c.min_timepoints = j.at("min_timepoints").get<int>();
        c.max_timepoints = j.at("max_timepoints").get<int>();
        c.image_h = j.at("image_h").get<uint32_t>();
        c.image_w = j.at("image_w").get<uint32_t>();
        c.n_points = j.at("n_points").get<uint32_t>();
        c.sample_rate = j.at("sample_rate").get<uint32_t>();
        c.n_room_views = j.at("n_room_views").get<int>();
        c.n_detail_views = j.at("n_detail_views").get<int>();
        c.breach_rate = j.at("breach_rate").get<double>();
        c.split_train = j.at("split_train").get<double>();
        c.split_val = j.at("split_val").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }

    void validate() const {
        if (n_scenarios < 1) throw std::invalid_argument("config: n_scenarios must be >= 1");
        if (min_timepoints < static_cast<int>(phase_labels().size()))
            throw std::invalid_argument("config: total timepoints below phase count");
        if (max_timepoints < min_timepoints)
            throw std::invalid_argument("config: max_timepoints < min_timepoints");
        if (image_h < 16 || image_w < 16)
            throw std::invalid_argument("config: image size too small");
        if (n_points < 1) throw std::invalid_argument("config: n_points must be >= 1");
        if (sample_rate < 400) throw std::invalid_argument("config: sample_rate too low");
        if (n_room_views < 1) throw std::invalid_argument("config: need a room view");
        if (breach_rate < 0 || breach_rate > 1)
            throw std::invalid_argument("config: breach_rate out of range");
        if (split_train <= 0 || split_val < 0 || split_train + split_val >= 1.0)
            throw std::invalid_argument("config: bad split fractions");
    }
};

struct PhaseSpan {
    std::string phase;
    int start_t = 0;
    int end_t = 0;  // exclusive
};

struct ActionInterval {
    int start_t = 0;
    int end_t = 0;  // exclusive
    Triplet triplet;
    std::string exclusive_channel;  // "", "audio" or "robot_log"
};

struct BreachEvent {
    int t = 0;
    int duration = 1;
    Triplet triplet;
};

struct Pos {
    double x = 0.5, y = 0.5;
};

struct ScenarioScript {
    int scenario_id = 0;
    uint64_t seed = 0;
    int length = 0;
    std::vector<PhaseSpan> phases;
    std::vector<std::string> present;               // entities in this scenario
    std::map<std::string, Pos> layout;              // scenario-level positions
    std::vector<Triplet> statics;                   // hold at every timepoint
    std::map<std::string, std::vector<Triplet>> phase_statics;
    std::vector<ActionInterval> actions;
    std::vector<BreachEvent> breaches;
    std::string percussion_variant;                 // hammering or drilling
    std::string calib_variant;                      // calibrating or preparing
    double camera_jitter = 0.0;
    double background = 0.1;

    const std::string& phase_at(int t) const {
        for (const auto& p : phases)
            if (t >= p.start_t && t < p.end_t) return p.phase;
        throw std::out_of_range("phase_at: timepoint outside scenario");
    }
};

// Predicates whose ground truth is carried by exactly one non-image channel.
// The paired predicates render pixel-identically.
inline const std::map<std::string, std::string>& exclusive_predicate_channels() {
    static const std::map<std::string, std::string> m = {
        {"hammering", "audio"},
        {"drilling", "audio"},
        {"calibrating", "robot_log"},
        {"preparing", "robot_log"},
    };
    return m;
}

// ---------------------------------------------------------------------------
// Entity visual metadata
// ---------------------------------------------------------------------------

enum class GlyphKind { Furniture, Equipment, Person, Tool };

struct EntityGlyph {
    GlyphKind kind;
    double half_size;  // world units
    double height;     // world z extent
};

inline const std::map<std::string, EntityGlyph>& entity_glyphs() {
    static const std::map<std::string, EntityGlyph> m = {
        {"operating_table", {GlyphKind::Furniture, 0.16, 0.30}},
        {"instrument_table", {GlyphKind::Furniture, 0.11, 0.30}},
        {"drape", {GlyphKind::Furniture, 0.07, 0.40}},
        {"mako_robot", {GlyphKind::Equipment, 0.11, 0.60}},
        {"mps_station", {GlyphKind::Equipment, 0.10, 0.50}},
        {"anesthesia_equipment", {GlyphKind::Equipment, 0.09, 0.50}},
        {"c_arm", {GlyphKind::Equipment, 0.10, 0.60}},
        {"monitor", {GlyphKind::Equipment, 0.06, 0.50}},
        {"patient", {GlyphKind::Person, 0.10, 0.35}},
        {"head_surgeon", {GlyphKind::Person, 0.065, 0.85}},
        {"assistant_surgeon", {GlyphKind::Person, 0.065, 0.85}},
        {"nurse", {GlyphKind::Person, 0.065, 0.85}},
        {"circulator", {GlyphKind::Person, 0.065, 0.85}},
        {"anaesthetist", {GlyphKind::Person, 0.065, 0.85}},
        {"mps", {GlyphKind::Person, 0.065, 0.85}},
        {"student", {GlyphKind::Person, 0.065, 0.85}},
        {"tracker", {GlyphKind::Tool, 0.032, 0.45}},
        {"instrument", {GlyphKind::Tool, 0.032, 0.45}},
        {"drill", {GlyphKind::Tool, 0.032, 0.45}},
        {"saw", {GlyphKind::Tool, 0.032, 0.45}},
        {"hammer", {GlyphKind::Tool, 0.032, 0.45}},
    };
    return m;
}

inline std::array<float, 3> entity_color(const std::string& name) {
    int idx = VocabSpec::default_or().entity_index(name);
    if (idx < 0) idx = static_cast<int>(fnv1a64(name) % 21);
    double hue = (idx * 360.0 / 21.0);
    double s = 0.75, v = 0.92;
    double c = v * s;
    double hp = hue / 60.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    return {float(r + m), float(g + m), float(b + m)};
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

struct ScenarioOverrides {
    std::optional<std::string> percussion_variant;
    std::optional<std::string> calib_variant;
};

namespace detail {

inline void add_interval(ScenarioScript& s, int start, int len, const Triplet& t,
                         const std::string& channel = "") {
    if (len <= 0) return;
    ActionInterval iv;
    iv.start_t = start;
    iv.end_t = std::min(start + len, s.length);
    iv.triplet = t;
    iv.exclusive_channel = channel;
    if (iv.start_t < iv.end_t) s.actions.push_back(iv);
}

inline bool present(const ScenarioScript& s, const std::string& e) {
    return std::find(s.present.begin(), s.present.end(), e) != s.present.end();
}

}  // namespace detail

inline ScenarioScript generate_scenario(const DatasetConfig& config, int scenario_id,
                                        const ScenarioOverrides& overrides = {}) {
    config.validate();
    Rng rng = Rng(config.seed).derive("scenario." + std::to_string(scenario_id));

    ScenarioScript s;
    s.scenario_id = scenario_id;
    s.seed = rng.seed();
    s.length = rng.uniform_int(config.min_timepoints, config.max_timepoints);
    s.camera_jitter = rng.uniform(-0.15, 0.15);
    s.background = rng.uniform(0.07, 0.16);

    // Exclusive-pair variants alternate deterministically across scenarios.
    // The per-scenario schedule is variant-independent, so nothing but the
    // audio signature separates the percussion pair anywhere in the corpus.
    bool hammer_scn = (scenario_id % 2) == 0;
    bool calib_scn = ((scenario_id / 2) % 2) == 0;
    (void)rng.uniform();  // reserved draw, keeps streams stable across variants
    s.percussion_variant = hammer_scn ? "hammering" : "drilling";
    s.calib_variant = calib_scn ? "calibrating" : "preparing";
    if (overrides.percussion_variant) s.percussion_variant = *overrides.percussion_variant;
    if (overrides.calib_variant) s.calib_variant = *overrides.calib_variant;

    // --- present entities ---------------------------------------------------
    s.present = {"patient", "operating_table", "head_surgeon", "nurse",
                 "instrument_table", "instrument", "mps", "mps_station",
                 "mako_robot", "anaesthetist", "anesthesia_equipment", "saw",
                 "tracker", "drape"};
    if (rng.bernoulli(0.85)) s.present.push_back("assistant_surgeon");
    if (rng.bernoulli(0.70)) s.present.push_back("circulator");
    if (rng.bernoulli(0.35)) s.present.push_back("student");
    if (rng.bernoulli(0.45)) s.present.push_back("c_arm");
    if (rng.bernoulli(0.60)) s.present.push_back("monitor");

    // --- layout --------------------------------------------------------------
    s.layout["operating_table"] = {0.50, 0.54};
    s.layout["patient"] = {0.50, 0.50};
    for (const std::string& e : s.present) {
        if (s.layout.count(e)) continue;
        const auto& g = entity_glyphs().at(e);
        double angle = rng.uniform(0.0, 6.283185307179586);
        double r = 0.33;
        switch (g.kind) {
            case GlyphKind::Person: r = rng.uniform(0.17, 0.30); break;
            case GlyphKind::Equipment: r = rng.uniform(0.28, 0.40); break;
            case GlyphKind::Furniture: r = rng.uniform(0.24, 0.38); break;
            case GlyphKind::Tool: r = rng.uniform(0.26, 0.34); break;
        }
        Pos p{0.5 + r * std::cos(angle), 0.5 + r * std::sin(angle)};
        p.x = std::clamp(p.x, 0.09, 0.91);
        p.y = std::clamp(p.y, 0.09, 0.91);
        s.layout[e] = p;
    }
    // tools cluster near the instrument table
    for (const std::string& tool : {"instrument", "saw", "drill", "hammer", "tracker"}) {
        if (!detail::present(s, tool)) continue;
        Pos base = s.layout["instrument_table"];
        s.layout[tool] = {std::clamp(base.x + rng.uniform(-0.05, 0.05), 0.05, 0.95),
                          std::clamp(base.y + rng.uniform(-0.05, 0.05), 0.05, 0.95)};
    }

    // --- phase spans ----------------------------------------------------------
    const auto& names = phase_labels();
    std::vector<double> weights = {0.04, 0.15, 0.10, 0.09, 0.10, 0.19, 0.21, 0.12};
    double wsum = 0;
    std::vector<double> jit(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
        jit[i] = weights[i] * rng.uniform(0.75, 1.25);
        wsum += jit[i];
    }
    {
        int n_ph = static_cast<int>(names.size());
        int min_len = s.length >= 2 * n_ph ? 2 : 1;
        std::vector<int> lens(n_ph);
        int total = 0;
        for (int i = 0; i < n_ph; ++i) {
            lens[i] = std::max(min_len,
                               static_cast<int>(std::floor(jit[i] / wsum * s.length)));
            total += lens[i];
        }
        while (total > s.length) {  // shave the longest span above the floor
            int pick = -1;
            for (int i = 0; i < n_ph; ++i)
                if (lens[i] > min_len && (pick < 0 || lens[i] > lens[pick])) pick = i;
            --lens[pick];
            --total;
        }
        while (total < s.length) {  // grow the heaviest weighted span
            int pick = 0;
            for (int i = 1; i < n_ph; ++i)
                if (jit[i] > jit[pick]) pick = i;
            ++lens[pick];
            ++total;
        }
        int assigned = 0;
        for (int i = 0; i < n_ph; ++i) {
            s.phases.push_back({names[i], assigned, assigned + lens[i]});
            assigned += lens[i];
        }
    }

    // --- scenario statics -------------------------------------------------------
    auto add_static = [&](const char* a, const char* b, const char* p) {
        if (detail::present(s, a) && detail::present(s, b))
            s.statics.push_back({a, b, p});
    };
    add_static("patient", "operating_table", "lying_on");
    add_static("drape", "patient", "lying_on");
    add_static("head_surgeon", "patient", "close_to");
    add_static("anaesthetist", "patient", "close_to");
    add_static("anaesthetist", "anesthesia_equipment", "close_to");
    add_static("nurse", "instrument_table", "close_to");
    add_static("instrument", "instrument_table", "lying_on");
    add_static("mps", "mps_station", "close_to");
    if (rng.bernoulli(0.8)) add_static("assistant_surgeon", "head_surgeon", "close_to");
    if (rng.bernoulli(0.7)) add_static("circulator", "monitor", "close_to");
    if (rng.bernoulli(0.8)) add_static("student", "circulator", "close_to");
    if (rng.bernoulli(0.9)) add_static("c_arm", "operating_table", "close_to");
    if (rng.bernoulli(0.7)) add_static("monitor", "mps_station", "close_to");
    if (rng.bernoulli(0.5)) add_static("student", "head_surgeon", "close_to");
    if (rng.bernoulli(0.4)) add_static("circulator", "anaesthetist", "close_to");

    // --- per-phase statics -------------------------------------------------------
    auto add_phase_static = [&](const std::string& phase, const char* a, const char* b,
                                const char* p) {
        if (detail::present(s, a) && detail::present(s, b))
            s.phase_statics[phase].push_back({a, b, p});
    };
    add_phase_static("robot_calibration", "mako_robot", "operating_table", "close_to");
    add_phase_static("robot_calibration", "mps", "mako_robot", "close_to");
    add_phase_static("base_array_installation", "tracker", "patient", "close_to");
    add_phase_static("saw_installation", "saw", "mako_robot", "close_to");
    add_phase_static("registration", "tracker", "patient", "close_to");
    add_phase_static("sawing_execution", "head_surgeon", "saw", "holding");
    add_phase_static("sawing_execution", "mako_robot", "operating_table", "close_to");
    add_phase_static("implant_placement", "head_surgeon", "instrument", "holding");
    add_phase_static("closure", "nurse", "head_surgeon", "close_to");

    // --- action schedule -----------------------------------------------------------
    auto span_of = [&](const std::string& phase) -> const PhaseSpan& {
        for (const auto& p : s.phases)
            if (p.phase == phase) return p;
        throw std::logic_error("phase missing: " + phase);
    };

    {  // robot_calibration: exclusive robot_log twin
        const PhaseSpan& ph = span_of("robot_calibration");
        int len = ph.end_t - ph.start_t;
        int n_iv = len >= 6 ? 2 : 1;
        for (int i = 0; i < n_iv; ++i) {
            int lo = ph.start_t + i * len / n_iv;
            int max_len = len / n_iv;
            int ivlen = std::min(max_len, rng.uniform_int(3, 5));
            int start = lo + rng.uniform_int(0, std::max(0, max_len - ivlen));
            detail::add_interval(s, start, ivlen, {"mps", "mako_robot", s.calib_variant},
                                 "robot_log");
        }
        detail::add_interval(s, ph.start_t, 2, {"mps", "mps_station", "touching"});
    }
    {  // base array installation
        const PhaseSpan& ph = span_of("base_array_installation");
        if (detail::present(s, "assistant_surgeon") && rng.bernoulli(0.9))
            detail::add_interval(s, ph.start_t + 1, rng.uniform_int(2, 4),
                                 {"assistant_surgeon", "tracker", "holding"});
        detail::add_interval(s, ph.start_t + rng.uniform_int(1, 2), rng.uniform_int(2, 3),
                             {"head_surgeon", "tracker", "manipulating"});
    }
    {  // saw installation
        const PhaseSpan& ph = span_of("saw_installation");
        detail::add_interval(s, ph.start_t + rng.uniform_int(0, 1), rng.uniform_int(2, 4),
                             {"nurse", "saw", "holding"});
        if (detail::present(s, "assistant_surgeon") && rng.bernoulli(0.6))
            detail::add_interval(s, ph.start_t + 2, 2,
                                 {"assistant_surgeon", "head_surgeon", "assisting"});
    }
    {  // registration
        const PhaseSpan& ph = span_of("registration");
        detail::add_interval(s, ph.start_t + 1, rng.uniform_int(2, 4),
                             {"head_surgeon", "tracker", "manipulating"});
        if (rng.bernoulli(0.6))
            detail::add_interval(s, ph.start_t + rng.uniform_int(2, 3), 2,
                                 {"mps", "mps_station", "manipulating"});
        if (detail::present(s, "c_arm") && rng.bernoulli(0.5))
            detail::add_interval(s, ph.end_t - 2, 1, {"c_arm", "patient", "scanning"});
    }
    {  // sawing execution
        const PhaseSpan& ph = span_of("sawing_execution");
        detail::add_interval(s, ph.start_t, rng.uniform_int(1, 2),
                             {"head_surgeon", "patient", "cutting"});
        int len = ph.end_t - ph.start_t;
        int n_iv = len >= 9 ? 2 : 1;
        for (int i = 0; i < n_iv; ++i) {
            int lo = ph.start_t + 2 + i * (len - 2) / n_iv;
            detail::add_interval(s, lo + rng.uniform_int(0, 1), rng.uniform_int(2, 4),
                                 {"head_surgeon", "patient", "sawing"});
        }
        if (detail::present(s, "assistant_surgeon") && rng.bernoulli(0.8))
            detail::add_interval(s, ph.start_t + len / 2, rng.uniform_int(2, 3),
                                 {"assistant_surgeon", "head_surgeon", "assisting"});
    }
    {  // implant placement: exclusive audio twin
        const PhaseSpan& ph = span_of("implant_placement");
        int len = ph.end_t - ph.start_t;
        int n_iv = len >= 8 ? 3 : 2;
        for (int i = 0; i < n_iv; ++i) {
            int lo = ph.start_t + i * len / n_iv;
            int max_len = std::max(1, len / n_iv);
            int ivlen = std::min(max_len, rng.uniform_int(3, 5));
            detail::add_interval(s, lo, ivlen,
                                 {"head_surgeon", "instrument", s.percussion_variant},
                                 "audio");
        }
        if (rng.bernoulli(0.45))
            detail::add_interval(s, ph.end_t - 2, rng.uniform_int(1, 2),
                                 {"head_surgeon", "patient", "cementing"});
        if (rng.bernoulli(0.5))
            detail::add_interval(s, ph.start_t + 1, 2, {"nurse", "head_surgeon", "assisting"});
    }
    {  // closure
        const PhaseSpan& ph = span_of("closure");
        detail::add_interval(s, ph.start_t + 1, rng.uniform_int(2, 4),
                             {"head_surgeon", "patient", "suturing"});
        if (detail::present(s, "circulator") && rng.bernoulli(0.7))
            detail::add_interval(s, ph.end_t - 3, rng.uniform_int(1, 2),
                                 {"circulator", "operating_table", "cleaning"});
        if (detail::present(s, "c_arm") && rng.bernoulli(0.6))
            detail::add_interval(s, ph.end_t - 2, 1, {"c_arm", "patient", "scanning"});
        if (rng.bernoulli(0.5))
            detail::add_interval(s, ph.start_t, 2, {"nurse", "instrument", "holding"});
    }

    // --- breach events ------------------------------------------------------------
    if (rng.bernoulli(config.breach_rate)) {
        struct Candidate {
            const char *a, *b, *p;
        };
        std::vector<Candidate> candidates = {
            {"circulator", "head_surgeon", "touching"},
            {"student", "instrument_table", "touching"},
            {"anaesthetist", "drape", "touching"},
            {"circulator", "instrument", "touching"},
            {"student", "saw", "touching"},
            {"mps", "instrument_table", "touching"},
        };
        std::vector<Candidate> usable;
        for (const auto& c : candidates)
            if (detail::present(s, c.a) && detail::present(s, c.b)) usable.push_back(c);
        int n_events = rng.uniform_int(1, 2);
        for (int i = 0; i < n_events && !usable.empty(); ++i) {
            const auto& c = usable[rng.index(usable.size())];
            BreachEvent ev;
            ev.t = rng.uniform_int(s.length / 4, s.length - 2);
            ev.duration = rng.uniform_int(1, 2);
            ev.triplet = {c.a, c.b, c.p};
            s.breaches.push_back(ev);
        }
    }

    std::sort(s.actions.begin(), s.actions.end(),
              [](const ActionInterval& a, const ActionInterval& b) {
                  if (a.start_t != b.start_t) return a.start_t < b.start_t;
                  return a.triplet < b.triplet;
              });
    return s;
}

// Ground-truth graph at a timepoint (statics + phase statics + active
// intervals + breach events), without rendering.
inline SceneGraph graph_at(const ScenarioScript& s, int t) {
    if (t < 0 || t >= s.length) throw std::out_of_range("graph_at: t outside scenario");
    SceneGraph g;
    g.timepoint_id = t;
    for (const auto& tr : s.statics) g.insert(tr);
    const std::string& phase = s.phase_at(t);
    auto it = s.phase_statics.find(phase);
    if (it != s.phase_statics.end())
        for (const auto& tr : it->second) g.insert(tr);
    for (const auto& iv : s.actions)
        if (t >= iv.start_t && t < iv.end_t) g.insert(iv.triplet);
    for (const auto& ev : s.breaches)
        if (t >= ev.t && t < ev.t + ev.duration) g.insert(ev.triplet);
    return g;
}

inline std::vector<ActionInterval> active_intervals(const ScenarioScript& s, int t) {
    std::vector<ActionInterval> out;
    for (const auto& iv : s.actions)
        if (t >= iv.start_t && t < iv.end_t) out.push_back(iv);
    return out;
}

// Next scheduled action after t, if any (breach events are not anticipated).
inline std::string next_action_label(const ScenarioScript& s, int t) {
    for (const auto& iv : s.actions)
        if (iv.start_t > t) return iv.triplet.predicate;
    return "none";
}

// ---------------------------------------------------------------------------
// Timepoint sample
// ---------------------------------------------------------------------------

struct RobotLogRecord {
    std::string phase = "idle";
    std::string action = "none";
    bool operator==(const RobotLogRecord&) const = default;
};

struct TrackerRecord {
    std::string tool;
    std::array<double, 3> translation = {0, 0, 0};  // millimetres
    std::array<double, 4> rotation = {1, 0, 0, 0};  // unit quaternion (w,x,y,z)
    bool operator==(const TrackerRecord&) const = default;
};

struct TranscriptLine {
    double timestamp = 0.0;
    std::string text;
    bool operator==(const TranscriptLine&) const = default;
};

struct ModalityBundle {
    std::vector<ArrayF32> room_images;    // H x W x 3 each
    std::vector<ArrayF32> detail_images;  // H x W x 3 each
    ArrayF32 pointcloud;                  // P x 6
    std::vector<float> audio;             // one second, sample_rate samples
    std::vector<TranscriptLine> transcript;
    RobotLogRecord robot_log;
    std::vector<TrackerRecord> tracker;
    std::vector<std::pair<std::string, BitMask>> masks;

    // presence flags; augmentation clears them instead of erasing data
    bool has_detail_images = true;
    bool has_pointcloud = true;
    bool has_audio = true;
    bool has_transcript = true;
    bool has_robot_log = true;
    bool has_tracker = true;
    bool has_masks = true;
};

struct TimepointSample {
    int64_t timepoint_id = 0;
    int scenario_id = 0;
    int t_in_scenario = 0;
    ModalityBundle modalities;
    SceneGraph gt_graph;
    std::string phase = "idle";
    std::string next_action = "none";
    bool breach = false;
};

// ---------------------------------------------------------------------------
// Renderer
// ---------------------------------------------------------------------------

namespace detail {

// Positions at t: glyph layout plus interaction adjacency. Persons move to
// their interaction partner first, then tools attach to whoever acts with
// them. Never depends on the predicate beyond its visual role, so exclusive
// twins render identically.
inline std::map<std::string, Pos> positions_at(const ScenarioScript& s, const SceneGraph& g) {
    std::map<std::string, Pos> pos = s.layout;
    auto offset_dir = [](const std::string& name) {
        double a = double(fnv1a64(name) % 628) / 100.0;
        return Pos{std::cos(a), std::sin(a)};
    };
    auto adjacent = [&](const std::string& mover, const std::string& anchor) {
        const auto& gm = entity_glyphs().at(mover);
        const auto& ga = entity_glyphs().at(anchor);
        Pos dir = offset_dir(mover);
        double d = gm.half_size + ga.half_size + 0.012;
        Pos p{pos[anchor].x + dir.x * d, pos[anchor].y + dir.y * d};
        p.x = std::clamp(p.x, 0.03, 0.97);
        p.y = std::clamp(p.y, 0.03, 0.97);
        return p;
    };
    auto is_action = [](const std::string& p) {
        return p != "close_to" && p != "lying_on";
    };
    // pass 1: persons approach their object
    for (const auto& tr : g.triplets) {
        if (!is_action(tr.predicate)) continue;
        if (!pos.count(tr.subject) || !pos.count(tr.object)) continue;
        const auto& gs = entity_glyphs().at(tr.subject);
        const auto& go = entity_glyphs().at(tr.object);
        if (gs.kind == GlyphKind::Tool) continue;
        if (go.kind == GlyphKind::Tool) continue;  // handled in pass 2
        pos[tr.subject] = adjacent(tr.subject, tr.object);
    }
    // pass 2: tools attach to the acting subject
    for (const auto& tr : g.triplets) {
        if (!is_action(tr.predicate)) continue;
        if (!pos.count(tr.subject) || !pos.count(tr.object)) continue;
        const auto& go = entity_glyphs().at(tr.object);
        if (go.kind != GlyphKind::Tool) continue;
        pos[tr.object] = adjacent(tr.object, tr.subject);
    }
    return pos;
}

struct ViewTransform {
    double angle = 0.0;
    double scale = 1.0;
    double cx = 0.5, cy = 0.5;  // world point mapped to image centre
    double brightness = 1.0;
};

inline void paint_view(ArrayF32& img, std::vector<int>& owner, const ScenarioScript& s,
                       const std::map<std::string, Pos>& pos, const ViewTransform& vt) {
    const uint32_t H = img.dims[0], W = img.dims[1];
    float bg = static_cast<float>(s.background * vt.brightness);
    for (auto& v : img.data) v = bg;
    owner.assign(size_t(H) * W, -1);

    // stable z-order: furniture, equipment, persons, tools
    std::vector<std::string> order = s.present;
    std::sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
        const auto& ga = entity_glyphs().at(a);
        const auto& gb = entity_glyphs().at(b);
        if (ga.kind != gb.kind) return static_cast<int>(ga.kind) < static_cast<int>(gb.kind);
        return VocabSpec::default_or().entity_index(a) < VocabSpec::default_or().entity_index(b);
    });

    double ca = std::cos(vt.angle), sa = std::sin(vt.angle);
    for (const std::string& e : order) {
        auto it = pos.find(e);
        if (it == pos.end()) continue;
        const auto& glyph = entity_glyphs().at(e);
        // rotate around world centre, then zoom about (cx, cy)
        double rx = 0.5 + ca * (it->second.x - 0.5) - sa * (it->second.y - 0.5);
        double ry = 0.5 + sa * (it->second.x - 0.5) + ca * (it->second.y - 0.5);
        double zx = 0.5 + (rx - vt.cx) * vt.scale;
        double zy = 0.5 + (ry - vt.cy) * vt.scale;
        double hs = glyph.half_size * vt.scale;
        int x0 = static_cast<int>(std::floor((zx - hs) * W));
        int x1 = static_cast<int>(std::ceil((zx + hs) * W));
        int y0 = static_cast<int>(std::floor((zy - hs) * H));
        int y1 = static_cast<int>(std::ceil((zy + hs) * H));
        auto color = entity_color(e);
        int eid = VocabSpec::default_or().entity_index(e);
        for (int y = std::max(0, y0); y < std::min<int>(H, y1); ++y)
            for (int x = std::max(0, x0); x < std::min<int>(W, x1); ++x) {
                img.at(y, x, 0) = color[0] * static_cast<float>(vt.brightness);
                img.at(y, x, 1) = color[1] * static_cast<float>(vt.brightness);
                img.at(y, x, 2) = color[2] * static_cast<float>(vt.brightness);
                owner[size_t(y) * W + x] = eid;
            }
    }
}

inline const std::map<std::string, std::vector<std::string>>& tracker_tools_by_phase() {
    static const std::map<std::string, std::vector<std::string>> m = {
        {"idle", {}},
        {"robot_calibration", {}},
        {"base_array_installation", {"tracker"}},
        {"saw_installation", {"saw"}},
        {"registration", {"tracker"}},
        {"sawing_execution", {"saw"}},
        {"implant_placement", {"instrument"}},
        {"closure", {}},
    };
    return m;
}

inline std::string phase_announcement(const std::string& phase) {
    static const std::map<std::string, std::string> m = {
        {"idle", "team is getting ready"},
        {"robot_calibration", "let us set up the robot"},
        {"base_array_installation", "attaching the arrays now"},
        {"saw_installation", "mounting the saw guide"},
        {"registration", "starting the registration points"},
        {"sawing_execution", "beginning the bone work"},
        {"implant_placement", "bring the implant tray"},
        {"closure", "let us close up"},
    };
    return m.at(phase);
}

// Twin predicates share one request line so speech carries no exclusive signal.
inline std::string action_request(const std::string& predicate) {
    static const std::map<std::string, std::string> m = {
        {"sawing", "hand me the saw"},
        {"hammering", "hand me the instrument"},
        {"drilling", "hand me the instrument"},
        {"calibrating", "run the robot checks"},
        {"preparing", "run the robot checks"},
        {"suturing", "suture kit please"},
        {"cleaning", "wipe that table down"},
        {"scanning", "x ray coming in"},
        {"cementing", "mix the cement"},
        {"cutting", "scalpel please"},
        {"holding", "hold this steady"},
        {"assisting", "assist me here"},
        {"manipulating", "adjust the array"},
        {"touching", "checking the station"},
    };
    auto it = m.find(predicate);
    return it == m.end() ? std::string("carry on") : it->second;
}

}  // namespace detail

inline TimepointSample render_timepoint(const ScenarioScript& s, int t,
                                        const DatasetConfig& config) {
    if (t < 0 || t >= s.length) throw std::out_of_range("render_timepoint: t outside scenario");
    Rng scen_rng(s.seed);

    TimepointSample sample;
    sample.timepoint_id = t;
    sample.scenario_id = s.scenario_id;
    sample.t_in_scenario = t;
    sample.gt_graph = graph_at(s, t);
    sample.gt_graph.timepoint_id = t;
    sample.phase = s.phase_at(t);
    sample.next_action = next_action_label(s, t);
    sample.breach = detect_breach(sample.gt_graph, SterilityPolicy::default_or()).breach;

    auto pos = detail::positions_at(s, sample.gt_graph);
    const uint32_t H = config.image_h, W = config.image_w;

    // room views
    std::vector<int> owner, owner0;
    for (int v = 0; v < config.n_room_views; ++v) {
        detail::ViewTransform vt;
        vt.angle = s.camera_jitter + v * 2.0 * 3.141592653589793 / std::max(3, config.n_room_views);
        vt.scale = 0.95;
        vt.brightness = 1.0 - 0.06 * v;
        ArrayF32 img(H, W, 3);
        detail::paint_view(img, owner, s, pos, vt);
        if (v == 0) owner0 = owner;
        sample.modalities.room_images.push_back(std::move(img));
    }
    // detail views: zoomed at the surgical field
    for (int v = 0; v < config.n_detail_views; ++v) {
        detail::ViewTransform vt;
        vt.angle = s.camera_jitter + 0.35 + 0.5 * v;
        vt.scale = 2.4;
        vt.cx = pos.at("patient").x;
        vt.cy = pos.at("patient").y;
        vt.brightness = 1.0;
        ArrayF32 img(H, W, 3);
        detail::paint_view(img, owner, s, pos, vt);
        sample.modalities.detail_images.push_back(std::move(img));
    }

    // masks: visible footprints in room view 0, name-sorted
    {
        std::vector<std::string> ents = s.present;
        std::sort(ents.begin(), ents.end());
        for (const std::string& e : ents) {
            int eid = VocabSpec::default_or().entity_index(e);
            BitMask m(H, W);
            for (uint32_t y = 0; y < H; ++y)
                for (uint32_t x = 0; x < W; ++x)
                    if (owner0[size_t(y) * W + x] == eid) m.set(y, x, true);
            sample.modalities.masks.emplace_back(e, std::move(m));
        }
    }

    // point cloud: sample glyph boxes in 3D
    {
        Rng rng = Rng(s.seed).derive("pc." + std::to_string(t));
        struct Ent {
            std::string name;
            double weight;
        };
        std::vector<Ent> ents;
        double wsum = 0;
        for (const std::string& e : s.present) {
            const auto& g = entity_glyphs().at(e);
            double w = (2 * g.half_size) * (2 * g.half_size) * (0.5 + g.height);
            ents.push_back({e, w});
            wsum += w;
        }
        uint32_t P = config.n_points;
        std::vector<uint32_t> counts(ents.size(), 0);
        uint32_t used = 0;
        for (size_t i = 0; i < ents.size(); ++i) {
            counts[i] = static_cast<uint32_t>(std::floor(ents[i].weight / wsum * P));
            used += counts[i];
        }
        for (size_t i = 0; used < P; i = (i + 1) % ents.size()) {
            ++counts[i];
            ++used;
        }
        ArrayF32 pc(P, 6);
        uint32_t row = 0;
        for (size_t i = 0; i < ents.size(); ++i) {
            const auto& g = entity_glyphs().at(ents[i].name);
            auto color = entity_color(ents[i].name);
            Pos p = pos.at(ents[i].name);
            for (uint32_t k = 0; k < counts[i]; ++k, ++row) {
                pc.at(row, 0) = static_cast<float>(p.x + rng.uniform(-g.half_size, g.half_size));
                pc.at(row, 1) = static_cast<float>(p.y + rng.uniform(-g.half_size, g.half_size));
                pc.at(row, 2) = static_cast<float>(rng.uniform(0.0, g.height));
                for (int c = 0; c < 3; ++c)
                    pc.at(row, 3 + c) = static_cast<float>(
                        std::clamp(color[c] + rng.normal(0.0, 0.02), 0.0, 1.0));
            }
        }
        // permute rows
        for (uint32_t i = P; i > 1; --i) {
            uint32_t j = static_cast<uint32_t>(rng.index(i));
            for (int c = 0; c < 6; ++c) std::swap(pc.at(i - 1, c), pc.at(j, c));
        }
        sample.modalities.pointcloud = std::move(pc);
    }

    // audio: one second of the active action's signature plus noise
    {
        Rng rng = Rng(s.seed).derive("audio." + std::to_string(t));
        uint32_t n = config.sample_rate;
        std::vector<float> wave(n);
        for (auto& v : wave) v = static_cast<float>(rng.normal(0.0, 0.02));
        std::string sound;  // highest-priority audible action
        for (const auto& iv : active_intervals(s, t)) {
            const std::string& p = iv.triplet.predicate;
            if (p == "hammering" || p == "drilling") sound = p;
            else if (p == "sawing" && sound.empty()) sound = p;
        }
        double sr = static_cast<double>(config.sample_rate);
        if (sound == "hammering") {
            uint32_t period = config.sample_rate / 4;
            uint32_t offs = static_cast<uint32_t>(rng.index(period));
            for (uint32_t start = offs; start < n; start += period) {
                uint32_t ring = std::min<uint32_t>(n - start, config.sample_rate / 13);
                for (uint32_t i = 0; i < ring; ++i)
                    wave[start + i] += static_cast<float>(
                        0.9 * std::exp(-double(i) / (sr * 0.02)) *
                        std::sin(2.0 * 3.141592653589793 * 900.0 * i / sr));
            }
        } else if (sound == "drilling") {
            double phase0 = rng.uniform(0.0, 6.283185307179586);
            for (uint32_t i = 0; i < n; ++i)
                wave[i] += static_cast<float>(
                    0.5 * std::sin(2.0 * 3.141592653589793 * 440.0 * i / sr + phase0));
        } else if (sound == "sawing") {
            double phase0 = rng.uniform(0.0, 6.283185307179586);
            for (uint32_t i = 0; i < n; ++i)
                wave[i] += static_cast<float>(
                    0.4 * (1.0 + 0.3 * std::sin(2.0 * 3.141592653589793 * 8.0 * i / sr)) *
                    std::sin(2.0 * 3.141592653589793 * 180.0 * i / sr + phase0));
        }
        sample.modalities.audio = std::move(wave);
    }

    // transcript: announcements and requests up to t, most recent last
    {
        std::vector<TranscriptLine> lines;
        for (const auto& ph : s.phases)
            if (ph.start_t <= t)
                lines.push_back({double(ph.start_t) - 0.5, detail::phase_announcement(ph.phase)});
        for (const auto& iv : s.actions)
            if (iv.start_t <= t)
                lines.push_back({double(iv.start_t) - 0.25,
                                 detail::action_request(iv.triplet.predicate)});
        for (const auto& ev : s.breaches)
            if (ev.t <= t) lines.push_back({double(ev.t), "careful do not touch that"});
        std::stable_sort(lines.begin(), lines.end(),
                         [](const TranscriptLine& a, const TranscriptLine& b) {
                             return a.timestamp < b.timestamp;
                         });
        if (lines.size() > 8) lines.erase(lines.begin(), lines.end() - 8);
        sample.modalities.transcript = std::move(lines);
    }

    // robot log
    {
        sample.modalities.robot_log.phase = sample.phase;
        std::string action = "none";
        for (const auto& iv : active_intervals(s, t)) {
            const std::string& p = iv.triplet.predicate;
            if (p == "calibrating" || p == "preparing" || p == "sawing") action = p;
        }
        sample.modalities.robot_log.action = action;
    }

    // tracker: phase-appropriate tools only
    {
        Rng rng = Rng(s.seed).derive("tracker." + std::to_string(t));
        for (const std::string& tool : detail::tracker_tools_by_phase().at(sample.phase)) {
            if (!detail::present(s, tool)) continue;
            TrackerRecord rec;
            rec.tool = tool;
            Pos p = pos.at(tool);
            rec.translation = {p.x * 1000.0 + rng.normal(0.0, 1.0),
                               p.y * 1000.0 + rng.normal(0.0, 1.0),
                               entity_glyphs().at(tool).height * 1000.0 * 0.5 +
                                   rng.normal(0.0, 1.0)};
            double half = rng.uniform(0.0, 3.141592653589793);
            std::array<double, 4> q = {std::cos(half), 0.01 * rng.normal(),
                                       0.01 * rng.normal(), std::sin(half)};
            double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
            for (auto& x : q) x /= norm;
            rec.rotation = q;
            sample.modalities.tracker.push_back(rec);
        }
        std::sort(sample.modalities.tracker.begin(), sample.modalities.tracker.end(),
                  [](const TrackerRecord& a, const TrackerRecord& b) { return a.tool < b.tool; });
    }

    return sample;
}

}  // namespace mmsg::synth
