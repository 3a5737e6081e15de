#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/common.hpp"
#include "mmsg/scene_graph.hpp"
#include "mmsg/synth.hpp"

namespace mmsg {

struct AugmentConfig {
    double drop_prob = 0.5;
    double mix_prob = 0.5;
    double jaccard_threshold = 0.5;
    std::set<std::string> swappable = {"audio", "robot_log", "tracker", "transcript"};
    uint64_t seed = 0;

    void validate() const {
        if (drop_prob < 0 || drop_prob > 1 || mix_prob < 0 || mix_prob > 1 ||
            jaccard_threshold < 0 || jaccard_threshold > 1)
            throw std::invalid_argument("augment config: probabilities must be in [0,1]");
        static const std::set<std::string> known = {
            "detail_images", "pointcloud", "audio", "transcript", "robot_log",
            "tracker", "masks"};
        for (const auto& tag : swappable)
            if (!known.count(tag))
                throw std::invalid_argument("augment config: unknown swappable tag " + tag);
    }
};

// Room-camera images are exempt: they are the foundational input.
inline const std::vector<std::string>& droppable_modalities() {
    static const std::vector<std::string> tags = {
        "detail_images", "pointcloud", "audio", "transcript",
        "robot_log",     "tracker",    "masks"};
    return tags;
}

namespace augment_detail {

inline bool* presence_flag(synth::ModalityBundle& b, const std::string& tag) {
    if (tag == "detail_images") return &b.has_detail_images;
    if (tag == "pointcloud") return &b.has_pointcloud;
    if (tag == "audio") return &b.has_audio;
    if (tag == "transcript") return &b.has_transcript;
    if (tag == "robot_log") return &b.has_robot_log;
    if (tag == "tracker") return &b.has_tracker;
    if (tag == "masks") return &b.has_masks;
    return nullptr;
}

inline bool has_modality(const synth::ModalityBundle& b, const std::string& tag) {
    if (tag == "detail_images") return b.has_detail_images;
    if (tag == "pointcloud") return b.has_pointcloud;
    if (tag == "audio") return b.has_audio;
    if (tag == "transcript") return b.has_transcript;
    if (tag == "robot_log") return b.has_robot_log;
    if (tag == "tracker") return b.has_tracker;
    if (tag == "masks") return b.has_masks;
    return false;
}

inline void copy_modality(synth::ModalityBundle& dst, const synth::ModalityBundle& src,
                          const std::string& tag) {
    if (tag == "audio") dst.audio = src.audio;
    else if (tag == "robot_log") dst.robot_log = src.robot_log;
    else if (tag == "tracker") dst.tracker = src.tracker;
    else if (tag == "transcript") dst.transcript = src.transcript;
    else if (tag == "pointcloud") dst.pointcloud = src.pointcloud;
    else if (tag == "masks") dst.masks = src.masks;
    else if (tag == "detail_images") dst.detail_images = src.detail_images;
}

}  // namespace augment_detail

struct AugmentRecord {
    int64_t timepoint_id = 0;
    std::vector<std::string> dropped;
    std::vector<std::pair<std::string, int64_t>> swapped;  // tag -> donor timepoint

    nlohmann::json to_json() const {
        nlohmann::json sw = nlohmann::json::array();
        for (const auto& [tag, donor] : swapped)
            sw.push_back({{"tag", tag}, {"donor_id", donor}});
        return {{"timepoint_id", timepoint_id}, {"dropped", dropped}, {"swapped", sw}};
    }
};

// Each droppable modality independently removed with probability drop_prob;
// labels and room images untouched.
inline std::pair<synth::TimepointSample, std::vector<std::string>> drop_modalities(
    const synth::TimepointSample& sample, const AugmentConfig& cfg, Rng& rng) {
    synth::TimepointSample out = sample;
    std::vector<std::string> dropped;
    for (const std::string& tag : droppable_modalities()) {
        bool drop = rng.bernoulli(cfg.drop_prob);
        bool* flag = augment_detail::presence_flag(out.modalities, tag);
        if (drop && *flag) {
            *flag = false;
            dropped.push_back(tag);
        }
    }
    return {std::move(out), std::move(dropped)};
}

// Triplet sets packed as sorted ints for fast Jaccard.
struct CorpusIndex {
    const std::vector<synth::TimepointSample>* samples = nullptr;
    std::vector<size_t> pool;                    // candidate sample indices
    std::vector<std::vector<uint16_t>> packed;   // per pool entry, sorted

    static uint16_t pack(const Triplet& t, const VocabSpec& v) {
        int s = v.entity_index(t.subject);
        int o = v.entity_index(t.object);
        int p = v.predicate_index(t.predicate);
        return static_cast<uint16_t>((s * 21 + o) * 16 + p);
    }

    static CorpusIndex build(const std::vector<synth::TimepointSample>& samples,
                             const std::vector<size_t>& pool, const VocabSpec& v) {
        CorpusIndex idx;
        idx.samples = &samples;
        idx.pool = pool;
        idx.packed.reserve(pool.size());
        for (size_t i : pool) {
            std::vector<uint16_t> t;
            for (const auto& tr : samples[i].gt_graph.triplets) t.push_back(pack(tr, v));
            std::sort(t.begin(), t.end());
            idx.packed.push_back(std::move(t));
        }
        return idx;
    }

    static double jaccard_sorted(const std::vector<uint16_t>& a,
                                 const std::vector<uint16_t>& b) {
        if (a.empty() && b.empty()) return 1.0;
        size_t i = 0, j = 0, inter = 0;
        while (i < a.size() && j < b.size()) {
            if (a[i] == b[j]) {
                ++inter;
                ++i;
                ++j;
            } else if (a[i] < b[j]) {
                ++i;
            } else {
                ++j;
            }
        }
        return double(inter) / double(a.size() + b.size() - inter);
    }
};

// Uniform choice among corpus samples (excluding the sample itself) whose gt
// graph has Jaccard >= tau with the sample's; nullopt when none qualifies.
inline std::optional<size_t> find_similar(const synth::TimepointSample& sample,
                                          const CorpusIndex& index, const AugmentConfig& cfg,
                                          Rng& rng) {
    std::vector<uint16_t> own;
    for (const auto& tr : sample.gt_graph.triplets)
        own.push_back(CorpusIndex::pack(tr, VocabSpec::default_or()));
    std::sort(own.begin(), own.end());

    std::vector<size_t> eligible;
    for (size_t k = 0; k < index.pool.size(); ++k) {
        size_t i = index.pool[k];
        if ((*index.samples)[i].timepoint_id == sample.timepoint_id) continue;
        if (CorpusIndex::jaccard_sorted(own, index.packed[k]) >= cfg.jaccard_threshold)
            eligible.push_back(i);
    }
    if (eligible.empty()) return std::nullopt;
    return eligible[rng.index(eligible.size())];
}

// Replaces a random non-empty subset of the swappable modalities with the
// donor's; ground truth and labels keep the original sample's values.
inline synth::TimepointSample mix_modalities(const synth::TimepointSample& sample,
                                             const synth::TimepointSample& donor,
                                             const AugmentConfig& cfg, Rng& rng,
                                             std::vector<std::string>* swapped_out = nullptr) {
    synth::TimepointSample out = sample;
    std::vector<std::string> tags(cfg.swappable.begin(), cfg.swappable.end());
    std::vector<bool> chosen(tags.size(), false);
    bool any = false;
    for (size_t i = 0; i < tags.size(); ++i) {
        chosen[i] = rng.bernoulli(0.5);
        any = any || chosen[i];
    }
    if (!any && !tags.empty()) chosen[rng.index(tags.size())] = true;
    for (size_t i = 0; i < tags.size(); ++i) {
        if (!chosen[i]) continue;
        if (!augment_detail::has_modality(donor.modalities, tags[i])) continue;  // skip tag
        augment_detail::copy_modality(out.modalities, donor.modalities, tags[i]);
        if (swapped_out) swapped_out->push_back(tags[i]);
    }
    return out;
}

// Composition: mixing first (cannot leak donor data into dropped slots),
// then dropping. Emits an audit record.
inline std::pair<synth::TimepointSample, AugmentRecord> augment(
    const synth::TimepointSample& sample, const CorpusIndex& index, const AugmentConfig& cfg,
    Rng& rng) {
    AugmentRecord rec;
    rec.timepoint_id = sample.timepoint_id;
    synth::TimepointSample current = sample;
    bool try_mix = rng.bernoulli(cfg.mix_prob);
    if (try_mix) {
        auto donor_idx = find_similar(sample, index, cfg, rng);
        if (donor_idx) {
            const auto& donor = (*index.samples)[*donor_idx];
            std::vector<std::string> swapped;
            current = mix_modalities(current, donor, cfg, rng, &swapped);
            for (const auto& tag : swapped) rec.swapped.emplace_back(tag, donor.timepoint_id);
        }
    }
    auto [dropped_sample, dropped] = drop_modalities(current, cfg, rng);
    rec.dropped = dropped;
    return {std::move(dropped_sample), std::move(rec)};
}

}  // namespace mmsg
