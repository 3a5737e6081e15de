#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmsg/augment.hpp"
#include "mmsg/dataset_io.hpp"
#include "mmsg/eval.hpp"
#include "mmsg/memory.hpp"
#include "mmsg/model.hpp"

namespace mmsg {

// Which inputs reach the model for a run; room cameras are always on.
struct ModalitySelection {
    bool room_images = true;
    bool detail_images = true;
    bool pointcloud = true;
    bool audio = true;
    bool transcript = true;
    bool robot_log = true;
    bool tracker = true;
    bool masks = true;
    bool memory = false;

    static ModalitySelection none_but_room() {
        ModalitySelection s;
        s.detail_images = s.pointcloud = s.audio = s.transcript = s.robot_log = s.tracker =
            s.masks = s.memory = false;
        return s;
    }

    static ModalitySelection from_list(const std::string& csv) {
        ModalitySelection s = none_but_room();
        for (const auto& raw : split(csv, ',')) {
            std::string tag = trim(raw);
            if (tag.empty()) continue;
            if (tag == "room_images") s.room_images = true;
            else if (tag == "detail_images") s.detail_images = true;
            else if (tag == "pointcloud") s.pointcloud = true;
            else if (tag == "audio") s.audio = true;
            else if (tag == "transcript") s.transcript = true;
            else if (tag == "robot_log") s.robot_log = true;
            else if (tag == "tracker") s.tracker = true;
            else if (tag == "masks") s.masks = true;
            else if (tag == "memory") s.memory = true;
            else throw std::invalid_argument("unknown modality tag: " + tag);
        }
        return s;
    }

    std::string to_list() const {
        std::vector<std::string> tags = {"room_images"};
        if (detail_images) tags.push_back("detail_images");
        if (pointcloud) tags.push_back("pointcloud");
        if (audio) tags.push_back("audio");
        if (transcript) tags.push_back("transcript");
        if (robot_log) tags.push_back("robot_log");
        if (tracker) tags.push_back("tracker");
        if (masks) tags.push_back("masks");
        if (memory) tags.push_back("memory");
        return join(tags, ",");
    }
};

struct Assembled {
    nn::Tensor soft;                                      // [S, d]
    std::vector<std::pair<std::string, size_t>> segments;  // modality tag, token count
    std::string prompt_text;
};

// Multimodal input assembly shared by training and inference: encode + project
// the array modalities, serialize the text-native ones, fixed segment order.
inline Assembled assemble_input(Model& m, const synth::TimepointSample& sample,
                                const ModalitySelection& sel, const std::string& memory_text,
                                bool train) {
    Assembled out;
    const auto& b = sample.modalities;
    std::vector<ModalityTokens> parts;

    {
        std::vector<ArrayF32> views = b.room_images;
        if (sel.detail_images && b.has_detail_images)
            for (const auto& v : b.detail_images) views.push_back(v);
        if (views.size() > m.cfg.enc.max_views) views.resize(m.cfg.enc.max_views);
        auto tokens = m.encoders.images.encode(views, train);
        parts.push_back(m.encoders.project_tokens(tokens, train));
    }
    if (sel.pointcloud && b.has_pointcloud) {
        auto tokens = m.encoders.pointcloud.encode(b.pointcloud, train);
        parts.push_back(m.encoders.project_tokens(tokens, train));
    }
    if (sel.audio && b.has_audio) {
        auto tokens = m.encoders.audio.encode(b.audio, train);
        parts.push_back(m.encoders.project_tokens(tokens, train));
    }
    if (sel.masks && b.has_masks && !b.masks.empty()) {
        std::vector<BitMask> masks;
        for (const auto& [name, mask] : b.masks) {
            if (masks.size() >= m.cfg.enc.max_masks) break;
            masks.push_back(mask);
        }
        auto tokens = m.encoders.masks.encode(masks, train);
        if (tokens.tokens.rows() > 0) parts.push_back(m.encoders.project_tokens(tokens, train));
    }

    size_t total = 0;
    for (const auto& p : parts) total += p.tokens.rows();
    out.soft = nn::Tensor({total, m.cfg.d_model});
    size_t row = 0;
    for (const auto& p : parts) {
        std::copy(p.tokens.data.begin(), p.tokens.data.end(), out.soft.row(row));
        out.segments.emplace_back(p.modality, p.tokens.rows());
        row += p.tokens.rows();
    }

    std::vector<std::string> text_parts;
    if (sel.memory && !memory_text.empty()) text_parts.push_back(memory_text);
    if (sel.transcript && b.has_transcript)
        text_parts.push_back(serialize_transcript(b.transcript));
    if (sel.robot_log && b.has_robot_log)
        text_parts.push_back(serialize_robot_log(b.robot_log));
    if (sel.tracker && b.has_tracker) text_parts.push_back(serialize_tracker(b.tracker));
    text_parts.push_back("predict :");
    out.prompt_text = join(text_parts, " ");
    return out;
}

// Forward + backward for one sample; returns the (unscaled) loss. Gradients
// are accumulated scaled by loss_scale.
inline double sample_loss_and_grad(Model& m, const synth::TimepointSample& sample,
                                   const ModalitySelection& sel,
                                   const std::string& memory_text, double loss_scale) {
    Assembled a = assemble_input(m, sample, sel, memory_text, /*train=*/true);
    std::vector<int> prompt_ids = m.tokenizer.encode(a.prompt_text);
    std::string target_text = serialize_triplets(sample.gt_graph, VocabSpec::default_or());
    std::vector<int> ids = prompt_ids;
    for (int id : m.tokenizer.encode(target_text)) ids.push_back(id);
    ids.push_back(m.tokenizer.eos());

    double loss = m.decoder.forward_loss(a.soft, ids, prompt_ids.size(), loss_scale);
    nn::Tensor dsoft = m.decoder.backward();

    // unwind the soft segments back through projections and encoders
    size_t row_end = dsoft.rows();
    for (size_t si = a.segments.size(); si-- > 0;) {
        auto [tag, count] = a.segments[si];
        nn::Tensor dseg({count, m.cfg.d_model});
        std::copy(dsoft.row(row_end - count), dsoft.row(row_end - count) + count * m.cfg.d_model,
                  dseg.data.begin());
        row_end -= count;
        nn::Tensor dtokens = m.encoders.project_backward(tag, dseg);
        if (tag == "images") m.encoders.images.backward(dtokens);
        else if (tag == "pointcloud") m.encoders.pointcloud.backward(dtokens);
        else if (tag == "audio") m.encoders.audio.backward(dtokens);
        else if (tag == "masks") m.encoders.masks.backward(dtokens);
    }
    return loss;
}

// Cache-free loss evaluation over the full multimodal path.
inline double sample_loss_eval(Model& m, const synth::TimepointSample& sample,
                               const ModalitySelection& sel,
                               const std::string& memory_text) {
    Assembled a = assemble_input(m, sample, sel, memory_text, /*train=*/false);
    std::vector<int> prompt_ids = m.tokenizer.encode(a.prompt_text);
    std::string target_text = serialize_triplets(sample.gt_graph, VocabSpec::default_or());
    std::vector<int> ids = prompt_ids;
    for (int id : m.tokenizer.encode(target_text)) ids.push_back(id);
    ids.push_back(m.tokenizer.eos());
    return m.decoder.loss_eval(a.soft, ids, prompt_ids.size());
}

// Greedy prediction for one sample. With fuse_per_view, one pass per room
// view (detail views riding along) and a triplet-set union across passes.
inline SceneGraph predict_graph(Model& m, const synth::TimepointSample& sample,
                                const ModalitySelection& sel, const std::string& memory_text,
                                bool fuse_per_view, size_t max_len = 160) {
    auto run_one = [&](const synth::TimepointSample& s) {
        Assembled a = assemble_input(m, s, sel, memory_text, /*train=*/false);
        std::vector<int> prompt_ids = m.tokenizer.encode(a.prompt_text);
        auto ids = m.decoder.generate(a.soft, prompt_ids, m.tokenizer.eos(), max_len);
        auto parsed = parse_triplets(m.tokenizer.decode(ids), VocabSpec::default_or());
        parsed.graph.timepoint_id = sample.timepoint_id;
        return parsed.graph;
    };

    if (!fuse_per_view || sample.modalities.room_images.size() <= 1) {
        return run_one(sample);
    }
    std::vector<SceneGraph> per_view;
    for (size_t v = 0; v < sample.modalities.room_images.size(); ++v) {
        synth::TimepointSample view_sample = sample;
        view_sample.modalities.room_images = {sample.modalities.room_images[v]};
        per_view.push_back(run_one(view_sample));
    }
    return fuse_views(per_view);
}

// ---------------------------------------------------------------------------
// Training loop: two-stage temporal curriculum (stage 1 without memory,
// stage 2 with rendered memory context), per-step augmentation, Adam with
// cosine decay, deterministic given the seed.
// ---------------------------------------------------------------------------

struct TrainSchedule {
    size_t steps = 800;
    size_t batch = 6;
    double lr = 3e-4;
    size_t warmup = 20;
    double clip = 1.0;
    double stage2_frac = 0.3;  // trailing fraction of steps with memory context
    size_t memory_k = 3;
};

struct DivergenceError : std::runtime_error {
    uint64_t step;
    explicit DivergenceError(uint64_t s)
        : std::runtime_error("training diverged (non-finite loss) at step " +
                             std::to_string(s)),
          step(s) {}
};

struct TrainResult {
    std::vector<double> loss_curve;  // batch-mean loss per step
    uint64_t steps_done = 0;
    uint64_t stage2_start = 0;
};

// Ground-truth memory text for a training sample: graphs of the same scenario
// before t, rendered with window k.
inline std::string training_memory_text(const synth::Dataset& ds, size_t sample_idx,
                                        size_t k) {
    const auto& s = ds.samples[sample_idx];
    std::vector<SceneGraph> history;
    for (size_t i = sample_idx - static_cast<size_t>(s.t_in_scenario); i < sample_idx; ++i)
        history.push_back(ds.samples[i].gt_graph);
    return render_memory(build_memory(history, k), VocabSpec::default_or());
}

inline TrainResult train_model(Model& m, nn::Adam& opt, const synth::Dataset& ds,
                               const ModalitySelection& sel, const AugmentConfig& aug,
                               const TrainSchedule& sched, uint64_t seed,
                               uint64_t start_step = 0,
                               std::vector<AugmentRecord>* audit = nullptr,
                               const std::function<void(uint64_t, double)>& on_step = {}) {
    if (ds.train_ids.empty()) throw std::invalid_argument("train: empty training split");
    aug.validate();
    auto params = m.params();
    CorpusIndex index = CorpusIndex::build(ds.samples, ds.train_ids, VocabSpec::default_or());

    TrainResult res;
    res.stage2_start =
        sel.memory ? static_cast<uint64_t>(double(sched.steps) * (1.0 - sched.stage2_frac))
                   : sched.steps;
    opt.cfg.clip = sched.clip;

    for (uint64_t step = start_step; step < sched.steps; ++step) {
        Rng rng = Rng(seed).derive("step." + std::to_string(step));
        bool memory_on = sel.memory && step >= res.stage2_start;

        nn::zero_grads(params);
        double batch_loss = 0.0;
        for (size_t bi = 0; bi < sched.batch; ++bi) {
            size_t idx = ds.train_ids[rng.index(ds.train_ids.size())];
            auto [sample, rec] = augment(ds.samples[idx], index, aug, rng);
            if (audit) audit->push_back(rec);
            std::string memory_text =
                memory_on ? training_memory_text(ds, idx, sched.memory_k) : "";
            batch_loss += sample_loss_and_grad(m, sample, sel, memory_text,
                                               1.0 / double(sched.batch));
        }
        batch_loss /= double(sched.batch);
        if (!std::isfinite(batch_loss)) throw DivergenceError(step);
        double lr_now = nn::lr_schedule(sched.lr, step, sched.steps, sched.warmup);
        opt.step(params, lr_now);
        res.loss_curve.push_back(batch_loss);
        res.steps_done = step + 1;
        if (on_step) on_step(step, batch_loss);
    }
    return res;
}

}  // namespace mmsg
