#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/downstream.hpp"
#include "mmsg/train.hpp"
#include "mmsg/vpq.hpp"

namespace mmsg::pipeline {

constexpr const char* kCodeVersion = "mmsg-1.0.0";

// ---------------------------------------------------------------------------
// Run configuration: a flat key=value file, '#' comments, defaults for every
// key. The canonical serialization (all keys, sorted) is hashed into run
// manifests for provenance.
// ---------------------------------------------------------------------------

struct RunConfig {
    synth::DatasetConfig data;
    ModelConfig model;
    TrainSchedule sched;
    AugmentConfig aug;
    ModalitySelection modalities;
    uint64_t seed = 1;
    bool fuse_views = true;
    bool missing_modality_eval = false;
    size_t max_gen_len = 160;
    size_t checkpoint_every = 0;
    std::vector<uint64_t> ablate_seeds = {1, 2, 3};
    std::string dataset_path;
    std::string out_dir;

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> kv;
        auto put = [&](const std::string& k, auto v) {
            if constexpr (std::is_same_v<decltype(v), std::string>) kv[k] = v;
            else kv[k] = [&] {
                if constexpr (std::is_floating_point_v<decltype(v)>) {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%.17g", double(v));
                    return std::string(buf);
                } else {
                    return std::to_string(v);
                }
            }();
        };
        put("data.n_scenarios", data.n_scenarios);
        put("data.min_timepoints", data.min_timepoints);
        put("data.max_timepoints", data.max_timepoints);
        put("data.image_h", data.image_h);
        put("data.image_w", data.image_w);
        put("data.n_points", data.n_points);
        put("data.sample_rate", data.sample_rate);
        put("data.n_room_views", data.n_room_views);
        put("data.n_detail_views", data.n_detail_views);
        put("data.breach_rate", data.breach_rate);
        put("data.split_train", data.split_train);
        put("data.split_val", data.split_val);
        put("data.seed", data.seed);
        put("model.d_model", model.d_model);
        put("model.n_layers", model.n_layers);
        put("model.n_heads", model.n_heads);
        put("model.d_ff", model.d_ff);
        put("model.max_seq_len", model.max_seq_len);
        put("model.n_image_tokens", model.n_image_tokens);
        put("enc.patch", model.enc.patch);
        put("enc.img_enc_layers", model.enc.img_enc_layers);
        put("enc.img_enc_heads", model.enc.img_enc_heads);
        put("enc.pooler_layers", model.enc.pooler_layers);
        put("enc.pooler_heads", model.enc.pooler_heads);
        put("enc.image_positional", int(model.enc.image_positional));
        put("enc.pooler_positional", int(model.enc.pooler_positional));
        put("enc.pc_hidden", model.enc.pc_hidden);
        put("enc.audio_frame", model.enc.audio_frame);
        put("enc.audio_hop", model.enc.audio_hop);
        put("enc.audio_bins", model.enc.audio_bins);
        put("enc.audio_channels", model.enc.audio_channels);
        put("enc.audio_normalize", int(model.enc.audio_normalize));
        put("enc.mask_channels1", model.enc.mask_channels1);
        put("enc.mask_channels2", model.enc.mask_channels2);
        put("enc.max_masks", model.enc.max_masks);
        put("enc.max_views", model.enc.max_views);
        put("train.steps", sched.steps);
        put("train.batch", sched.batch);
        put("train.lr", sched.lr);
        put("train.warmup", sched.warmup);
        put("train.clip", sched.clip);
        put("train.stage2_frac", sched.stage2_frac);
        put("train.memory_k", sched.memory_k);
        put("augment.drop_prob", aug.drop_prob);
        put("augment.mix_prob", aug.mix_prob);
        put("augment.tau", aug.jaccard_threshold);
        kv["augment.swappable"] = join({aug.swappable.begin(), aug.swappable.end()}, ",");
        kv["run.modalities"] = modalities.to_list();
        put("run.seed", seed);
        put("run.fuse_views", int(fuse_views));
        put("run.missing_modality_eval", int(missing_modality_eval));
        put("run.max_gen_len", max_gen_len);
        put("run.checkpoint_every", checkpoint_every);
        {
            std::vector<std::string> s;
            for (uint64_t x : ablate_seeds) s.push_back(std::to_string(x));
            kv["run.ablate_seeds"] = join(s, ",");
        }
        kv["paths.dataset"] = dataset_path;
        kv["paths.out"] = out_dir;
        return kv;
    }

    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
        return out;
    }

    std::string hash() const { return to_hex(fnv1a64(canonical())); }

    void set(const std::string& key, const std::string& value) {
        auto u64 = [&] { return std::stoull(value); };
        auto i32 = [&] { return std::stoi(value); };
        auto f64 = [&] { return std::stod(value); };
        auto b = [&] { return value == "1" || value == "true" || value == "yes"; };
        if (key == "data.n_scenarios") data.n_scenarios = i32();
        else if (key == "data.min_timepoints") data.min_timepoints = i32();
        else if (key == "data.max_timepoints") data.max_timepoints = i32();
        else if (key == "data.image_h") data.image_h = static_cast<uint32_t>(u64());
        else if (key == "data.image_w") data.image_w = static_cast<uint32_t>(u64());
        else if (key == "data.n_points") data.n_points = static_cast<uint32_t>(u64());
        else if (key == "data.sample_rate") data.sample_rate = static_cast<uint32_t>(u64());
        else if (key == "data.n_room_views") data.n_room_views = i32();
        else if (key == "data.n_detail_views") data.n_detail_views = i32();
        else if (key == "data.breach_rate") data.breach_rate = f64();
        else if (key == "data.split_train") data.split_train = f64();
        else if (key == "data.split_val") data.split_val = f64();
        else if (key == "data.seed") data.seed = u64();
        else if (key == "model.d_model") model.d_model = u64();
        else if (key == "model.n_layers") model.n_layers = u64();
        else if (key == "model.n_heads") model.n_heads = u64();
        else if (key == "model.d_ff") model.d_ff = u64();
        else if (key == "model.max_seq_len") model.max_seq_len = u64();
        else if (key == "model.n_image_tokens") model.n_image_tokens = u64();
        else if (key == "enc.patch") model.enc.patch = u64();
        else if (key == "enc.img_enc_layers") model.enc.img_enc_layers = u64();
        else if (key == "enc.img_enc_heads") model.enc.img_enc_heads = u64();
        else if (key == "enc.pooler_layers") model.enc.pooler_layers = u64();
        else if (key == "enc.pooler_heads") model.enc.pooler_heads = u64();
        else if (key == "enc.image_positional") model.enc.image_positional = b();
        else if (key == "enc.pooler_positional") model.enc.pooler_positional = b();
        else if (key == "enc.pc_hidden") model.enc.pc_hidden = u64();
        else if (key == "enc.audio_frame") model.enc.audio_frame = u64();
        else if (key == "enc.audio_hop") model.enc.audio_hop = u64();
        else if (key == "enc.audio_bins") model.enc.audio_bins = u64();
        else if (key == "enc.audio_channels") model.enc.audio_channels = u64();
        else if (key == "enc.audio_normalize") model.enc.audio_normalize = b();
        else if (key == "enc.mask_channels1") model.enc.mask_channels1 = u64();
        else if (key == "enc.mask_channels2") model.enc.mask_channels2 = u64();
        else if (key == "enc.max_masks") model.enc.max_masks = u64();
        else if (key == "enc.max_views") model.enc.max_views = u64();
        else if (key == "train.steps") sched.steps = u64();
        else if (key == "train.batch") sched.batch = u64();
        else if (key == "train.lr") sched.lr = f64();
        else if (key == "train.warmup") sched.warmup = u64();
        else if (key == "train.clip") sched.clip = f64();
        else if (key == "train.stage2_frac") sched.stage2_frac = f64();
        else if (key == "train.memory_k") sched.memory_k = u64();
        else if (key == "augment.drop_prob") aug.drop_prob = f64();
        else if (key == "augment.mix_prob") aug.mix_prob = f64();
        else if (key == "augment.tau") aug.jaccard_threshold = f64();
        else if (key == "augment.swappable") {
            aug.swappable.clear();
            for (const auto& t : split(value, ','))
                if (!trim(t).empty()) aug.swappable.insert(trim(t));
        } else if (key == "run.modalities") modalities = ModalitySelection::from_list(value);
        else if (key == "run.seed") seed = u64();
        else if (key == "run.fuse_views") fuse_views = b();
        else if (key == "run.missing_modality_eval") missing_modality_eval = b();
        else if (key == "run.max_gen_len") max_gen_len = u64();
        else if (key == "run.checkpoint_every") checkpoint_every = u64();
        else if (key == "run.ablate_seeds") {
            ablate_seeds.clear();
            for (const auto& t : split(value, ','))
                if (!trim(t).empty()) ablate_seeds.push_back(std::stoull(trim(t)));
        } else if (key == "paths.dataset") dataset_path = value;
        else if (key == "paths.out") out_dir = value;
        else throw std::invalid_argument("unknown config key: " + key);
    }

    static RunConfig load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open config: " + path.string());
        RunConfig cfg;
        std::string line;
        size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#') continue;
            auto pos = s.find('=');
            if (pos == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": expected key=value");
            try {
                cfg.set(trim(s.substr(0, pos)), trim(s.substr(pos + 1)));
            } catch (const std::exception& e) {
                throw std::runtime_error("config line " + std::to_string(line_no) + ": " +
                                         e.what());
            }
        }
        return cfg;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write config: " + path.string());
        os << canonical();
    }
};

inline std::string file_hash(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot hash missing file: " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return to_hex(fnv1a64(bytes));
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline std::filesystem::path cmd_gen_data(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::path out = cfg.dataset_path.empty() ? fs::path(cfg.out_dir) / "dataset"
                                            : fs::path(cfg.dataset_path);
    auto ds = synth::generate_dataset(cfg.data);
    fs::remove_all(out);
    synth::write_dataset(ds, out);
    return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutput {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::vector<double> loss_curve;
};

inline uint64_t derived_seed(uint64_t run_seed, const std::string& name) {
    return fnv1a64(name) ^ (run_seed * 0x9e3779b97f4a7c15ull + 0x1d8e4e27c47d124full);
}

inline TrainOutput cmd_train(const RunConfig& cfg, const std::string& resume_from = "") {
    namespace fs = std::filesystem;
    if (cfg.dataset_path.empty()) throw std::invalid_argument("train: dataset path required");
    auto t0 = std::chrono::steady_clock::now();
    synth::Dataset ds = synth::read_dataset(cfg.dataset_path);
    std::string dataset_hash = file_hash(fs::path(cfg.dataset_path) / "manifest.json");

    ModelConfig mc = cfg.model;
    mc.enc.image_h = ds.config.image_h;
    mc.enc.image_w = ds.config.image_w;
    mc.enc.sample_rate = ds.config.sample_rate;

    Model model = Model::init(
        [&] {
            ModelConfig c = mc;
            c.seed = derived_seed(cfg.seed, "model_init");
            return c;
        }(),
        VocabSpec::default_or());
    nn::Adam opt;
    uint64_t start_step = 0;
    if (!resume_from.empty()) {
        auto loaded = checkpoint::load_checkpoint(resume_from, VocabSpec::default_or());
        model = std::move(loaded.model);
        start_step = loaded.meta.step;
        opt.t = loaded.meta.adam_t;
    }

    fs::create_directories(cfg.out_dir);
    std::vector<AugmentRecord> audit;
    std::ofstream audit_os(fs::path(cfg.out_dir) / "audit.jsonl");

    checkpoint::Meta meta;
    meta.dataset_ref = dataset_hash;
    meta.config_hash = cfg.hash();

    auto on_step = [&](uint64_t step, double loss) {
        (void)loss;
        for (const auto& rec : audit) audit_os << rec.to_json().dump() << "\n";
        audit.clear();
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.sched.steps) {
            checkpoint::Meta m = meta;
            m.step = step + 1;
            m.rng_state = Rng(cfg.seed).state();
            checkpoint::save_checkpoint(
                fs::path(cfg.out_dir) / ("checkpoint_step" + std::to_string(step + 1) + ".mmck"),
                model, m, nullptr);
        }
    };

    TrainResult res;
    std::string divergence_note;
    try {
        res = train_model(model, opt, ds, cfg.modalities, cfg.aug, cfg.sched, cfg.seed,
                          start_step, &audit, on_step);
    } catch (const DivergenceError& e) {
        // state dump for post-mortem, then surface the failure in the manifest
        checkpoint::Meta m = meta;
        m.step = e.step;
        m.rng_state = Rng(cfg.seed).state();
        checkpoint::save_checkpoint(fs::path(cfg.out_dir) / "state_dump.mmck", model, m, &opt);
        divergence_note = e.what();
    }
    for (const auto& rec : audit) audit_os << rec.to_json().dump() << "\n";
    audit.clear();

    TrainOutput out;
    out.loss_curve = res.loss_curve;
    out.checkpoint = fs::path(cfg.out_dir) / "checkpoint.mmck";
    meta.step = res.steps_done;
    meta.rng_state = Rng(cfg.seed).state();
    meta.stage = (cfg.modalities.memory && res.steps_done >= res.stage2_start) ? 2 : 1;
    if (divergence_note.empty())
        checkpoint::save_checkpoint(out.checkpoint, model, meta, &opt);

    nlohmann::json metrics = nlohmann::json::object();
    {
        nlohmann::json curve = nlohmann::json::array();
        for (size_t i = 0; i < res.loss_curve.size(); i += std::max<size_t>(1, res.loss_curve.size() / 64))
            curve.push_back({{"step", i}, {"loss", res.loss_curve[i]}});
        if (!res.loss_curve.empty())
            curve.push_back({{"step", res.loss_curve.size() - 1}, {"loss", res.loss_curve.back()}});
        metrics["loss_curve"] = curve;
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json manifest = {
        {"config_hash", cfg.hash()},
        {"seed", cfg.seed},
        {"code_version", kCodeVersion},
        {"dataset", {{"path", cfg.dataset_path}, {"manifest_hash", dataset_hash}}},
        {"metrics", metrics},
        {"steps", res.steps_done},
        {"stage2_start", res.stage2_start},
        {"wall_clock_sec", wall},
        {"checkpoint", divergence_note.empty() ? out.checkpoint.string() : ""},
        {"divergence", divergence_note}};
    out.manifest = fs::path(cfg.out_dir) / "run_manifest.json";
    {
        std::ofstream os(out.manifest);
        os << manifest.dump(2) << "\n";
    }
    {
        std::ofstream os(fs::path(cfg.out_dir) / "config.txt");
        os << cfg.canonical();
    }
    if (!divergence_note.empty()) throw DivergenceError(res.steps_done);
    return out;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvalOutput {
    ClassReport report;
    double tagged_macro_f1 = 0.0;  // macro F1 over the exclusive-pair predicates
    std::map<std::string, SceneGraph> predictions;
    std::filesystem::path report_csv, report_json;
};

inline double tagged_macro_f1(const ConfusionTallies& tallies) {
    double sum = 0;
    int n = 0;
    for (const auto& [pred, channel] : synth::exclusive_predicate_channels()) {
        auto it = tallies.per_predicate.find(pred);
        Tally t = it == tallies.per_predicate.end() ? Tally{} : it->second;
        if (t.tp + t.fp + t.fn == 0) continue;
        double p = (t.tp + t.fp) > 0 ? double(t.tp) / double(t.tp + t.fp) : 0.0;
        double r = (t.tp + t.fn) > 0 ? double(t.tp) / double(t.tp + t.fn) : 0.0;
        sum += f1_from_pr(p, r);
        ++n;
    }
    return n > 0 ? sum / n : 0.0;
}

inline EvalOutput evaluate_model(Model& model, const synth::Dataset& ds,
                                 const RunConfig& cfg, const std::string& split) {
    const auto& ids = ds.split(split);
    if (ids.empty()) throw std::runtime_error("evaluate: empty split " + split);

    // scenario order, then time order (memory needs the own-prediction history)
    std::vector<size_t> order(ids.begin(), ids.end());
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (ds.samples[a].scenario_id != ds.samples[b].scenario_id)
            return ds.samples[a].scenario_id < ds.samples[b].scenario_id;
        return ds.samples[a].t_in_scenario < ds.samples[b].t_in_scenario;
    });

    ConfusionTallies tallies;
    EvalOutput out;
    int current_scenario = -1;
    std::vector<SceneGraph> predicted_history;
    for (size_t idx : order) {
        synth::TimepointSample sample = ds.samples[idx];
        if (sample.scenario_id != current_scenario) {
            current_scenario = sample.scenario_id;
            predicted_history.clear();
        }
        if (cfg.missing_modality_eval) {
            Rng rng = Rng(derived_seed(cfg.seed, "missing_modality"))
                          .derive("t." + std::to_string(sample.timepoint_id));
            const auto& tags = droppable_modalities();
            const std::string& tag = tags[rng.index(tags.size())];
            if (bool* flag = augment_detail::presence_flag(sample.modalities, tag))
                *flag = false;
        }
        std::string memory_text;
        if (cfg.modalities.memory)
            memory_text = render_memory(build_memory(predicted_history, cfg.sched.memory_k),
                                        VocabSpec::default_or());
        SceneGraph pred = predict_graph(model, sample, cfg.modalities, memory_text,
                                        cfg.fuse_views, cfg.max_gen_len);
        if (cfg.modalities.memory) predicted_history.push_back(pred);
        tallies.add(tally(pred, ds.samples[idx].gt_graph));
        out.predictions[std::to_string(sample.timepoint_id)] = pred;
    }
    out.report = report(tallies, VocabSpec::default_or().predicates());
    out.tagged_macro_f1 = tagged_macro_f1(tallies);
    return out;
}

inline EvalOutput cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                               const std::string& split = "test") {
    namespace fs = std::filesystem;
    if (!fs::exists(checkpoint_path))
        throw std::runtime_error("evaluate: checkpoint not found: " + checkpoint_path);
    synth::Dataset ds = synth::read_dataset(cfg.dataset_path);
    auto loaded = checkpoint::load_checkpoint(checkpoint_path, VocabSpec::default_or());

    EvalOutput out = evaluate_model(loaded.model, ds, cfg, split);

    // training-split predicate counts drive the frequency grouping
    std::map<std::string, long long> train_counts;
    for (size_t idx : ds.train_ids)
        for (const auto& t : ds.samples[idx].gt_graph.triplets) train_counts[t.predicate]++;
    ConfusionTallies tallies;
    for (const auto& [tid, pred] : out.predictions) {
        size_t idx = static_cast<size_t>(std::stoll(tid));
        tallies.add(tally(pred, ds.samples[idx].gt_graph));
    }
    auto groups = group_by_frequency(tallies, train_counts, VocabSpec::default_or().predicates());

    fs::create_directories(cfg.out_dir);
    out.report_csv = fs::path(cfg.out_dir) / ("report_" + split + ".csv");
    out.report_json = fs::path(cfg.out_dir) / ("report_" + split + ".json");
    {
        std::ofstream os(out.report_csv);
        os << report_to_csv(out.report, VocabSpec::default_or().predicates());
    }
    {
        nlohmann::json j = report_to_json(out.report);
        j["tagged_macro_f1"] = out.tagged_macro_f1;
        j["split"] = split;
        j["frequency_groups"] = {
            {"head", {{"predicates", groups.head}, {"macro_f1", groups.head_report.macro_f1}}},
            {"body", {{"predicates", groups.body}, {"macro_f1", groups.body_report.macro_f1}}},
            {"tail", {{"predicates", groups.tail}, {"macro_f1", groups.tail_report.macro_f1}}}};
        j["provenance"] = {{"checkpoint", checkpoint_path},
                           {"checkpoint_hash", file_hash(checkpoint_path)},
                           {"dataset", cfg.dataset_path},
                           {"dataset_manifest_hash",
                            file_hash(fs::path(cfg.dataset_path) / "manifest.json")},
                           {"config_hash", cfg.hash()},
                           {"code_version", kCodeVersion}};
        std::ofstream os(out.report_json);
        os << j.dump(2) << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// ablate: seeded grids with per-cell run caching (a cell re-runs only if its
// effective config hash is absent from the cache directory).
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string name;
    RunConfig cfg;  // fully resolved (modality set, augmentation, eval protocol)
};

struct CellResult {
    std::string cell;
    uint64_t seed = 0;
    double macro_f1 = 0.0;
    double tagged_macro_f1 = 0.0;
};

inline CellResult run_cell_cached(const AblationCell& cell, uint64_t seed,
                                  const std::filesystem::path& cache_root) {
    namespace fs = std::filesystem;
    RunConfig cfg = cell.cfg;
    cfg.seed = seed;
    fs::path dir = cache_root / (cell.name + "_s" + std::to_string(seed));
    cfg.out_dir = dir.string();
    fs::path report = dir / "report_test.json";

    CellResult res;
    res.cell = cell.name;
    res.seed = seed;
    if (fs::exists(report)) {
        auto j = synth::load_json_file(report);
        if (j.contains("provenance") &&
            j["provenance"].value("config_hash", "") == cfg.hash()) {
            res.macro_f1 = j.at("macro").at("f1").get<double>();
            res.tagged_macro_f1 = j.value("tagged_macro_f1", 0.0);
            return res;
        }
    }
    fs::create_directories(dir);
    auto t = cmd_train(cfg);
    auto e = cmd_evaluate(cfg, t.checkpoint.string(), "test");
    res.macro_f1 = e.report.macro_f1;
    res.tagged_macro_f1 = e.tagged_macro_f1;
    return res;
}

struct AblationTable {
    std::vector<CellResult> rows;
    std::map<std::string, std::pair<double, double>> mean_std;         // macro F1
    std::map<std::string, std::pair<double, double>> tagged_mean_std;  // tagged macro F1

    std::string to_csv() const {
        std::string csv = "cell,seed,macro_f1,tagged_macro_f1\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f\n", r.cell.c_str(),
                          static_cast<unsigned long long>(r.seed), r.macro_f1,
                          r.tagged_macro_f1);
            csv += buf;
        }
        for (const auto& [cell, ms] : mean_std) {
            auto t = tagged_mean_std.at(cell);
            std::snprintf(buf, sizeof(buf), "%s,mean_std,%.6f ± %.6f,%.6f ± %.6f\n",
                          cell.c_str(), ms.first, ms.second, t.first, t.second);
            csv += buf;
        }
        return csv;
    }
};

inline AblationTable run_grid(const std::vector<AblationCell>& cells,
                              const std::vector<uint64_t>& seeds,
                              const std::filesystem::path& cache_root) {
    AblationTable table;
    for (const auto& cell : cells)
        for (uint64_t seed : seeds) table.rows.push_back(run_cell_cached(cell, seed, cache_root));
    for (const auto& cell : cells) {
        std::vector<double> f1s, tagged;
        for (const auto& r : table.rows)
            if (r.cell == cell.name) {
                f1s.push_back(r.macro_f1);
                tagged.push_back(r.tagged_macro_f1);
            }
        auto stats = [](const std::vector<double>& v) {
            double mean = 0;
            for (double x : v) mean += x;
            mean /= double(v.size());
            double var = 0;
            for (double x : v) var += (x - mean) * (x - mean);
            double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
            return std::make_pair(mean, sd);
        };
        table.mean_std[cell.name] = stats(f1s);
        table.tagged_mean_std[cell.name] = stats(tagged);
    }
    return table;
}

// The three spec'd grids.
inline std::vector<AblationCell> modality_stackup_cells(const RunConfig& base) {
    auto make = [&](const std::string& name, const std::string& mods) {
        RunConfig c = base;
        c.modalities = ModalitySelection::from_list(mods);
        c.missing_modality_eval = false;
        return AblationCell{name, c};
    };
    return {
        make("room_only", "room_images"),
        make("plus_detail", "room_images,detail_images"),
        make("plus_pointcloud", "room_images,detail_images,pointcloud"),
        make("plus_audio_speech", "room_images,detail_images,pointcloud,audio,transcript"),
        make("plus_robot_tracker",
             "room_images,detail_images,pointcloud,audio,transcript,robot_log,tracker"),
        make("full",
             "room_images,detail_images,pointcloud,audio,transcript,robot_log,tracker,masks"),
    };
}

inline std::vector<AblationCell> augmentation_cells(const RunConfig& base) {
    auto make = [&](const std::string& name, double drop, double mix) {
        RunConfig c = base;
        c.aug.drop_prob = drop;
        c.aug.mix_prob = mix;
        c.missing_modality_eval = true;
        return AblationCell{name, c};
    };
    return {make("aug_none", 0.0, 0.0), make("aug_drop", 0.5, 0.0),
            make("aug_drop_mix", 0.5, 0.5)};
}

inline std::vector<AblationCell> drop_sweep_cells(const RunConfig& base) {
    auto make = [&](const std::string& name, double drop) {
        RunConfig c = base;
        c.aug.drop_prob = drop;
        c.aug.mix_prob = 0.0;
        c.missing_modality_eval = true;
        return AblationCell{name, c};
    };
    return {make("drop_00", 0.0), make("drop_25", 0.25), make("drop_50", 0.5),
            make("drop_75", 0.75)};
}

inline std::filesystem::path cmd_ablate(const RunConfig& cfg, const std::string& mode) {
    namespace fs = std::filesystem;
    std::vector<AblationCell> cells;
    if (mode == "modality") cells = modality_stackup_cells(cfg);
    else if (mode == "augmentation") cells = augmentation_cells(cfg);
    else if (mode == "drop_sweep") cells = drop_sweep_cells(cfg);
    else throw std::invalid_argument("ablate: unknown mode " + mode +
                                     " (modality | augmentation | drop_sweep)");
    fs::path root = fs::path(cfg.out_dir) / ("ablate_" + mode);
    fs::create_directories(root);
    auto table = run_grid(cells, cfg.ablate_seeds, root / "cells");
    fs::path csv = root / "table.csv";
    std::ofstream os(csv);
    os << table.to_csv();
    return csv;
}

// ---------------------------------------------------------------------------
// breach-scan
// ---------------------------------------------------------------------------

struct BreachScanResult {
    double f1 = 0.0;
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    std::filesystem::path csv;
};

inline BreachScanResult cmd_breach_scan(const std::string& dataset_path,
                                        const std::string& out_dir,
                                        const SterilityPolicy& policy) {
    namespace fs = std::filesystem;
    synth::Dataset ds = synth::read_dataset(dataset_path);
    BreachScanResult res;
    fs::create_directories(out_dir);
    res.csv = fs::path(out_dir) / "breach_scan.csv";
    std::ofstream os(res.csv);
    os << "timepoint_id,predicted,label,offending\n";
    for (const auto& s : ds.samples) {
        auto r = detect_breach(s.gt_graph, policy);
        if (r.breach && s.breach) ++res.tp;
        else if (r.breach && !s.breach) ++res.fp;
        else if (!r.breach && s.breach) ++res.fn;
        else ++res.tn;
        std::string off;
        for (const auto& t : r.offending) {
            if (!off.empty()) off += " ";
            off += t.text(VocabSpec::default_or());
        }
        os << s.timepoint_id << "," << (r.breach ? 1 : 0) << "," << (s.breach ? 1 : 0) << ","
           << off << "\n";
    }
    double p = (res.tp + res.fp) > 0 ? double(res.tp) / double(res.tp + res.fp) : 0.0;
    double r = (res.tp + res.fn) > 0 ? double(res.tp) / double(res.tp + res.fn) : 0.0;
    res.f1 = f1_from_pr(p, r);
    return res;
}

// ---------------------------------------------------------------------------
// downstream tasks: scene-graph-only phase / next-action classifiers
// ---------------------------------------------------------------------------

inline std::vector<TaskSample> task_windows(const synth::Dataset& ds,
                                            const std::vector<size_t>& ids,
                                            const std::string& task, size_t w) {
    // windows end at each timepoint; early timepoints pad by repeating the
    // first graph of the scenario
    std::vector<TaskSample> out;
    for (size_t idx : ids) {
        const auto& s = ds.samples[idx];
        TaskSample ts;
        for (size_t k = 0; k < w; ++k) {
            int64_t t = static_cast<int64_t>(s.t_in_scenario) - static_cast<int64_t>(w - 1 - k);
            size_t pick = idx - static_cast<size_t>(s.t_in_scenario) +
                          static_cast<size_t>(std::max<int64_t>(0, t));
            ts.window.push_back(ds.samples[pick].gt_graph);
        }
        ts.label = task == "phase" ? s.phase : s.next_action;
        out.push_back(std::move(ts));
    }
    return out;
}

inline std::vector<std::string> task_labels(const std::string& task) {
    if (task == "phase") return synth::phase_labels();
    std::vector<std::string> labels = VocabSpec::default_or().predicates();
    labels.push_back("none");
    return labels;
}

// Same container family as model checkpoints: JSON header + named MAF2 arrays.
inline void save_task_classifier(const std::filesystem::path& path, const TaskClassifier& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write classifier: " + path.string());
    nlohmann::json enum_json = nlohmann::json::array();
    for (const auto& t : c.enumeration.triplets)
        enum_json.push_back({t.subject, t.object, t.predicate});
    nlohmann::json header = {{"task", c.task},       {"window", c.window},
                             {"labels", c.labels},   {"feature_dim", c.feature_dim},
                             {"hidden", c.hidden},   {"enumeration", enum_json}};
    std::string hs = header.dump();
    os.write("MMTC", 4);
    uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto write_vec = [&](const char* name, const std::vector<double>& v) {
        uint16_t len = static_cast<uint16_t>(std::strlen(name));
        os.write(reinterpret_cast<const char*>(&len), 2);
        os.write(name, len);
        rawio::write_f64_array(os, {static_cast<uint32_t>(v.size()), 1, 1}, v);
    };
    write_vec("w1", c.w1);
    write_vec("b1", c.b1);
    write_vec("w2", c.w2);
    write_vec("b2", c.b2);
}

inline TaskClassifier load_task_classifier(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open classifier: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MMTC", 4) != 0)
        throw std::runtime_error("bad classifier magic in " + path.string());
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    auto header = nlohmann::json::parse(hs);
    TaskClassifier c;
    c.task = header.at("task").get<std::string>();
    c.window = header.at("window").get<size_t>();
    c.labels = header.at("labels").get<std::vector<std::string>>();
    c.feature_dim = header.at("feature_dim").get<size_t>();
    c.hidden = header.at("hidden").get<size_t>();
    for (const auto& t : header.at("enumeration"))
        c.enumeration.triplets.push_back(
            {t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
    std::map<std::string, std::vector<double>*> slots = {
        {"w1", &c.w1}, {"b1", &c.b1}, {"w2", &c.w2}, {"b2", &c.b2}};
    for (int i = 0; i < 4; ++i) {
        auto [name, data] = checkpoint::read_named_array(is);
        auto it = slots.find(name);
        if (it == slots.end())
            throw std::runtime_error("classifier: unknown array " + name);
        *it->second = std::move(data);
    }
    if (!is) throw std::runtime_error("classifier: truncated payload");
    return c;
}

inline std::filesystem::path cmd_downstream_train(const RunConfig& cfg,
                                                  const std::string& task) {
    namespace fs = std::filesystem;
    synth::Dataset ds = synth::read_dataset(cfg.dataset_path);
    TaskTrainConfig tc;
    tc.seed = derived_seed(cfg.seed, "downstream." + task);
    auto samples = task_windows(ds, ds.train_ids, task, tc.window);
    auto classifier = train_task_classifier(samples, task, task_labels(task),
                                            VocabSpec::default_or(), tc);
    fs::create_directories(cfg.out_dir);
    fs::path path = fs::path(cfg.out_dir) / ("classifier_" + task + ".mmtc");
    save_task_classifier(path, classifier);
    return path;
}

struct DownstreamEvalResult {
    ClassReport report;
    std::filesystem::path csv;
};

// Windows over predicted graphs: generate per timepoint of the split's
// scenarios, then cut the same trailing windows the gt path uses.
inline std::vector<TaskSample> predicted_task_windows(const synth::Dataset& ds,
                                                      const std::vector<size_t>& ids,
                                                      Model& model, const RunConfig& cfg,
                                                      const std::string& task, size_t w) {
    std::map<size_t, SceneGraph> predicted;
    std::set<int> scenarios;
    for (size_t idx : ids) scenarios.insert(ds.samples[idx].scenario_id);
    for (const auto& info : ds.scenarios) {
        if (!scenarios.count(info.id)) continue;
        for (int t = 0; t < info.length; ++t) {
            size_t idx = static_cast<size_t>(info.start) + static_cast<size_t>(t);
            predicted[idx] = predict_graph(model, ds.samples[idx], cfg.modalities, "",
                                           cfg.fuse_views, cfg.max_gen_len);
        }
    }
    std::vector<TaskSample> out;
    for (size_t idx : ids) {
        const auto& s = ds.samples[idx];
        TaskSample ts;
        for (size_t k = 0; k < w; ++k) {
            int64_t t = static_cast<int64_t>(s.t_in_scenario) - static_cast<int64_t>(w - 1 - k);
            size_t pick = idx - static_cast<size_t>(s.t_in_scenario) +
                          static_cast<size_t>(std::max<int64_t>(0, t));
            ts.window.push_back(predicted.at(pick));
        }
        ts.label = task == "phase" ? s.phase : s.next_action;
        out.push_back(std::move(ts));
    }
    return out;
}

inline DownstreamEvalResult cmd_downstream_eval(const RunConfig& cfg,
                                                const std::string& classifier_path,
                                                const std::string& split = "test",
                                                const std::string& graphs_checkpoint = "") {
    namespace fs = std::filesystem;
    synth::Dataset ds = synth::read_dataset(cfg.dataset_path);
    TaskClassifier c = load_task_classifier(classifier_path);
    std::vector<TaskSample> samples;
    if (graphs_checkpoint.empty()) {
        samples = task_windows(ds, ds.split(split), c.task, c.window);
    } else {
        auto loaded = checkpoint::load_checkpoint(graphs_checkpoint, VocabSpec::default_or());
        samples = predicted_task_windows(ds, ds.split(split), loaded.model, cfg, c.task,
                                         c.window);
    }

    ConfusionTallies tallies;
    fs::create_directories(cfg.out_dir);
    DownstreamEvalResult res;
    res.csv = fs::path(cfg.out_dir) / ("downstream_" + c.task + "_" + split + ".csv");
    std::ofstream os(res.csv);
    os << "index,predicted,label\n";
    for (size_t i = 0; i < samples.size(); ++i) {
        std::string pred = predict_task(c, samples[i].window, VocabSpec::default_or());
        Tally& t = tallies.per_predicate[samples[i].label];
        if (pred == samples[i].label) {
            t.tp += 1;
        } else {
            t.fn += 1;
            tallies.per_predicate[pred].fp += 1;
        }
        os << i << "," << pred << "," << samples[i].label << "\n";
    }
    res.report = report(tallies, c.labels);
    return res;
}

// ---------------------------------------------------------------------------
// vpq over dataset mask directories
// ---------------------------------------------------------------------------

// One panoptic video per scenario: segment id = entity index + 1, class
// likewise (one instance per class in this generator).
inline PanopticVideo video_from_masks(const synth::Dataset& ds, int scenario_id,
                                      const std::filesystem::path& mask_root) {
    namespace fs = std::filesystem;
    PanopticVideo video;
    const auto& vocab = VocabSpec::default_or();
    for (const auto& info : ds.scenarios) {
        if (info.id != scenario_id) continue;
        for (int t = 0; t < info.length; ++t) {
            int64_t tid = info.start + t;
            fs::path dir = mask_root / synth::detail::sample_dir_name(tid) / "masks";
            PanopticFrame frame;
            frame.height = static_cast<int>(ds.config.image_h);
            frame.width = static_cast<int>(ds.config.image_w);
            frame.seg.assign(size_t(frame.height) * frame.width, 0);
            if (fs::exists(dir)) {
                std::vector<fs::path> files;
                for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
                std::sort(files.begin(), files.end());
                for (const auto& f : files) {
                    int eid = vocab.entity_index(f.stem().string());
                    if (eid < 0) continue;
                    BitMask m = rawio::load_bitmask(f);
                    int32_t seg_id = eid + 1;
                    frame.seg_class[seg_id] = eid + 1;
                    for (uint32_t y = 0; y < m.height; ++y)
                        for (uint32_t x = 0; x < m.width; ++x)
                            if (m.get(y, x)) frame.seg[size_t(y) * frame.width + x] = seg_id;
                }
            }
            video.frames.push_back(std::move(frame));
        }
    }
    if (video.frames.empty())
        throw std::runtime_error("vpq: scenario " + std::to_string(scenario_id) +
                                 " not found");
    return video;
}

struct VpqResult {
    std::map<int, double> by_window;  // k -> mean VPQ over scenarios
};

inline VpqResult cmd_vpq(const std::string& gt_dataset, const std::string& pred_mask_root,
                         const std::vector<int>& windows, const std::string& split = "test") {
    synth::Dataset ds = synth::read_dataset(gt_dataset);
    std::vector<int> scenario_ids;
    for (const auto& info : ds.scenarios)
        if (split == "all" || info.split == split) scenario_ids.push_back(info.id);
    if (scenario_ids.empty()) throw std::runtime_error("vpq: no scenarios in split " + split);

    VpqResult res;
    for (int k : windows) {
        double sum = 0;
        for (int sid : scenario_ids) {
            auto gt = video_from_masks(ds, sid, gt_dataset);
            auto pred = video_from_masks(ds, sid, pred_mask_root);
            sum += vpq(gt, pred, k);
        }
        res.by_window[k] = sum / double(scenario_ids.size());
    }
    return res;
}

}  // namespace mmsg::pipeline
