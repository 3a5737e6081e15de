#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsg/array.hpp"
#include "mmsg/synth.hpp"

namespace mmsg::synth {

constexpr int kDatasetSchemaVersion = 1;

struct ScenarioInfo {
    int id = 0;
    int64_t start = 0;  // first global timepoint id
    int length = 0;
    std::string split;  // train / val / test
    std::string percussion_variant;
    std::string calib_variant;
};

struct Dataset {
    DatasetConfig config;
    std::vector<ScenarioInfo> scenarios;
    std::vector<TimepointSample> samples;
    std::vector<size_t> train_ids, val_ids, test_ids;

    const std::vector<size_t>& split(const std::string& name) const {
        if (name == "train") return train_ids;
        if (name == "val") return val_ids;
        if (name == "test") return test_ids;
        throw std::invalid_argument("unknown split: " + name);
    }
};

namespace detail {

// Scenario-level split, stratified by the exclusive-pair variants: scenarios
// are shuffled within each (percussion, calibration) stratum and interleaved
// round-robin. Test and val take the front of the interleave (one scenario
// per stratum per round), so every split of three or more scenarios covers
// both variants of both pairs even with unequal strata. No scenario spans
// two splits.
inline std::vector<std::string> assign_splits(const std::vector<ScenarioInfo>& scenarios,
                                              const DatasetConfig& config) {
    size_t n = scenarios.size();
    Rng rng = Rng(config.seed).derive("splits");

    std::map<std::pair<std::string, std::string>, std::vector<size_t>> strata;
    for (size_t i = 0; i < n; ++i)
        strata[{scenarios[i].percussion_variant, scenarios[i].calib_variant}].push_back(i);
    std::vector<std::vector<size_t>> groups;
    for (auto& [key, ids] : strata) {
        rng.shuffle(ids);
        groups.push_back(ids);
    }
    std::vector<size_t> order;
    for (size_t round = 0; order.size() < n; ++round)
        for (auto& g : groups)
            if (round < g.size()) order.push_back(g[round]);

    size_t n_train = std::max<size_t>(1, static_cast<size_t>(std::floor(config.split_train * n)));
    size_t n_val = n >= 3 ? std::max<size_t>(1, static_cast<size_t>(std::floor(config.split_val * n)))
                          : 0;
    if (n_train + n_val >= n) {
        n_train = n > 2 ? n - 2 : n - (n > 1 ? 1 : 0);
        n_val = n > 2 ? 1 : 0;
    }
    size_t n_test = n - n_train - n_val;
    std::vector<std::string> split(n);
    for (size_t rank = 0; rank < n; ++rank) {
        size_t i = order[rank];
        split[i] = rank < n_test ? "test" : (rank < n_test + n_val ? "val" : "train");
    }
    return split;
}

inline std::string sample_dir_name(int64_t id) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(id));
    return buf;
}

}  // namespace detail

// Generates scripts, renders every timepoint and assigns scenario-level splits.
inline Dataset generate_dataset(const DatasetConfig& config) {
    config.validate();
    Dataset ds;
    ds.config = config;
    int64_t next_id = 0;
    std::vector<ScenarioScript> scripts;
    for (int i = 0; i < config.n_scenarios; ++i) {
        ScenarioScript script = generate_scenario(config, i);
        ScenarioInfo info;
        info.id = i;
        info.start = next_id;
        info.length = script.length;
        info.percussion_variant = script.percussion_variant;
        info.calib_variant = script.calib_variant;
        ds.scenarios.push_back(info);
        scripts.push_back(std::move(script));
        next_id += ds.scenarios.back().length;
    }
    auto splits = detail::assign_splits(ds.scenarios, config);
    for (size_t i = 0; i < ds.scenarios.size(); ++i) ds.scenarios[i].split = splits[i];

    for (size_t i = 0; i < scripts.size(); ++i) {
        for (int t = 0; t < scripts[i].length; ++t) {
            TimepointSample sample = render_timepoint(scripts[i], t, config);
            sample.timepoint_id = ds.scenarios[i].start + t;
            sample.gt_graph.timepoint_id = sample.timepoint_id;
            size_t idx = ds.samples.size();
            if (ds.scenarios[i].split == "train")
                ds.train_ids.push_back(idx);
            else if (ds.scenarios[i].split == "val")
                ds.val_ids.push_back(idx);
            else
                ds.test_ids.push_back(idx);
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: manifest.json + one NNNNNN/ directory per timepoint with
// graph.json, labels.json, audio.f32, pc.f32, img_<view>.npyish,
// masks/<entity>.bits, robot_log.json, tracker.json, transcript.json.
// ---------------------------------------------------------------------------

inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);

    nlohmann::json scen = nlohmann::json::array();
    for (const auto& s : ds.scenarios)
        scen.push_back({{"id", s.id},
                        {"start", s.start},
                        {"length", s.length},
                        {"split", s.split},
                        {"percussion_variant", s.percussion_variant},
                        {"calib_variant", s.calib_variant}});
    nlohmann::json manifest = {
        {"schema_version", kDatasetSchemaVersion},
        {"config", ds.config.to_json()},
        {"n_samples", ds.samples.size()},
        {"scenarios", scen},
        {"splits",
         {{"train", ds.train_ids}, {"val", ds.val_ids}, {"test", ds.test_ids}}}};
    {
        std::ofstream os(root / "manifest.json");
        if (!os) throw std::runtime_error("cannot write manifest: " + (root / "manifest.json").string());
        os << manifest.dump(2) << "\n";
    }
    {
        std::ofstream os(root / "vocab.json");
        os << VocabSpec::default_or().to_json().dump(2) << "\n";
    }

    for (const auto& sample : ds.samples) {
        fs::path dir = root / detail::sample_dir_name(sample.timepoint_id);
        fs::create_directories(dir / "masks");
        {
            std::ofstream os(dir / "graph.json");
            os << graph_to_json(sample.gt_graph).dump(2) << "\n";
        }
        {
            nlohmann::json labels = {{"phase", sample.phase},
                                     {"next_action", sample.next_action},
                                     {"breach", sample.breach},
                                     {"scenario_id", sample.scenario_id},
                                     {"t_in_scenario", sample.t_in_scenario}};
            std::ofstream os(dir / "labels.json");
            os << labels.dump(2) << "\n";
        }
        rawio::save_f32_raw(dir / "audio.f32", sample.modalities.audio);
        rawio::save_f32_raw(dir / "pc.f32", sample.modalities.pointcloud.data);
        for (size_t v = 0; v < sample.modalities.room_images.size(); ++v)
            rawio::save_f32_array(dir / ("img_room" + std::to_string(v) + ".npyish"),
                                  sample.modalities.room_images[v]);
        for (size_t v = 0; v < sample.modalities.detail_images.size(); ++v)
            rawio::save_f32_array(dir / ("img_detail" + std::to_string(v) + ".npyish"),
                                  sample.modalities.detail_images[v]);
        for (const auto& [name, mask] : sample.modalities.masks)
            rawio::save_bitmask(dir / "masks" / (name + ".bits"), mask);
        {
            nlohmann::json rl = {{"phase", sample.modalities.robot_log.phase},
                                 {"action", sample.modalities.robot_log.action}};
            std::ofstream os(dir / "robot_log.json");
            os << rl.dump(2) << "\n";
        }
        {
            nlohmann::json tr = nlohmann::json::array();
            for (const auto& rec : sample.modalities.tracker)
                tr.push_back({{"tool", rec.tool},
                              {"translation", rec.translation},
                              {"rotation", rec.rotation}});
            std::ofstream os(dir / "tracker.json");
            os << tr.dump(2) << "\n";
        }
        {
            nlohmann::json ts = nlohmann::json::array();
            for (const auto& line : sample.modalities.transcript)
                ts.push_back({{"t", line.timestamp}, {"text", line.text}});
            std::ofstream os(dir / "transcript.json");
            os << ts.dump(2) << "\n";
        }
    }
}

inline nlohmann::json load_json_file(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot open: " + p.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("schema error in " + p.string() + ": " + e.what());
    }
    return j;
}

inline Dataset read_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::path mpath = root / "manifest.json";
    nlohmann::json manifest = load_json_file(mpath);
    if (!manifest.contains("schema_version") ||
        manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
        throw std::runtime_error("schema error in " + mpath.string() +
                                 ": unsupported schema_version");

    Dataset ds;
    ds.config = DatasetConfig::from_json(manifest.at("config"));
    if (fs::exists(root / "vocab.json"))
        (void)VocabSpec::from_json(load_json_file(root / "vocab.json"));  // version check
    for (const auto& s : manifest.at("scenarios")) {
        ScenarioInfo info;
        info.id = s.at("id").get<int>();
        info.start = s.at("start").get<int64_t>();
        info.length = s.at("length").get<int>();
        info.split = s.at("split").get<std::string>();
        info.percussion_variant = s.value("percussion_variant", "");
        info.calib_variant = s.value("calib_variant", "");
        ds.scenarios.push_back(info);
    }
    ds.train_ids = manifest.at("splits").at("train").get<std::vector<size_t>>();
    ds.val_ids = manifest.at("splits").at("val").get<std::vector<size_t>>();
    ds.test_ids = manifest.at("splits").at("test").get<std::vector<size_t>>();

    size_t n = manifest.at("n_samples").get<size_t>();
    ds.samples.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        fs::path dir = root / detail::sample_dir_name(static_cast<int64_t>(i));
        TimepointSample sample;
        sample.timepoint_id = static_cast<int64_t>(i);
        sample.gt_graph = graph_from_json(load_json_file(dir / "graph.json"));
        auto labels = load_json_file(dir / "labels.json");
        sample.phase = labels.at("phase").get<std::string>();
        sample.next_action = labels.at("next_action").get<std::string>();
        sample.breach = labels.at("breach").get<bool>();
        sample.scenario_id = labels.at("scenario_id").get<int>();
        sample.t_in_scenario = labels.at("t_in_scenario").get<int>();

        sample.modalities.audio = rawio::load_f32_raw(dir / "audio.f32");
        auto pc_raw = rawio::load_f32_raw(dir / "pc.f32");
        if (pc_raw.size() % 6 != 0)
            throw std::runtime_error("schema error in " + (dir / "pc.f32").string() +
                                     ": size not divisible by 6");
        sample.modalities.pointcloud = ArrayF32(static_cast<uint32_t>(pc_raw.size() / 6), 6);
        sample.modalities.pointcloud.data = std::move(pc_raw);

        for (int v = 0;; ++v) {
            fs::path p = dir / ("img_room" + std::to_string(v) + ".npyish");
            if (!fs::exists(p)) break;
            sample.modalities.room_images.push_back(rawio::load_f32_array(p));
        }
        for (int v = 0;; ++v) {
            fs::path p = dir / ("img_detail" + std::to_string(v) + ".npyish");
            if (!fs::exists(p)) break;
            sample.modalities.detail_images.push_back(rawio::load_f32_array(p));
        }
        if (fs::exists(dir / "masks")) {
            std::vector<fs::path> mask_files;
            for (const auto& entry : fs::directory_iterator(dir / "masks"))
                mask_files.push_back(entry.path());
            std::sort(mask_files.begin(), mask_files.end());
            for (const auto& p : mask_files)
                sample.modalities.masks.emplace_back(p.stem().string(),
                                                     rawio::load_bitmask(p));
        }
        auto rl = load_json_file(dir / "robot_log.json");
        sample.modalities.robot_log.phase = rl.at("phase").get<std::string>();
        sample.modalities.robot_log.action = rl.at("action").get<std::string>();
        for (const auto& rec : load_json_file(dir / "tracker.json")) {
            TrackerRecord r;
            r.tool = rec.at("tool").get<std::string>();
            auto tr = rec.at("translation");
            auto ro = rec.at("rotation");
            for (int k = 0; k < 3; ++k) r.translation[k] = tr[k].get<double>();
            for (int k = 0; k < 4; ++k) r.rotation[k] = ro[k].get<double>();
            sample.modalities.tracker.push_back(r);
        }
        for (const auto& line : load_json_file(dir / "transcript.json"))
            sample.modalities.transcript.push_back(
                {line.at("t").get<double>(), line.at("text").get<std::string>()});

        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

}  // namespace mmsg::synth
