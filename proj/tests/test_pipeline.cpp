#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mmsg/pipeline.hpp"

using namespace mmsg;
using namespace mmsg::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig smoke_config(const fs::path& root) {
    RunConfig cfg;
    cfg.data.n_scenarios = 3;
    cfg.data.min_timepoints = 12;
    cfg.data.max_timepoints = 14;
    cfg.data.image_h = 16;
    cfg.data.image_w = 16;
    cfg.data.n_points = 32;
    cfg.data.sample_rate = 400;
    cfg.data.n_room_views = 2;
    cfg.data.n_detail_views = 1;
    cfg.data.seed = 5;

    cfg.model.d_model = 12;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 24;
    cfg.model.max_seq_len = 320;
    cfg.model.n_image_tokens = 4;
    cfg.model.enc.patch = 8;
    cfg.model.enc.img_enc_layers = 1;
    cfg.model.enc.img_enc_heads = 2;
    cfg.model.enc.pooler_layers = 1;
    cfg.model.enc.pooler_heads = 2;
    cfg.model.enc.pc_hidden = 8;
    cfg.model.enc.audio_frame = 64;
    cfg.model.enc.audio_hop = 16;
    cfg.model.enc.audio_bins = 6;
    cfg.model.enc.audio_channels = 8;
    cfg.model.enc.mask_channels1 = 3;
    cfg.model.enc.mask_channels2 = 5;
    cfg.model.enc.max_masks = 4;

    cfg.sched.steps = 4;
    cfg.sched.batch = 2;
    cfg.sched.lr = 1e-3;
    cfg.sched.warmup = 1;

    cfg.seed = 11;
    cfg.max_gen_len = 60;
    cfg.dataset_path = (root / "dataset").string();
    cfg.out_dir = (root / "run").string();
    return cfg;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// map of relative path -> bytes for an entire tree
std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = read_bytes(e.path());
    return out;
}

}  // namespace

TEST_CASE("run config: file round-trip, hash stability, unknown keys rejected") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_cfg";
    fs::remove_all(root);
    fs::create_directories(root);

    RunConfig cfg = smoke_config(root);
    fs::path p = root / "run.cfg";
    cfg.save(p);
    RunConfig cfg2 = RunConfig::load(p);
    CHECK(cfg2.canonical() == cfg.canonical());
    CHECK(cfg2.hash() == cfg.hash());

    RunConfig cfg3 = cfg;
    cfg3.seed = 999;
    CHECK(cfg3.hash() != cfg.hash());

    {
        std::ofstream os(p, std::ios::app);
        os << "bogus.key=1\n";
    }
    CHECK_THROWS(RunConfig::load(p));
    fs::remove_all(root);
}

TEST_CASE("end-to-end smoke: gen-data, train, evaluate, deterministic re-run") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);

    auto ds_path = cmd_gen_data(cfg);
    CHECK(fs::exists(ds_path / "manifest.json"));
    auto manifest = synth::load_json_file(ds_path / "manifest.json");
    CHECK(manifest.at("splits").contains("train"));
    CHECK(manifest.at("splits").contains("val"));
    CHECK(manifest.at("splits").contains("test"));

    auto t = cmd_train(cfg);
    CHECK(fs::exists(t.checkpoint));
    CHECK(fs::exists(t.manifest));
    CHECK(t.loss_curve.size() == cfg.sched.steps);

    auto e = cmd_evaluate(cfg, t.checkpoint.string(), "test");
    CHECK(fs::exists(e.report_csv));
    CHECK(fs::exists(e.report_json));
    CHECK(e.report.macro_f1 >= 0.0);
    CHECK(e.report.macro_f1 <= 1.0);

    // provenance chain: report -> checkpoint -> dataset -> generator config
    auto rj = synth::load_json_file(e.report_json);
    CHECK(rj.at("provenance").at("checkpoint_hash").get<std::string>() ==
          file_hash(t.checkpoint));
    CHECK(rj.at("provenance").at("dataset_manifest_hash").get<std::string>() ==
          file_hash(ds_path / "manifest.json"));
    auto loaded = checkpoint::load_checkpoint(t.checkpoint, VocabSpec::default_or());
    CHECK(loaded.meta.dataset_ref == file_hash(ds_path / "manifest.json"));
    CHECK(manifest.at("config").at("seed").get<uint64_t>() == cfg.data.seed);

    // byte-identical artifacts on re-run with identical config and seed
    auto ds_snap = snapshot_tree(ds_path);
    auto ckpt_bytes = read_bytes(t.checkpoint);
    auto report_bytes = read_bytes(e.report_json);
    auto csv_bytes = read_bytes(e.report_csv);

    (void)cmd_gen_data(cfg);
    auto t2 = cmd_train(cfg);
    auto e2 = cmd_evaluate(cfg, t2.checkpoint.string(), "test");
    CHECK(snapshot_tree(ds_path) == ds_snap);
    CHECK(read_bytes(t2.checkpoint) == ckpt_bytes);
    CHECK(read_bytes(e2.report_json) == report_bytes);
    CHECK(read_bytes(e2.report_csv) == csv_bytes);

    // evaluating a missing split errors
    RunConfig bad = cfg;
    CHECK_THROWS(cmd_evaluate(bad, t.checkpoint.string(), "nonexistent"));

    fs::remove_all(root);
}

TEST_CASE("resume continues the step count") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_resume";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.sched.steps = 3;
    (void)cmd_gen_data(cfg);
    auto t1 = cmd_train(cfg);
    auto loaded1 = checkpoint::load_checkpoint(t1.checkpoint, VocabSpec::default_or());
    CHECK(loaded1.meta.step == 3);

    RunConfig more = cfg;
    more.sched.steps = 5;
    more.out_dir = (root / "run2").string();
    auto t2 = cmd_train(more, t1.checkpoint.string());
    auto loaded2 = checkpoint::load_checkpoint(t2.checkpoint, VocabSpec::default_or());
    CHECK(loaded2.meta.step == 5);
    fs::remove_all(root);
}

TEST_CASE("breach scan: rule matches generator labels exactly") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_breach";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.data.breach_rate = 1.0;
    cfg.data.n_scenarios = 4;
    (void)cmd_gen_data(cfg);
    auto res = cmd_breach_scan(cfg.dataset_path, cfg.out_dir, SterilityPolicy::default_or());
    CHECK(res.fp == 0);
    CHECK(res.fn == 0);
    CHECK(res.tp > 0);
    CHECK(res.f1 == 1.0);
    CHECK(fs::exists(res.csv));
    fs::remove_all(root);
}

TEST_CASE("downstream train + eval round trip") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_downstream";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.data.n_scenarios = 4;
    (void)cmd_gen_data(cfg);

    for (const std::string task : {"phase", "next_action"}) {
        auto cpath = cmd_downstream_train(cfg, task);
        CHECK(fs::exists(cpath));
        auto res = cmd_downstream_eval(cfg, cpath.string(), "train");
        CHECK(res.report.macro_f1 >= 0.0);
        CHECK(fs::exists(res.csv));
        // phase prediction on training scenarios should be strong by construction
        if (task == "phase") CHECK(res.report.weighted_f1 > 0.5);
    }
    fs::remove_all(root);
}

TEST_CASE("memory curriculum: two-stage training and own-prediction evaluation") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_memory";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.modalities.memory = true;
    cfg.sched.steps = 6;
    cfg.sched.stage2_frac = 0.5;
    (void)cmd_gen_data(cfg);

    auto t = cmd_train(cfg);
    auto manifest = synth::load_json_file(t.manifest);
    CHECK(manifest.at("stage2_start").get<uint64_t>() == 3);  // memory kicks in mid-run
    auto loaded = checkpoint::load_checkpoint(t.checkpoint, VocabSpec::default_or());
    CHECK(loaded.meta.stage == 2);

    auto e = cmd_evaluate(cfg, t.checkpoint.string(), "test");
    CHECK(e.report.macro_f1 >= 0.0);

    // identical seeds: identical artifacts even with the memory stage
    auto t2 = cmd_train(cfg);
    CHECK(read_bytes(t2.checkpoint) == read_bytes(t.checkpoint));
    fs::remove_all(root);
}

TEST_CASE("ablate command writes a per-cell table with aggregates") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_ablate";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.sched.steps = 2;
    cfg.ablate_seeds = {5};
    (void)cmd_gen_data(cfg);
    auto csv_path = cmd_ablate(cfg, "augmentation");
    REQUIRE(fs::exists(csv_path));
    auto csv = read_bytes(csv_path);
    CHECK(csv.find("aug_none,") != std::string::npos);
    CHECK(csv.find("aug_drop,") != std::string::npos);
    CHECK(csv.find("aug_drop_mix,") != std::string::npos);
    CHECK(csv.find("mean_std") != std::string::npos);
    CHECK_THROWS(cmd_ablate(cfg, "bogus_mode"));
    fs::remove_all(root);
}

TEST_CASE("downstream eval over predicted graphs") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_downpred";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.sched.steps = 2;
    (void)cmd_gen_data(cfg);
    auto t = cmd_train(cfg);
    auto cpath = cmd_downstream_train(cfg, "phase");
    auto res = cmd_downstream_eval(cfg, cpath.string(), "test", t.checkpoint.string());
    CHECK(res.report.macro_f1 >= 0.0);
    CHECK(fs::exists(res.csv));
    fs::remove_all(root);
}

TEST_CASE("vpq command: gt vs itself is 1, empty predictions are 0") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_vpq";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    auto ds_path = cmd_gen_data(cfg);

    auto self = cmd_vpq(cfg.dataset_path, cfg.dataset_path, {0, 1, 2}, "all");
    for (const auto& [k, v] : self.by_window) CHECK(v == doctest::Approx(1.0));

    // empty prediction tree: all-void frames
    fs::path empty_root = root / "empty_pred";
    auto ds = synth::read_dataset(cfg.dataset_path);
    for (const auto& s : ds.samples)
        fs::create_directories(empty_root / synth::detail::sample_dir_name(s.timepoint_id) /
                               "masks");
    auto zero = cmd_vpq(cfg.dataset_path, empty_root.string(), {0}, "all");
    CHECK(zero.by_window.at(0) == doctest::Approx(0.0));
    fs::remove_all(root);
}

TEST_CASE("ablation cell caching reuses finished runs") {
    fs::path root = fs::temp_directory_path() / "mmsg_pipe_cells";
    fs::remove_all(root);
    fs::create_directories(root);
    RunConfig cfg = smoke_config(root);
    cfg.sched.steps = 2;
    (void)cmd_gen_data(cfg);

    AblationCell cell{"smoke_cell", cfg};
    auto r1 = run_cell_cached(cell, 7, root / "cells");
    fs::path report = root / "cells" / "smoke_cell_s7" / "report_test.json";
    REQUIRE(fs::exists(report));
    auto mtime = fs::last_write_time(report);
    auto r2 = run_cell_cached(cell, 7, root / "cells");
    CHECK(fs::last_write_time(report) == mtime);  // untouched: cache hit
    CHECK(r1.macro_f1 == r2.macro_f1);
    fs::remove_all(root);
}
