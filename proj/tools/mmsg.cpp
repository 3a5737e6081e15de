// mmsg: synthetic OR scene-graph pipeline driver.
//
// Verbs: gen-data, train, evaluate, ablate, breach-scan, downstream-train,
// downstream-eval, vpq. Exit code 0 on success; on failure a one-line JSON
// error object goes to stderr and the exit code is nonzero.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmsg/pipeline.hpp"

using namespace mmsg;

namespace {

pipeline::RunConfig load_config(const std::string& config_path, const std::string& seed_str,
                                const std::string& out, const std::string& dataset) {
    pipeline::RunConfig cfg;
    if (!config_path.empty()) cfg = pipeline::RunConfig::load(config_path);
    if (!seed_str.empty()) cfg.seed = std::stoull(seed_str);
    if (!out.empty()) cfg.out_dir = out;
    if (!dataset.empty()) cfg.dataset_path = dataset;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal OR scene-graph pipeline"};
    app.require_subcommand(1);

    std::string config_path, seed_str, out_dir, dataset, checkpoint, resume;
    std::string split_name = "test";
    std::string task = "phase", mode = "modality", classifier, pred_root, windows_csv = "0,4,8";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value run config file");
        sub->add_option("--seed", seed_str, "override run.seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen);
    gen->add_option("--dataset", dataset, "dataset output directory (default <out>/dataset)");

    auto* train = app.add_subcommand("train", "train the scene-graph model");
    add_common(train);
    train->add_option("--dataset", dataset, "dataset directory");
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--dataset", dataset, "dataset directory");
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--split", split_name, "train | val | test");

    auto* ablate = app.add_subcommand("ablate", "run a seeded ablation grid");
    add_common(ablate);
    ablate->add_option("--dataset", dataset, "dataset directory");
    ablate->add_option("--mode", mode, "modality | augmentation | drop_sweep");

    auto* breach = app.add_subcommand("breach-scan", "rule-based sterility breach scan");
    add_common(breach);
    breach->add_option("--dataset", dataset, "dataset directory")->required();
    std::string policy_path;
    breach->add_option("--policy", policy_path, "sterility policy JSON (default built-in)");

    auto* dtrain = app.add_subcommand("downstream-train", "train a scene-graph-only task head");
    add_common(dtrain);
    dtrain->add_option("--dataset", dataset, "dataset directory");
    dtrain->add_option("--task", task, "phase | next_action");

    auto* deval = app.add_subcommand("downstream-eval", "evaluate a task head");
    add_common(deval);
    deval->add_option("--dataset", dataset, "dataset directory");
    deval->add_option("--classifier", classifier, "classifier file")->required();
    deval->add_option("--split", split_name, "train | val | test");
    std::string graphs_checkpoint;
    deval->add_option("--from-checkpoint", graphs_checkpoint,
                      "score windows of predicted graphs from this model checkpoint");

    auto* vpqc = app.add_subcommand("vpq", "video panoptic quality over mask directories");
    add_common(vpqc);
    vpqc->add_option("--gt", dataset, "ground-truth dataset directory")->required();
    vpqc->add_option("--pred", pred_root, "prediction mask root")->required();
    vpqc->add_option("--windows", windows_csv, "comma-separated window sizes");
    vpqc->add_option("--split", split_name, "train | val | test | all");

    std::string verb;
    try {
        app.parse(argc, argv);
        verb = app.get_subcommands().front()->get_name();
        pipeline::RunConfig cfg = load_config(config_path, seed_str, out_dir, dataset);
        if (cfg.out_dir.empty()) cfg.out_dir = "out";

        if (gen->parsed()) {
            auto path = pipeline::cmd_gen_data(cfg);
            std::cout << "dataset written to " << path.string() << "\n";
        } else if (train->parsed()) {
            auto res = pipeline::cmd_train(cfg, resume);
            std::cout << "checkpoint: " << res.checkpoint.string() << "\n"
                      << "manifest:   " << res.manifest.string() << "\n";
            if (!res.loss_curve.empty())
                std::printf("final loss: %.4f over %zu steps\n", res.loss_curve.back(),
                            res.loss_curve.size());
        } else if (eval->parsed()) {
            auto res = pipeline::cmd_evaluate(cfg, checkpoint, split_name);
            std::printf("macro F1 %.4f | weighted F1 %.4f | tagged-pair F1 %.4f\n",
                        res.report.macro_f1, res.report.weighted_f1, res.tagged_macro_f1);
            std::cout << "report: " << res.report_json.string() << "\n";
        } else if (ablate->parsed()) {
            auto csv = pipeline::cmd_ablate(cfg, mode);
            std::cout << "ablation table: " << csv.string() << "\n";
        } else if (breach->parsed()) {
            SterilityPolicy policy = SterilityPolicy::default_or();
            if (!policy_path.empty())
                policy = SterilityPolicy::from_json(synth::load_json_file(policy_path));
            auto res = pipeline::cmd_breach_scan(cfg.dataset_path, cfg.out_dir, policy);
            std::printf("breach F1 %.4f (tp %lld fp %lld fn %lld tn %lld)\n", res.f1, res.tp,
                        res.fp, res.fn, res.tn);
            std::cout << "per-timepoint csv: " << res.csv.string() << "\n";
        } else if (dtrain->parsed()) {
            auto path = pipeline::cmd_downstream_train(cfg, task);
            std::cout << "classifier: " << path.string() << "\n";
        } else if (deval->parsed()) {
            auto res = pipeline::cmd_downstream_eval(cfg, classifier, split_name, graphs_checkpoint);
            std::printf("task macro F1 %.4f\n", res.report.macro_f1);
            std::cout << "predictions: " << res.csv.string() << "\n";
        } else if (vpqc->parsed()) {
            std::vector<int> windows;
            for (const auto& w : split(windows_csv, ','))
                if (!trim(w).empty()) windows.push_back(std::stoi(trim(w)));
            auto res = pipeline::cmd_vpq(cfg.dataset_path, pred_root, windows, split_name);
            for (const auto& [k, v] : res.by_window)
                std::printf("VPQ@%d %.4f\n", k, v);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        nlohmann::json err = {{"error", e.what()}, {"verb", verb}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
