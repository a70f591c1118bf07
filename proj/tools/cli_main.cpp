// Command-line front end: stage-by-stage runs of the retrieval-attack
// pipeline against an output directory, plus `pipeline` to run everything.

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hashlat/core/kernels.hpp"
#include "hashlat/experiments.hpp"

namespace fs = std::filesystem;
using namespace hashlat;

namespace {

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig::defaults();
    return ExperimentConfig::from_file(path);
}

DatasetBundle need_dataset(const std::string& out) {
    fs::path p = fs::path(out) / "dataset" / "dataset.ckpt";
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run gen-data first)");
    return load_dataset(p.string());
}

HashModelParams need_hash_model(const std::string& out) {
    fs::path p = fs::path(out) / "models" / "hash_model.ckpt";
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run train-hash first)");
    return HashModelParams::load(p.string());
}

HANParams need_han(const std::string& out) {
    fs::path p = fs::path(out) / "models" / "han.ckpt";
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run train-align first)");
    return HANParams::load(p.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-guided latent targeted attack on deep hashing retrieval"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP thread count (0 = library default)");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file (INI)");
        sub->add_option("--out", out_dir, "artifact output directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen);
    auto* train_hash = app.add_subcommand("train-hash", "train the hash model and build the index");
    add_common(train_hash);
    auto* train_align = app.add_subcommand("train-align", "train the alignment network");
    add_common(train_align);
    auto* attack_cmd = app.add_subcommand("attack", "run attacks for all (or one) queries");
    add_common(attack_cmd);
    int64_t query_id = -1;
    std::string target_label_csv;
    attack_cmd->add_option("--query-id", query_id, "attack a single query id");
    attack_cmd->add_option("--target-label", target_label_csv,
                           "override target label (csv of 0/1, with --query-id)");
    auto* eval_cmd = app.add_subcommand("eval", "compute benign/adversarial t-MAP");
    add_common(eval_cmd);
    auto* ablate = app.add_subcommand("ablate", "kappa-combination ablation sweep");
    add_common(ablate);
    auto* report_cmd = app.add_subcommand("report", "assemble report, tables and plots");
    add_common(report_cmd);
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run the full pipeline end to end");
    add_common(pipeline_cmd);
    auto* defcfg = app.add_subcommand("default-config", "print the default config file");

    CLI11_PARSE(app, argc, argv);

    if (threads > 0) omp_set_num_threads(threads);

    try {
        if (defcfg->parsed()) {
            std::cout << ExperimentConfig::default_config_text();
            return 0;
        }
        ExperimentConfig cfg = load_config(config_path);
        fs::create_directories(out_dir);

        if (gen->parsed()) {
            DatasetBundle bundle = stage_gen_data(cfg, out_dir);
            std::cout << "database " << bundle.database.size() << " images, "
                      << bundle.queries.size() << " queries\n";
        } else if (train_hash->parsed()) {
            DatasetBundle bundle = need_dataset(out_dir);
            stage_train_hash(cfg, bundle, out_dir);
            std::cout << "hash model and index written under " << out_dir << "/models\n";
        } else if (train_align->parsed()) {
            DatasetBundle bundle = need_dataset(out_dir);
            HashModelParams model = need_hash_model(out_dir);
            CaptionSet captions = stage_captions(cfg, bundle, out_dir);
            stage_train_align(cfg, bundle, model, captions, out_dir);
            std::cout << "alignment network written under " << out_dir << "/models\n";
        } else if (attack_cmd->parsed()) {
            DatasetBundle bundle = need_dataset(out_dir);
            HashModelParams model = need_hash_model(out_dir);
            HANParams han = need_han(out_dir);
            CaptionSet captions = stage_captions(cfg, bundle, out_dir);
            auto [backend, pooler] = stage_fit_backend(cfg, bundle, captions, out_dir);
            if (query_id >= 0) {
                int64_t idx = -1;
                for (size_t i = 0; i < bundle.queries.size(); ++i)
                    if (bundle.queries[i].id == query_id) idx = static_cast<int64_t>(i);
                if (idx < 0) throw InvalidArgumentError("unknown query id");
                if (!target_label_csv.empty()) {
                    MultiLabelVector label;
                    std::istringstream ls(target_label_csv);
                    std::string tok;
                    while (std::getline(ls, tok, ',')) label.bits.push_back(tok == "1" ? 1 : 0);
                    if (label.num_classes() != bundle.num_classes || !label.any())
                        throw InvalidArgumentError("bad --target-label");
                    bundle.targets[static_cast<size_t>(idx)].second = label;
                    // The guide text comes from a fresh render of the target class.
                    ExperimentConfig tcfg = cfg;
                    DatasetBundle tmp = bundle;
                    captions = stage_captions(tcfg, tmp, "");
                }
                HanGuideMapper mapper(han);
                AttackResult result = run_attack(
                    bundle.queries[static_cast<size_t>(idx)],
                    captions.queries[static_cast<size_t>(idx)],
                    captions.targets[static_cast<size_t>(idx)], mapper, model, backend, pooler,
                    cfg.attack);
                std::string dir =
                    (fs::path(out_dir) / "attacks" / ("query_" + std::to_string(query_id)))
                        .string();
                save_attack_result(result, dir);
                std::cout << "query " << query_id << ": hamming to target " << std::fixed
                          << result.eval_hamming_to_target << " (benign "
                          << result.benign_hamming_to_target << ")\n";
            } else {
                HanGuideMapper mapper(han);
                stage_attack(cfg, bundle, captions, mapper, model, backend, pooler, out_dir);
                std::cout << "attacked " << bundle.queries.size() << " queries\n";
            }
        } else if (eval_cmd->parsed()) {
            DatasetBundle bundle = need_dataset(out_dir);
            HashModelParams model = need_hash_model(out_dir);
            RetrievalIndex index =
                RetrievalIndex::load((fs::path(out_dir) / "models" / "index.tsv").string());
            std::vector<AttackResult> attacks;
            for (const auto& q : bundle.queries) {
                std::string dir =
                    (fs::path(out_dir) / "attacks" / ("query_" + std::to_string(q.id))).string();
                attacks.push_back(load_attack_result_arrays(dir));
            }
            EvalOutcome outcome = stage_eval(cfg, bundle, model, index, attacks, out_dir);
            std::cout << "t-MAP benign " << outcome.benign.t_map << ", adversarial "
                      << outcome.adversarial.t_map << ", chance " << outcome.chance_tmap << "\n";
        } else if (ablate->parsed()) {
            std::vector<std::array<double, 3>> combos = {
                {cfg.attack.kappa1, 0, 0},
                {0, cfg.attack.kappa2, 0},
                {0, 0, cfg.attack.kappa3},
                {cfg.attack.kappa1, cfg.attack.kappa2, 0},
                {0, cfg.attack.kappa2, cfg.attack.kappa3},
                {cfg.attack.kappa1, 0, cfg.attack.kappa3},
                {cfg.attack.kappa1, cfg.attack.kappa2, cfg.attack.kappa3},
            };
            AblationTable table = ablation_sweep(cfg, combos, out_dir);
            std::cout << ablation_table_text(table);
        } else if (report_cmd->parsed()) {
            // Assemble report, table and plots from stage artifacts on disk.
            DatasetBundle bundle = need_dataset(out_dir);
            HashModelParams model = need_hash_model(out_dir);
            RetrievalIndex index =
                RetrievalIndex::load((fs::path(out_dir) / "models" / "index.tsv").string());
            std::vector<AttackResult> attacks;
            for (const auto& q : bundle.queries) {
                std::string dir =
                    (fs::path(out_dir) / "attacks" / ("query_" + std::to_string(q.id))).string();
                attacks.push_back(load_attack_result_arrays(dir));
            }
            EvalOutcome outcome = stage_eval(cfg, bundle, model, index, attacks, out_dir);
            RunReport report = assemble_report(cfg, bundle, attacks, outcome);
            write_report_artifacts(report, bundle, attacks, out_dir);
            std::cout << run_report_text(report);
        } else if (pipeline_cmd->parsed()) {
            RunReport report = run_pipeline(cfg, out_dir);
            std::cout << run_report_text(report);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
