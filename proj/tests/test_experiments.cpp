#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hashlat/experiments.hpp"

using namespace hashlat;
namespace fs = std::filesystem;

namespace {

ExperimentConfig micro_config() {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.dataset.num_classes = 4;
    cfg.dataset.images_per_class = 8;
    cfg.dataset.image_size = 16;
    cfg.dataset.num_queries = 4;
    cfg.dataset.multi_label_prob = 0.2;
    cfg.hash_model.k = 8;
    cfg.hash_model.epochs = 40;
    cfg.hash_model.batch_size = 16;
    cfg.hash_model.learning_rate = 5e-3;
    cfg.alignment.epochs = 40;
    cfg.alignment.learning_rate = 3e-3;
    cfg.backend.total_timesteps = 10;
    cfg.attack.steps = 8;
    cfg.evaluation.top_k = 8;
    cfg.evaluation.chance_shuffles = 4;
    cfg.validate();
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing") {
    SUBCASE("default text round-trips through the parser") {
        std::string text = ExperimentConfig::default_config_text();
        ExperimentConfig cfg = ExperimentConfig::from_text(text);
        CHECK(cfg.dataset.num_classes == 8);
        CHECK(cfg.hash_model.k == 16);
        CHECK(cfg.attack.kappa1 == 15.0);
        CHECK(cfg.attack.kappa3 == 8.0);
        CHECK(cfg.evaluation.top_k == 50);
        CHECK(cfg.echo == text);
    }
    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(ExperimentConfig::from_text("[dataset]\nnum_classes = 4\nbogus = 1\n"),
                        ConfigError);
        CHECK_THROWS_AS(ExperimentConfig::from_text("[nonsense]\nx = 1\n"), ConfigError);
    }
    SUBCASE("malformed values are rejected") {
        CHECK_THROWS_AS(ExperimentConfig::from_text("[dataset]\nnum_classes = four\n"),
                        ConfigError);
        CHECK_THROWS_AS(ExperimentConfig::from_text("[dataset]\nnum_classes\n"), ConfigError);
    }
    SUBCASE("semantic validation") {
        CHECK_THROWS_AS(ExperimentConfig::from_text("[dataset]\nnum_classes = 1\n"), ConfigError);
        CHECK_THROWS_AS(
            ExperimentConfig::from_text("[attack]\nkappa1 = 0\nkappa2 = 0\nkappa3 = 0\n"),
            ConfigError);
        CHECK_THROWS_AS(
            ExperimentConfig::from_text("[backend]\ntotal_timesteps = 5\n[attack]\nsteps = 9\n"),
            ConfigError);
    }
}

TEST_CASE("generate_dataset") {
    ExperimentConfig cfg = micro_config();
    DatasetBundle bundle = generate_dataset(cfg);

    SUBCASE("counts and shapes") {
        CHECK(bundle.database.size() == 32);  // 4 classes x 8
        CHECK(bundle.queries.size() == 4);
        CHECK(bundle.targets.size() == 4);
        for (const auto& s : bundle.database) {
            CHECK(s.pixels.shape() == std::vector<int64_t>{3, 16, 16});
            CHECK(s.labels.any());
            for (double v : s.pixels.vec()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    SUBCASE("database and query ids are disjoint") {
        for (const auto& q : bundle.queries)
            for (const auto& d : bundle.database) CHECK(q.id != d.id);
    }
    SUBCASE("every target label is disjoint from its query's labels") {
        for (size_t i = 0; i < bundle.queries.size(); ++i) {
            CHECK(pairwise_similarity(bundle.queries[i].labels, bundle.targets[i].second) == 0);
            CHECK(bundle.targets[i].second.any());
        }
    }
    SUBCASE("seeded generation is reproducible bitwise") {
        DatasetBundle again = generate_dataset(cfg);
        REQUIRE(again.database.size() == bundle.database.size());
        for (size_t i = 0; i < bundle.database.size(); ++i) {
            CHECK(again.database[i].pixels.vec() == bundle.database[i].pixels.vec());
            CHECK(again.database[i].labels == bundle.database[i].labels);
        }
        for (size_t i = 0; i < bundle.queries.size(); ++i)
            CHECK(again.queries[i].pixels.vec() == bundle.queries[i].pixels.vec());
    }
    SUBCASE("impossible disjoint target assignment is a config error") {
        ExperimentConfig bad = micro_config();
        bad.dataset.num_classes = 2;
        bad.dataset.multi_label_prob = 1.0;
        bad.evaluation.top_k = 8;
        CHECK_THROWS_AS(generate_dataset(bad), ConfigError);
    }
    SUBCASE("dataset persistence round-trips") {
        TempDir tmp("hashlat_dataset_rt");
        std::string path = (tmp.path / "dataset.ckpt").string();
        save_dataset(bundle, path);
        DatasetBundle loaded = load_dataset(path);
        REQUIRE(loaded.database.size() == bundle.database.size());
        for (size_t i = 0; i < bundle.database.size(); ++i) {
            CHECK(loaded.database[i].pixels.vec() == bundle.database[i].pixels.vec());
            CHECK(loaded.database[i].labels == bundle.database[i].labels);
            CHECK(loaded.database[i].id == bundle.database[i].id);
        }
        for (size_t i = 0; i < bundle.targets.size(); ++i)
            CHECK(loaded.targets[i].second == bundle.targets[i].second);
    }
}

TEST_CASE("run_pipeline on a micro config") {
    ExperimentConfig cfg = micro_config();
    TempDir tmp("hashlat_pipeline_micro");
    RunReport report = run_pipeline(cfg, tmp.path.string());

    SUBCASE("report structure") {
        CHECK(report.k == cfg.hash_model.k);
        CHECK(report.top_k == cfg.evaluation.top_k);
        CHECK(report.benign.per_query_ap.size() == 4);
        CHECK(report.adversarial.per_query_ap.size() == 4);
        CHECK(report.per_query_eval_hamming.size() == 4);
        CHECK(report.loss_trace_mean.at("total").size() ==
              static_cast<size_t>(cfg.attack.steps));
        CHECK(report.config_echo == ExperimentConfig::default_config_text());
    }
    SUBCASE("artifacts exist on disk") {
        for (const char* rel :
             {"dataset/dataset.ckpt", "models/hash_model.ckpt", "models/index.tsv",
              "models/han.ckpt", "models/backend.ckpt", "models/pooler.ckpt",
              "captions/captions.jsonl", "logs/align_log.csv", "report/report.json",
              "report/report.txt", "report/plots/loss_curves.png",
              "report/plots/tmap_bars.png", "report/plots/perturbation_heatmap.png"}) {
            CAPTURE(rel);
            CHECK(fs::exists(tmp.path / rel));
        }
        for (const auto& q : {100000, 100001, 100002, 100003}) {
            CHECK(fs::exists(tmp.path / "attacks" / ("query_" + std::to_string(q)) /
                             "trace.json"));
            CHECK(fs::exists(tmp.path / "attacks" / ("query_" + std::to_string(q)) /
                             "adversarial.png"));
        }
    }
    SUBCASE("report JSON parses and echoes the config byte-for-byte") {
        std::ifstream is((tmp.path / "report" / "report.json").string());
        nlohmann::json j = nlohmann::json::parse(is);
        CHECK(j.at("config_echo").get<std::string>() == report.config_echo);
        CHECK(j.at("t_map_benign").get<double>() == report.benign.t_map);
        CHECK(j.contains("timings"));
    }
    SUBCASE("deterministic reruns produce identical reports modulo timings") {
        TempDir tmp2("hashlat_pipeline_micro2");
        RunReport again = run_pipeline(cfg, tmp2.path.string());
        CHECK(run_report_json(report, false) == run_report_json(again, false));
    }
}

TEST_CASE("run_pipeline with the attack disabled keeps t-MAP unchanged") {
    ExperimentConfig cfg = micro_config();
    cfg.attack.steps = 0;
    RunReport report = run_pipeline(cfg, "");
    CHECK(report.adversarial.t_map == doctest::Approx(report.benign.t_map).epsilon(1e-12));
}

TEST_CASE("ablation_sweep shares trained models and reports all combos") {
    ExperimentConfig cfg = micro_config();
    cfg.dataset.num_queries = 3;
    cfg.attack.steps = 6;
    TempDir tmp("hashlat_ablation_micro");
    std::vector<std::array<double, 3>> combos = {{15, 0, 0}, {15, 1, 8}};
    AblationTable table = ablation_sweep(cfg, combos, tmp.path.string());
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].kappa1 == 15.0);
    CHECK(table.rows[1].kappa3 == 8.0);
    for (const auto& row : table.rows) {
        CHECK(row.tmap_with_han >= 0.0);
        CHECK(row.tmap_with_han <= 1.0);
        CHECK(row.tmap_without_han >= 0.0);
        CHECK(row.tmap_without_han <= 1.0);
    }
    CHECK(fs::exists(tmp.path / "ablation.json"));
    CHECK(fs::exists(tmp.path / "ablation.txt"));
    CHECK_THROWS_AS(ablation_sweep(cfg, {}, ""), InvalidArgumentError);
}
