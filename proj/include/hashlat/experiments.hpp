#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hashlat/align_net.hpp"
#include "hashlat/attack.hpp"
#include "hashlat/diffusion.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/hash_space.hpp"
#include "hashlat/text_pipeline.hpp"

namespace hashlat {

struct DatasetConfig {
    int64_t num_classes = 8;
    int64_t images_per_class = 64;
    int64_t image_size = 32;
    double multi_label_prob = 0.3;
    int64_t num_queries = 64;
    uint64_t seed = 1;
};

struct HashSectionConfig {
    int64_t k = 16;
    int64_t epochs = 30;
    int64_t batch_size = 64;
    double learning_rate = 1e-2;
    double quant_weight = 0.1;
    uint64_t seed = 7;
};

struct CaptionsConfig {
    std::string provider = "mock";  // "mock" or "http"
    int64_t captions_per_image = 5;
    double similarity_threshold = 0.25;
    uint64_t seed = 17;
    std::string endpoint;
    std::string model;
    int64_t timeout_ms = 2000;
    int64_t retries = 2;
};

struct EvalConfig {
    int64_t top_k = 50;
    uint64_t pairing_seed = 5;
    int64_t chance_shuffles = 16;  // random rankings per query for the chance level
};

struct ExperimentConfig {
    DatasetConfig dataset;
    HashSectionConfig hash_model;
    AlignConfig alignment;
    CaptionsConfig captions;
    BackendConfig backend;
    AttackConfig attack;
    EvalConfig evaluation;
    std::string echo;  // raw config text, byte for byte

    static ExperimentConfig defaults();
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_text(const std::string& text);
    static std::string default_config_text();
    void validate() const;
};

struct DatasetBundle {
    std::vector<ImageSample> database;
    std::vector<ImageSample> queries;
    std::vector<std::pair<ImageSample, MultiLabelVector>> targets;  // one per query
    int64_t num_classes = 0;
    int64_t image_size = 0;
};

// Procedurally rendered colored-primitive images; database and query sets are
// disjoint and every query gets a target label disjoint from its own labels.
DatasetBundle generate_dataset(const ExperimentConfig& cfg);

void save_dataset(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_dataset(const std::string& path);

// Best-caption text latents (one per image) plus the filled cache entries.
struct CaptionSet {
    std::vector<TextLatent> database;
    std::vector<TextLatent> queries;
    std::vector<TextLatent> targets;
    std::vector<CaptionCacheEntry> cache;
};

struct StageTiming {
    std::string name;
    double seconds = 0.0;
};

struct RunReport {
    int64_t k = 0;
    int64_t top_k = 0;
    TmapResult benign;
    TmapResult adversarial;
    double chance_tmap = 0.0;
    std::vector<double> per_query_eval_hamming;
    std::vector<double> per_query_latent_hamming;
    std::vector<double> per_query_benign_hamming;
    std::map<std::string, std::vector<double>> loss_trace_mean;
    std::vector<StageTiming> timings;
    double attack_seconds_per_query = 0.0;
    std::string config_echo;
    std::map<std::string, std::string> artifacts;
};

// Deterministic serialization; the timing block is a measurement and is only
// appended when include_timings is set.
std::string run_report_json(const RunReport& report, bool include_timings = true);
std::string run_report_text(const RunReport& report);

// Stage functions (the CLI runs them one at a time against --out).
DatasetBundle stage_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);
CaptionSet stage_captions(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::string& out_dir);
HashModelParams stage_train_hash(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                 const std::string& out_dir);
RetrievalIndex build_index(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                           const HashModelParams& model);
HANParams stage_train_align(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                            const HashModelParams& model, const CaptionSet& captions,
                            const std::string& out_dir);
std::pair<ToyDiffusionBackend, LatentPooler> stage_fit_backend(const ExperimentConfig& cfg,
                                                               const DatasetBundle& bundle,
                                                               const CaptionSet& captions,
                                                               const std::string& out_dir);
std::vector<AttackResult> stage_attack(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                       const CaptionSet& captions, const GuideMapper& mapper,
                                       const HashModelParams& model,
                                       const DiffusionBackend& backend, const LatentPooler& pooler,
                                       const std::string& out_dir);

struct EvalOutcome {
    TmapResult benign;
    TmapResult adversarial;
    double chance_tmap = 0.0;
};

EvalOutcome stage_eval(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                       const HashModelParams& model, const RetrievalIndex& index,
                       const std::vector<AttackResult>& attacks, const std::string& out_dir);

// Builds the RunReport struct from evaluated results (timings filled by the
// caller) and writes report.json / report.txt / plots.
RunReport assemble_report(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::vector<AttackResult>& attacks, const EvalOutcome& outcome);
void write_report_artifacts(RunReport& report, const DatasetBundle& bundle,
                            const std::vector<AttackResult>& attacks, const std::string& out_dir);

// Full two-stage pipeline: train hash model, align HAN, build index, attack
// every query, evaluate t-MAP before/after on the same index, write report
// and plots. out_dir may be empty for an in-memory run (tests).
RunReport run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir);

struct AblationRow {
    double kappa1 = 0.0, kappa2 = 0.0, kappa3 = 0.0;
    double tmap_with_han = 0.0;
    double tmap_without_han = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    double benign_tmap = 0.0;
    double chance_tmap = 0.0;
};

// Re-runs only the attack stage per kappa combination (models and index are
// trained once and shared), with and without HAN (random head on the fixed
// projection).
AblationTable ablation_sweep(const ExperimentConfig& cfg,
                             const std::vector<std::array<double, 3>>& combos,
                             const std::string& out_dir);

std::string ablation_table_json(const AblationTable& table);
std::string ablation_table_text(const AblationTable& table);

}  // namespace hashlat
