#include "hashlat/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "hashlat/core/errors.hpp"
#include "hashlat/core/image_io.hpp"
#include "hashlat/core/ini.hpp"
#include "hashlat/core/kernels.hpp"
#include "hashlat/core/plot.hpp"
#include "hashlat/core/rng.hpp"

namespace hashlat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema = {
        {"dataset",
         {"num_classes", "images_per_class", "image_size", "multi_label_prob", "num_queries",
          "seed"}},
        {"hash_model", {"k", "epochs", "batch_size", "learning_rate", "quant_weight", "seed"}},
        {"alignment", {"alpha", "beta", "gamma", "learning_rate", "epochs", "seed"}},
        {"captions",
         {"provider", "captions_per_image", "similarity_threshold", "seed", "endpoint", "model",
          "timeout_ms", "retries"}},
        {"backend",
         {"latent_channels", "latent_height", "latent_width", "total_timesteps", "beta_start",
          "beta_end", "eps_scale", "seed", "pooler_ridge"}},
        {"attack",
         {"kappa1", "kappa2", "kappa3", "margin", "steps", "learning_rate", "weight_decay",
          "epsilon_linf", "seed"}},
        {"evaluation", {"top_k", "pairing_seed", "chance_shuffles"}},
    };
    return schema;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig cfg;
    cfg.echo = default_config_text();
    return cfg;
}

std::string ExperimentConfig::default_config_text() {
    ExperimentConfig d;
    std::ostringstream os;
    os << "[dataset]\n"
       << "num_classes = " << d.dataset.num_classes << "\n"
       << "images_per_class = " << d.dataset.images_per_class << "\n"
       << "image_size = " << d.dataset.image_size << "\n"
       << "multi_label_prob = " << d.dataset.multi_label_prob << "\n"
       << "num_queries = " << d.dataset.num_queries << "\n"
       << "seed = " << d.dataset.seed << "\n\n"
       << "[hash_model]\n"
       << "k = " << d.hash_model.k << "\n"
       << "epochs = " << d.hash_model.epochs << "\n"
       << "batch_size = " << d.hash_model.batch_size << "\n"
       << "learning_rate = " << d.hash_model.learning_rate << "\n"
       << "quant_weight = " << d.hash_model.quant_weight << "\n"
       << "seed = " << d.hash_model.seed << "\n\n"
       << "[alignment]\n"
       << "alpha = " << d.alignment.alpha << "\n"
       << "beta = " << d.alignment.beta << "\n"
       << "gamma = " << d.alignment.gamma << "\n"
       << "learning_rate = " << d.alignment.learning_rate << "\n"
       << "epochs = " << d.alignment.epochs << "\n"
       << "seed = " << d.alignment.seed << "\n\n"
       << "[captions]\n"
       << "provider = mock\n"
       << "captions_per_image = " << d.captions.captions_per_image << "\n"
       << "similarity_threshold = " << d.captions.similarity_threshold << "\n"
       << "seed = " << d.captions.seed << "\n\n"
       << "[backend]\n"
       << "latent_channels = " << d.backend.latent_channels << "\n"
       << "latent_height = " << d.backend.latent_height << "\n"
       << "latent_width = " << d.backend.latent_width << "\n"
       << "total_timesteps = " << d.backend.total_timesteps << "\n"
       << "beta_start = " << d.backend.beta_start << "\n"
       << "beta_end = " << d.backend.beta_end << "\n"
       << "eps_scale = " << d.backend.eps_scale << "\n"
       << "pooler_ridge = " << d.backend.pooler_ridge << "\n"
       << "seed = " << d.backend.seed << "\n\n"
       << "[attack]\n"
       << "kappa1 = " << d.attack.kappa1 << "\n"
       << "kappa2 = " << d.attack.kappa2 << "\n"
       << "kappa3 = " << d.attack.kappa3 << "\n"
       << "steps = " << d.attack.steps << "\n"
       << "learning_rate = " << d.attack.learning_rate << "\n"
       << "weight_decay = " << d.attack.weight_decay << "\n"
       << "seed = " << d.attack.seed << "\n\n"
       << "[evaluation]\n"
       << "top_k = " << d.evaluation.top_k << "\n"
       << "pairing_seed = " << d.evaluation.pairing_seed << "\n"
       << "chance_shuffles = " << d.evaluation.chance_shuffles << "\n";
    return os.str();
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    IniFile ini = IniFile::parse(text);
    ini.require_known(config_schema());
    ExperimentConfig cfg;
    cfg.echo = ini.raw_text();

    cfg.dataset.num_classes = ini.get_int("dataset", "num_classes", cfg.dataset.num_classes);
    cfg.dataset.images_per_class =
        ini.get_int("dataset", "images_per_class", cfg.dataset.images_per_class);
    cfg.dataset.image_size = ini.get_int("dataset", "image_size", cfg.dataset.image_size);
    cfg.dataset.multi_label_prob =
        ini.get_double("dataset", "multi_label_prob", cfg.dataset.multi_label_prob);
    cfg.dataset.num_queries = ini.get_int("dataset", "num_queries", cfg.dataset.num_queries);
    cfg.dataset.seed = static_cast<uint64_t>(ini.get_int("dataset", "seed", static_cast<int64_t>(cfg.dataset.seed)));

    cfg.hash_model.k = ini.get_int("hash_model", "k", cfg.hash_model.k);
    cfg.hash_model.epochs = ini.get_int("hash_model", "epochs", cfg.hash_model.epochs);
    cfg.hash_model.batch_size = ini.get_int("hash_model", "batch_size", cfg.hash_model.batch_size);
    cfg.hash_model.learning_rate =
        ini.get_double("hash_model", "learning_rate", cfg.hash_model.learning_rate);
    cfg.hash_model.quant_weight =
        ini.get_double("hash_model", "quant_weight", cfg.hash_model.quant_weight);
    cfg.hash_model.seed =
        static_cast<uint64_t>(ini.get_int("hash_model", "seed", static_cast<int64_t>(cfg.hash_model.seed)));

    cfg.alignment.alpha = ini.get_double("alignment", "alpha", cfg.alignment.alpha);
    cfg.alignment.beta = ini.get_double("alignment", "beta", cfg.alignment.beta);
    cfg.alignment.gamma = ini.get_double("alignment", "gamma", cfg.alignment.gamma);
    cfg.alignment.learning_rate =
        ini.get_double("alignment", "learning_rate", cfg.alignment.learning_rate);
    cfg.alignment.epochs = ini.get_int("alignment", "epochs", cfg.alignment.epochs);
    cfg.alignment.seed =
        static_cast<uint64_t>(ini.get_int("alignment", "seed", static_cast<int64_t>(cfg.alignment.seed)));

    cfg.captions.provider = ini.get_string("captions", "provider", cfg.captions.provider);
    cfg.captions.captions_per_image =
        ini.get_int("captions", "captions_per_image", cfg.captions.captions_per_image);
    cfg.captions.similarity_threshold =
        ini.get_double("captions", "similarity_threshold", cfg.captions.similarity_threshold);
    cfg.captions.seed =
        static_cast<uint64_t>(ini.get_int("captions", "seed", static_cast<int64_t>(cfg.captions.seed)));
    cfg.captions.endpoint = ini.get_string("captions", "endpoint", cfg.captions.endpoint);
    cfg.captions.model = ini.get_string("captions", "model", cfg.captions.model);
    cfg.captions.timeout_ms = ini.get_int("captions", "timeout_ms", cfg.captions.timeout_ms);
    cfg.captions.retries = ini.get_int("captions", "retries", cfg.captions.retries);

    cfg.backend.latent_channels =
        ini.get_int("backend", "latent_channels", cfg.backend.latent_channels);
    cfg.backend.latent_height =
        ini.get_int("backend", "latent_height", cfg.backend.latent_height);
    cfg.backend.latent_width = ini.get_int("backend", "latent_width", cfg.backend.latent_width);
    cfg.backend.total_timesteps =
        ini.get_int("backend", "total_timesteps", cfg.backend.total_timesteps);
    cfg.backend.beta_start = ini.get_double("backend", "beta_start", cfg.backend.beta_start);
    cfg.backend.beta_end = ini.get_double("backend", "beta_end", cfg.backend.beta_end);
    cfg.backend.eps_scale = ini.get_double("backend", "eps_scale", cfg.backend.eps_scale);
    cfg.backend.pooler_ridge = ini.get_double("backend", "pooler_ridge", cfg.backend.pooler_ridge);
    cfg.backend.seed =
        static_cast<uint64_t>(ini.get_int("backend", "seed", static_cast<int64_t>(cfg.backend.seed)));

    cfg.attack.kappa1 = ini.get_double("attack", "kappa1", cfg.attack.kappa1);
    cfg.attack.kappa2 = ini.get_double("attack", "kappa2", cfg.attack.kappa2);
    cfg.attack.kappa3 = ini.get_double("attack", "kappa3", cfg.attack.kappa3);
    cfg.attack.margin = ini.get_double("attack", "margin", cfg.attack.margin);
    cfg.attack.steps = ini.get_int("attack", "steps", cfg.attack.steps);
    cfg.attack.learning_rate =
        ini.get_double("attack", "learning_rate", cfg.attack.learning_rate);
    cfg.attack.weight_decay = ini.get_double("attack", "weight_decay", cfg.attack.weight_decay);
    cfg.attack.epsilon_linf = ini.get_double("attack", "epsilon_linf", cfg.attack.epsilon_linf);
    cfg.attack.seed =
        static_cast<uint64_t>(ini.get_int("attack", "seed", static_cast<int64_t>(cfg.attack.seed)));

    cfg.evaluation.top_k = ini.get_int("evaluation", "top_k", cfg.evaluation.top_k);
    cfg.evaluation.pairing_seed = static_cast<uint64_t>(
        ini.get_int("evaluation", "pairing_seed", static_cast<int64_t>(cfg.evaluation.pairing_seed)));
    cfg.evaluation.chance_shuffles =
        ini.get_int("evaluation", "chance_shuffles", cfg.evaluation.chance_shuffles);

    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("config: cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_text(buf.str());
}

void ExperimentConfig::validate() const {
    if (dataset.num_classes < 2) throw ConfigError("config: need at least 2 classes");
    if (dataset.images_per_class < 1) throw ConfigError("config: images_per_class must be >= 1");
    if (dataset.image_size < 4 || dataset.image_size % 4 != 0)
        throw ConfigError("config: image_size must be a positive multiple of 4");
    if (dataset.multi_label_prob < 0.0 || dataset.multi_label_prob > 1.0)
        throw ConfigError("config: multi_label_prob outside [0,1]");
    if (dataset.num_queries < 1) throw ConfigError("config: num_queries must be >= 1");
    if (hash_model.k < 2) throw ConfigError("config: k must be >= 2");
    if (alignment.alpha < 0 || alignment.beta < 0 || alignment.gamma < 0)
        throw ConfigError("config: alignment weights must be >= 0");
    if (alignment.alpha == 0 && alignment.beta == 0 && alignment.gamma == 0)
        throw ConfigError("config: at least one alignment weight must be > 0");
    if (captions.provider != "mock" && captions.provider != "http")
        throw ConfigError("config: unknown caption provider: " + captions.provider);
    if (captions.captions_per_image < 1)
        throw ConfigError("config: captions_per_image must be >= 1");
    if (captions.similarity_threshold < -1.0 || captions.similarity_threshold > 1.0)
        throw ConfigError("config: similarity_threshold outside [-1,1]");
    if (backend.total_timesteps < 1) throw ConfigError("config: total_timesteps must be >= 1");
    if (attack.steps > backend.total_timesteps)
        throw ConfigError("config: attack steps exceed backend total_timesteps");
    attack.validate();
    if (evaluation.top_k < 1) throw ConfigError("config: top_k must be >= 1");
    int64_t db_size = dataset.num_classes * dataset.images_per_class;
    if (evaluation.top_k > db_size)
        throw ConfigError("config: top_k exceeds database size");
}

// ---------------------------------------------------------------------------
// Synthetic dataset

namespace {

struct Palette {
    double r, g, b;
};

constexpr Palette kPalette[8] = {
    {0.85, 0.10, 0.10}, {0.10, 0.70, 0.15}, {0.15, 0.20, 0.85}, {0.90, 0.85, 0.10},
    {0.85, 0.15, 0.80}, {0.10, 0.80, 0.85}, {0.95, 0.55, 0.10}, {0.55, 0.15, 0.75},
};

// Signed distance of the class shape; negative inside.
double shape_sdf(int64_t shape, double dx, double dy, double radius) {
    switch (shape % 4) {
        case 0:  // circle
            return std::sqrt(dx * dx + dy * dy) - radius;
        case 1: {  // square
            double ax = std::abs(dx), ay = std::abs(dy);
            return std::max(ax, ay) - radius;
        }
        case 2: {  // triangle, apex up (image y grows down)
            double ax = std::abs(dx);
            double top = 0.866 * ax + 0.5 * dy - 0.5 * radius;
            double bottom = -dy - 0.6 * radius;
            return std::max(top, bottom);
        }
        default: {  // cross
            double ax = std::abs(dx), ay = std::abs(dy);
            double bar1 = std::max(ax - radius, ay - radius / 3.0);
            double bar2 = std::max(ax - radius / 3.0, ay - radius);
            return std::min(bar1, bar2);
        }
    }
}

void draw_primitive(Tensor& image, int64_t cls, double cx, double cy, double radius,
                    const Palette& color, double softness) {
    const int64_t size = image.dim(1);
    const int64_t shape = (cls / 8 + cls) % 4;
    for (int64_t y = 0; y < size; ++y) {
        for (int64_t x = 0; x < size; ++x) {
            double d = shape_sdf(shape, static_cast<double>(x) - cx, static_cast<double>(y) - cy,
                                 radius);
            double t = std::clamp(0.5 - d / (2.0 * softness), 0.0, 1.0);
            double alpha = t * t * (3.0 - 2.0 * t);
            if (alpha <= 0.0) continue;
            image.at3(0, y, x) = (1.0 - alpha) * image.at3(0, y, x) + alpha * color.r;
            image.at3(1, y, x) = (1.0 - alpha) * image.at3(1, y, x) + alpha * color.g;
            image.at3(2, y, x) = (1.0 - alpha) * image.at3(2, y, x) + alpha * color.b;
        }
    }
}

ImageSample render_image(const DatasetConfig& cfg, Rng& rng, int64_t id,
                         const std::vector<int64_t>& classes) {
    const int64_t s = cfg.image_size;
    Tensor pixels({3, s, s});
    double base = 0.87 + rng.uniform(-0.03, 0.03);
    for (int64_t c = 0; c < 3; ++c) {
        double tint = base + rng.uniform(-0.01, 0.01);
        for (int64_t i = 0; i < s * s; ++i) pixels[c * s * s + i] = tint;
    }
    const double softness = 1.4;
    const double mid = static_cast<double>(s) / 2.0;
    bool first = true;
    for (int64_t cls : classes) {
        Palette color = kPalette[cls % 8];
        color.r = std::clamp(color.r + rng.uniform(-0.04, 0.04), 0.0, 1.0);
        color.g = std::clamp(color.g + rng.uniform(-0.04, 0.04), 0.0, 1.0);
        color.b = std::clamp(color.b + rng.uniform(-0.04, 0.04), 0.0, 1.0);
        double cx, cy, radius;
        if (first) {
            cx = mid + rng.uniform(-3.0, 3.0);
            cy = mid + rng.uniform(-3.0, 3.0);
            radius = 0.22 * static_cast<double>(s) + rng.uniform(-1.5, 1.5);
        } else {
            double ox = rng.uniform() < 0.5 ? -0.28 : 0.28;
            double oy = rng.uniform() < 0.5 ? -0.28 : 0.28;
            cx = mid + ox * static_cast<double>(s) + rng.uniform(-1.5, 1.5);
            cy = mid + oy * static_cast<double>(s) + rng.uniform(-1.5, 1.5);
            radius = 0.12 * static_cast<double>(s) + rng.uniform(-1.0, 1.0);
        }
        draw_primitive(pixels, cls, cx, cy, radius, color, softness);
        first = false;
    }
    for (auto& v : pixels.vec()) v = std::clamp(v, 0.0, 1.0);
    MultiLabelVector labels(std::vector<uint8_t>(static_cast<size_t>(cfg.num_classes), 0));
    for (int64_t cls : classes) labels.bits[static_cast<size_t>(cls)] = 1;
    return {std::move(pixels), std::move(labels), id};
}

std::vector<int64_t> sample_classes(const DatasetConfig& cfg, Rng& rng, int64_t primary) {
    std::vector<int64_t> classes{primary};
    if (cfg.num_classes > 1 && rng.uniform() < cfg.multi_label_prob) {
        int64_t second = rng.uniform_int(0, cfg.num_classes - 2);
        if (second >= primary) ++second;
        classes.push_back(second);
    }
    return classes;
}

}  // namespace

DatasetBundle generate_dataset(const ExperimentConfig& cfg) {
    const DatasetConfig& d = cfg.dataset;
    if (d.num_classes < 2) throw ConfigError("generate_dataset: need at least 2 classes");
    DatasetBundle bundle;
    bundle.num_classes = d.num_classes;
    bundle.image_size = d.image_size;

    Rng rng(d.seed);
    int64_t id = 0;
    for (int64_t cls = 0; cls < d.num_classes; ++cls)
        for (int64_t i = 0; i < d.images_per_class; ++i)
            bundle.database.push_back(render_image(d, rng, id++, sample_classes(d, rng, cls)));

    Rng qrng(d.seed ^ 0x5bd1e995u);
    for (int64_t i = 0; i < d.num_queries; ++i) {
        int64_t cls = qrng.uniform_int(0, d.num_classes - 1);
        bundle.queries.push_back(render_image(d, qrng, 100000 + i, sample_classes(d, qrng, cls)));
    }

    Rng trng(cfg.evaluation.pairing_seed ^ (d.seed << 1));
    for (int64_t i = 0; i < d.num_queries; ++i) {
        const auto& query = bundle.queries[static_cast<size_t>(i)];
        std::vector<int64_t> candidates;
        for (int64_t cls = 0; cls < d.num_classes; ++cls)
            if (!query.labels.bits[static_cast<size_t>(cls)]) candidates.push_back(cls);
        if (candidates.empty())
            throw ConfigError("generate_dataset: no disjoint target label available");
        int64_t target_cls =
            candidates[static_cast<size_t>(trng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
        ImageSample target_image = render_image(d, trng, 200000 + i, {target_cls});
        MultiLabelVector target_label(std::vector<uint8_t>(static_cast<size_t>(d.num_classes), 0));
        target_label.bits[static_cast<size_t>(target_cls)] = 1;
        bundle.targets.emplace_back(std::move(target_image), std::move(target_label));
    }
    return bundle;
}

void save_dataset(const DatasetBundle& bundle, const std::string& path) {
    Checkpoint ckpt;
    auto pack = [&](const std::string& prefix, const std::vector<ImageSample>& samples) {
        const int64_t n = static_cast<int64_t>(samples.size());
        const int64_t s = bundle.image_size, c = bundle.num_classes;
        Tensor pixels({n, 3, s, s});
        Tensor labels({n, c});
        std::vector<int64_t> ids(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const auto& sample = samples[static_cast<size_t>(i)];
            std::copy(sample.pixels.vec().begin(), sample.pixels.vec().end(),
                      pixels.data() + i * 3 * s * s);
            for (int64_t j = 0; j < c; ++j)
                labels[i * c + j] = sample.labels.bits[static_cast<size_t>(j)] ? 1.0 : 0.0;
            ids[static_cast<size_t>(i)] = sample.id;
        }
        ckpt.put(prefix + "_pixels", pixels);
        ckpt.put(prefix + "_labels", labels);
        ckpt.put_i64(prefix + "_ids", ids);
    };
    pack("db", bundle.database);
    pack("query", bundle.queries);
    std::vector<ImageSample> target_images;
    Tensor target_labels({static_cast<int64_t>(bundle.targets.size()), bundle.num_classes});
    for (size_t i = 0; i < bundle.targets.size(); ++i) {
        target_images.push_back(bundle.targets[i].first);
        for (int64_t j = 0; j < bundle.num_classes; ++j)
            target_labels[static_cast<int64_t>(i) * bundle.num_classes + j] =
                bundle.targets[i].second.bits[static_cast<size_t>(j)] ? 1.0 : 0.0;
    }
    pack("target", target_images);
    ckpt.put("target_assigned_labels", target_labels);
    ckpt.put_i64("meta", {bundle.num_classes, bundle.image_size});
    ckpt.save(path);
}

DatasetBundle load_dataset(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    const auto& meta = ckpt.get_i64("meta");
    DatasetBundle bundle;
    bundle.num_classes = meta[0];
    bundle.image_size = meta[1];
    auto unpack = [&](const std::string& prefix) {
        const Tensor& pixels = ckpt.get(prefix + "_pixels");
        const Tensor& labels = ckpt.get(prefix + "_labels");
        const auto& ids = ckpt.get_i64(prefix + "_ids");
        const int64_t n = pixels.dim(0), s = pixels.dim(2), c = labels.dim(1);
        std::vector<ImageSample> samples;
        for (int64_t i = 0; i < n; ++i) {
            Tensor img({3, s, s});
            std::copy(pixels.data() + i * 3 * s * s, pixels.data() + (i + 1) * 3 * s * s,
                      img.data());
            MultiLabelVector lab(std::vector<uint8_t>(static_cast<size_t>(c), 0));
            for (int64_t j = 0; j < c; ++j)
                lab.bits[static_cast<size_t>(j)] = labels[i * c + j] > 0.5 ? 1 : 0;
            samples.push_back({std::move(img), std::move(lab), ids[static_cast<size_t>(i)]});
        }
        return samples;
    };
    bundle.database = unpack("db");
    bundle.queries = unpack("query");
    auto target_images = unpack("target");
    const Tensor& tl = ckpt.get("target_assigned_labels");
    for (size_t i = 0; i < target_images.size(); ++i) {
        MultiLabelVector lab(std::vector<uint8_t>(static_cast<size_t>(bundle.num_classes), 0));
        for (int64_t j = 0; j < bundle.num_classes; ++j)
            lab.bits[static_cast<size_t>(j)] =
                tl[static_cast<int64_t>(i) * bundle.num_classes + j] > 0.5 ? 1 : 0;
        bundle.targets.emplace_back(std::move(target_images[i]), std::move(lab));
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

class StageClock {
public:
    explicit StageClock(std::vector<StageTiming>* sink) : sink_(sink) {}
    template <typename Fn>
    auto run(const std::string& name, Fn&& fn) {
        auto start = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            record(name, start);
        } else {
            auto result = fn();
            record(name, start);
            return result;
        }
    }

private:
    void record(const std::string& name, std::chrono::steady_clock::time_point start) {
        if (!sink_) return;
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        sink_->push_back({name, secs});
    }
    std::vector<StageTiming>* sink_;
};

TextLatent best_caption_latent(const ImageSample& image, CaptionProvider& provider,
                               SimilarityScorer& scorer, const TextEncoder& encoder,
                               const CaptionsConfig& ccfg, CaptionCacheEntry* cache_out) {
    auto captions = generate_captions(provider, image, ccfg.captions_per_image);
    auto retained = filter_captions(captions, scorer, image, ccfg.similarity_threshold);
    size_t best = 0;
    for (size_t i = 1; i < retained.size(); ++i)
        if (*retained[i].similarity_score > *retained[best].similarity_score) best = i;
    if (cache_out) {
        cache_out->image_id = image.id;
        cache_out->captions = retained;
    }
    return encoder.encode(retained[best]);
}

std::unique_ptr<CaptionProvider> make_provider(const CaptionsConfig& ccfg) {
    if (ccfg.provider == "http") {
        HttpProviderConfig hcfg;
        hcfg.endpoint = ccfg.endpoint;
        hcfg.model = ccfg.model;
        hcfg.timeout_ms = static_cast<int>(ccfg.timeout_ms);
        hcfg.max_retries = static_cast<int>(ccfg.retries);
        return std::make_unique<HttpCaptionProvider>(hcfg);
    }
    return std::make_unique<MockCaptionProvider>(ccfg.seed);
}

}  // namespace

DatasetBundle stage_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    DatasetBundle bundle = generate_dataset(cfg);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "dataset");
        save_dataset(bundle, (fs::path(out_dir) / "dataset" / "dataset.ckpt").string());
    }
    return bundle;
}

CaptionSet stage_captions(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::string& out_dir) {
    CaptionSet set;
    auto provider = make_provider(cfg.captions);
    MockSimilarityScorer scorer(cfg.captions.seed);
    TextEncoder encoder(cfg.captions.seed);
    auto encode_all = [&](const std::vector<ImageSample>& images, std::vector<TextLatent>& out) {
        for (const auto& image : images) {
            CaptionCacheEntry entry;
            out.push_back(best_caption_latent(image, *provider, scorer, encoder, cfg.captions,
                                              &entry));
            set.cache.push_back(std::move(entry));
        }
    };
    encode_all(bundle.database, set.database);
    encode_all(bundle.queries, set.queries);
    std::vector<ImageSample> target_images;
    for (const auto& t : bundle.targets) target_images.push_back(t.first);
    encode_all(target_images, set.targets);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "captions");
        save_caption_cache((fs::path(out_dir) / "captions" / "captions.jsonl").string(),
                           set.cache);
    }
    return set;
}

HashModelParams stage_train_hash(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                 const std::string& out_dir) {
    HashTrainOptions options;
    options.batch_size = cfg.hash_model.batch_size;
    options.learning_rate = cfg.hash_model.learning_rate;
    options.quant_weight = cfg.hash_model.quant_weight;
    HashModelParams model = train_hash_model(bundle.database, cfg.hash_model.k,
                                             cfg.hash_model.seed, cfg.hash_model.epochs, options);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "models");
        model.save((fs::path(out_dir) / "models" / "hash_model.ckpt").string());
        RetrievalIndex index = build_index(cfg, bundle, model);
        index.save((fs::path(out_dir) / "models" / "index.tsv").string());
    }
    return model;
}

RetrievalIndex build_index(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                           const HashModelParams& model) {
    RetrievalIndex index(model.k, bundle.num_classes);
    for (const auto& sample : bundle.database)
        index.add(sample.id, sign_binarize(hash_forward(model, sample)), sample.labels);
    return index;
}

HANParams stage_train_align(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                            const HashModelParams& model, const CaptionSet& captions,
                            const std::string& out_dir) {
    std::vector<std::pair<TextLatent, ImageSample>> pairs;
    for (size_t i = 0; i < bundle.database.size(); ++i)
        pairs.emplace_back(captions.database[i], bundle.database[i]);
    HANParams init = HANParams::init(model.k, cfg.alignment.seed);
    std::string log_path;
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "logs");
        log_path = (fs::path(out_dir) / "logs" / "align_log.csv").string();
    }
    HANParams trained = train_alignment(init, pairs, model, cfg.alignment, log_path);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "models");
        trained.save((fs::path(out_dir) / "models" / "han.ckpt").string());
    }
    return trained;
}

std::pair<ToyDiffusionBackend, LatentPooler> stage_fit_backend(const ExperimentConfig& cfg,
                                                               const DatasetBundle& bundle,
                                                               const CaptionSet& captions,
                                                               const std::string& out_dir) {
    ToyDiffusionBackend backend(cfg.backend);
    backend.fit_autoencoder(bundle.database);

    const int64_t n = static_cast<int64_t>(bundle.database.size());
    const int64_t latent_dim = cfg.backend.latent_dim();
    const int64_t text_dim = captions.database.empty() ? 1024 : captions.database.front().dim();
    Tensor latents({n, latent_dim});
    Tensor texts({n, text_dim});
    for (int64_t i = 0; i < n; ++i) {
        LatentState z = backend.encode(bundle.database[static_cast<size_t>(i)].pixels);
        std::copy(z.z.vec().begin(), z.z.vec().end(), latents.data() + i * latent_dim);
        const auto& t = captions.database[static_cast<size_t>(i)].values;
        std::copy(t.begin(), t.end(), texts.data() + i * text_dim);
    }
    LatentPooler pooler = LatentPooler::fit(latents, texts, cfg.backend.pooler_ridge);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "models");
        backend.save((fs::path(out_dir) / "models" / "backend.ckpt").string());
        pooler.save((fs::path(out_dir) / "models" / "pooler.ckpt").string());
    }
    return {std::move(backend), std::move(pooler)};
}

std::vector<AttackResult> stage_attack(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                                       const CaptionSet& captions, const GuideMapper& mapper,
                                       const HashModelParams& model,
                                       const DiffusionBackend& backend, const LatentPooler& pooler,
                                       const std::string& out_dir) {
    const int64_t nq = static_cast<int64_t>(bundle.queries.size());
    std::vector<AttackResult> results(static_cast<size_t>(nq));
    const bool par = kernels::parallel_enabled() && nq > 1;
    // Independent attacks; deterministic ordering by query slot.
#pragma omp parallel for schedule(dynamic) if (par)
    for (int64_t i = 0; i < nq; ++i) {
        results[static_cast<size_t>(i)] =
            run_attack(bundle.queries[static_cast<size_t>(i)], captions.queries[static_cast<size_t>(i)],
                       captions.targets[static_cast<size_t>(i)], mapper, model, backend, pooler,
                       cfg.attack);
    }
    if (!out_dir.empty()) {
        for (int64_t i = 0; i < nq; ++i) {
            std::string dir = (fs::path(out_dir) / "attacks" /
                               ("query_" + std::to_string(bundle.queries[static_cast<size_t>(i)].id)))
                                  .string();
            save_attack_result(results[static_cast<size_t>(i)], dir);
        }
    }
    return results;
}

namespace {

double chance_tmap_estimate(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                            const RetrievalIndex& index) {
    // Expected t-MAP of random rankings: shuffle the database order and score
    // the prefix as if it were a retrieval.
    Rng rng(cfg.evaluation.pairing_seed ^ 0xc0ffee123456789ull);
    const int64_t k = cfg.evaluation.top_k;
    double total = 0.0;
    int64_t count = 0;
    std::vector<int64_t> order(static_cast<size_t>(index.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    for (const auto& [target_image, target_label] : bundle.targets) {
        for (int64_t rep = 0; rep < cfg.evaluation.chance_shuffles; ++rep) {
            rng.shuffle(order);
            double ap_sum = 0.0;
            int64_t relevant = 0;
            for (int64_t r = 0; r < k; ++r) {
                if (pairwise_similarity(index.labels_at(order[static_cast<size_t>(r)]),
                                        target_label) == 1) {
                    ++relevant;
                    ap_sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
                }
            }
            total += relevant == 0 ? 0.0 : ap_sum / static_cast<double>(relevant);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace

EvalOutcome stage_eval(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                       const HashModelParams& model, const RetrievalIndex& index,
                       const std::vector<AttackResult>& attacks, const std::string& out_dir) {
    std::vector<std::pair<HashCode, MultiLabelVector>> benign_queries, adv_queries;
    for (size_t i = 0; i < bundle.queries.size(); ++i) {
        const MultiLabelVector& target = bundle.targets[i].second;
        benign_queries.emplace_back(sign_binarize(hash_forward(model, bundle.queries[i])), target);
        ImageSample adv{attacks[i].adversarial_pixels, bundle.queries[i].labels,
                        bundle.queries[i].id};
        adv_queries.emplace_back(sign_binarize(hash_forward(model, adv)), target);
    }
    EvalOutcome outcome;
    outcome.benign = t_map_at_k(index, benign_queries, cfg.evaluation.top_k);
    outcome.adversarial = t_map_at_k(index, adv_queries, cfg.evaluation.top_k);
    outcome.chance_tmap = chance_tmap_estimate(cfg, bundle, index);
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "eval");
        std::ofstream b((fs::path(out_dir) / "eval" / "metrics_benign.json").string());
        b << metrics_report_json(outcome.benign);
        std::ofstream a((fs::path(out_dir) / "eval" / "metrics_adversarial.json").string());
        a << metrics_report_json(outcome.adversarial);
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Reports

std::string run_report_json(const RunReport& report, bool include_timings) {
    nlohmann::json j;
    j["k"] = report.k;
    j["K"] = report.top_k;
    j["num_queries"] = static_cast<int64_t>(report.benign.per_query_ap.size());
    j["t_map_benign"] = report.benign.t_map;
    j["t_map_adversarial"] = report.adversarial.t_map;
    j["t_map_chance"] = report.chance_tmap;
    j["per_query_ap_benign"] = report.benign.per_query_ap;
    j["per_query_ap_adversarial"] = report.adversarial.per_query_ap;
    j["per_query_eval_hamming"] = report.per_query_eval_hamming;
    j["per_query_latent_hamming"] = report.per_query_latent_hamming;
    j["per_query_benign_hamming"] = report.per_query_benign_hamming;
    nlohmann::json traces;
    for (const auto& [name, series] : report.loss_trace_mean) traces[name] = series;
    j["loss_trace_mean"] = traces;
    j["config_echo"] = report.config_echo;
    nlohmann::json artifacts;
    for (const auto& [name, path] : report.artifacts) artifacts[name] = path;
    j["artifacts"] = artifacts;
    if (include_timings) {
        nlohmann::json t;
        for (const auto& timing : report.timings) t[timing.name] = timing.seconds;
        t["attack_seconds_per_query"] = report.attack_seconds_per_query;
        j["timings"] = t;
    }
    return j.dump(2) + "\n";
}

std::string run_report_text(const RunReport& report) {
    std::ostringstream os;
    os << "retrieval attack report\n";
    os << "=======================\n";
    os << "code length k        : " << report.k << "\n";
    os << "retrieval depth K    : " << report.top_k << "\n";
    os << "queries              : " << report.benign.per_query_ap.size() << "\n\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-22s %8.4f\n", "t-MAP benign", report.benign.t_map);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-22s %8.4f\n", "t-MAP adversarial",
                  report.adversarial.t_map);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-22s %8.4f\n", "t-MAP chance", report.chance_tmap);
    os << buf;
    double mean_eval = 0.0, mean_latent = 0.0, mean_benign = 0.0;
    size_t nq = report.per_query_eval_hamming.size();
    for (size_t i = 0; i < nq; ++i) {
        mean_eval += report.per_query_eval_hamming[i];
        mean_latent += report.per_query_latent_hamming[i];
        mean_benign += report.per_query_benign_hamming[i];
    }
    if (nq > 0) {
        mean_eval /= static_cast<double>(nq);
        mean_latent /= static_cast<double>(nq);
        mean_benign /= static_cast<double>(nq);
        os << "\nhamming to target (mean over queries)\n";
        std::snprintf(buf, sizeof(buf), "  benign image        : %8.3f\n", mean_benign);
        os << buf;
        std::snprintf(buf, sizeof(buf), "  latent path (guide) : %8.3f\n", mean_latent);
        os << buf;
        std::snprintf(buf, sizeof(buf), "  decoded adversarial : %8.3f\n", mean_eval);
        os << buf;
    }
    if (!report.timings.empty()) {
        os << "\nstage timings (s)\n";
        for (const auto& t : report.timings) {
            std::snprintf(buf, sizeof(buf), "  %-20s %10.3f\n", t.name.c_str(), t.seconds);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), "  %-20s %10.3f\n", "attack per query",
                      report.attack_seconds_per_query);
        os << buf;
    }
    return os.str();
}

RunReport assemble_report(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                          const std::vector<AttackResult>& attacks, const EvalOutcome& outcome) {
    RunReport report;
    report.config_echo = cfg.echo.empty() ? ExperimentConfig::default_config_text() : cfg.echo;
    report.k = cfg.hash_model.k;
    report.top_k = cfg.evaluation.top_k;
    report.benign = outcome.benign;
    report.adversarial = outcome.adversarial;
    report.chance_tmap = outcome.chance_tmap;

    for (const auto& a : attacks) {
        report.per_query_eval_hamming.push_back(a.eval_hamming_to_target);
        report.per_query_latent_hamming.push_back(a.latent_path_hamming_to_target);
        report.per_query_benign_hamming.push_back(a.benign_hamming_to_target);
    }
    const char* names[] = {"distance", "path", "attack", "recon", "attention", "total"};
    for (const char* name : names) report.loss_trace_mean[name] = {};
    if (!attacks.empty()) {
        size_t steps = attacks.front().trace_total.size();
        for (size_t s = 0; s < steps; ++s) {
            double d = 0, p = 0, a = 0, r = 0, at = 0, t = 0;
            for (const auto& res : attacks) {
                d += res.trace_distance[s];
                p += res.trace_path[s];
                a += res.trace_attack[s];
                r += res.trace_recon[s];
                at += res.trace_attention[s];
                t += res.trace_total[s];
            }
            double n = static_cast<double>(attacks.size());
            report.loss_trace_mean["distance"].push_back(d / n);
            report.loss_trace_mean["path"].push_back(p / n);
            report.loss_trace_mean["attack"].push_back(a / n);
            report.loss_trace_mean["recon"].push_back(r / n);
            report.loss_trace_mean["attention"].push_back(at / n);
            report.loss_trace_mean["total"].push_back(t / n);
        }
    }
    return report;
}

void write_report_artifacts(RunReport& report, const DatasetBundle& bundle,
                            const std::vector<AttackResult>& attacks,
                            const std::string& out_dir) {
    fs::path base(out_dir);
    fs::create_directories(base / "report" / "plots");
    // Paths are stored relative to the run directory so seeded reruns produce
    // byte-identical reports regardless of where they land.
    report.artifacts["dataset"] = "dataset/dataset.ckpt";
    report.artifacts["hash_model"] = "models/hash_model.ckpt";
    report.artifacts["index"] = "models/index.tsv";
    report.artifacts["han"] = "models/han.ckpt";
    report.artifacts["backend"] = "models/backend.ckpt";
    report.artifacts["pooler"] = "models/pooler.ckpt";
    report.artifacts["captions"] = "captions/captions.jsonl";
    report.artifacts["report"] = "report/report.json";

    std::ofstream js((base / "report" / "report.json").string());
    js << run_report_json(report, true);
    std::ofstream txt((base / "report" / "report.txt").string());
    txt << run_report_text(report);

    std::vector<std::string> names_v;
    std::vector<std::vector<double>> series;
    for (const auto& [name, trace] : report.loss_trace_mean) {
        names_v.push_back(name);
        series.push_back(trace);
    }
    plot_series((base / "report" / "plots" / "loss_curves.png").string(), names_v, series,
                "mean attack losses per step");
    plot_bars((base / "report" / "plots" / "tmap_bars.png").string(), {"benign", "adv", "chance"},
              {report.benign.t_map, report.adversarial.t_map, report.chance_tmap},
              "t-map at k=" + std::to_string(report.top_k));
    if (!attacks.empty()) {
        const Tensor& adv = attacks.front().adversarial_pixels;
        const Tensor& orig = bundle.queries.front().pixels;
        const int64_t s = adv.dim(1);
        std::vector<double> field(static_cast<size_t>(s * s), 0.0);
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) {
                double acc = 0.0;
                for (int64_t c = 0; c < 3; ++c)
                    acc += std::abs(adv.at3(c, y, x) - orig.at3(c, y, x));
                field[static_cast<size_t>(y * s + x)] = acc / 3.0;
            }
        plot_heatmap((base / "report" / "plots" / "perturbation_heatmap.png").string(), field,
                     static_cast<int>(s), static_cast<int>(s), "mean abs perturbation (query 0)");
        write_image_png((base / "report" / "plots" / "query0_benign.png").string(), orig);
        write_image_png((base / "report" / "plots" / "query0_adversarial.png").string(), adv);
    }
}

RunReport run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::vector<StageTiming> timings;
    StageClock clock(&timings);

    DatasetBundle bundle = clock.run("gen_data", [&] { return stage_gen_data(cfg, out_dir); });
    CaptionSet captions =
        clock.run("captions", [&] { return stage_captions(cfg, bundle, out_dir); });
    HashModelParams model =
        clock.run("train_hash", [&] { return stage_train_hash(cfg, bundle, out_dir); });
    RetrievalIndex index = build_index(cfg, bundle, model);
    HANParams han = clock.run("train_align",
                              [&] { return stage_train_align(cfg, bundle, model, captions, out_dir); });
    auto [backend, pooler] =
        clock.run("fit_backend", [&] { return stage_fit_backend(cfg, bundle, captions, out_dir); });

    HanGuideMapper mapper(han);
    auto attack_start = std::chrono::steady_clock::now();
    std::vector<AttackResult> attacks = clock.run("attack", [&] {
        return stage_attack(cfg, bundle, captions, mapper, model, backend, pooler, out_dir);
    });
    double attack_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - attack_start).count();

    EvalOutcome outcome =
        clock.run("eval", [&] { return stage_eval(cfg, bundle, model, index, attacks, out_dir); });

    RunReport report = assemble_report(cfg, bundle, attacks, outcome);
    report.timings = std::move(timings);
    report.attack_seconds_per_query =
        bundle.queries.empty() ? 0.0 : attack_secs / static_cast<double>(bundle.queries.size());
    if (!out_dir.empty()) write_report_artifacts(report, bundle, attacks, out_dir);
    return report;
}

// ---------------------------------------------------------------------------
// Ablation

AblationTable ablation_sweep(const ExperimentConfig& cfg,
                             const std::vector<std::array<double, 3>>& combos,
                             const std::string& out_dir) {
    if (combos.empty()) throw InvalidArgumentError("ablation_sweep: no combos");
    cfg.validate();

    DatasetBundle bundle = stage_gen_data(cfg, "");
    CaptionSet captions = stage_captions(cfg, bundle, "");
    HashModelParams model = stage_train_hash(cfg, bundle, "");
    RetrievalIndex index = build_index(cfg, bundle, model);
    HANParams han = stage_train_align(cfg, bundle, model, captions, "");
    auto [backend, pooler] = stage_fit_backend(cfg, bundle, captions, "");

    HanGuideMapper han_mapper(han);
    RandomHeadGuideMapper random_mapper(model.k, han.in_dim, cfg.attack.seed);

    AblationTable table;
    {
        std::vector<std::pair<HashCode, MultiLabelVector>> benign_queries;
        for (size_t i = 0; i < bundle.queries.size(); ++i)
            benign_queries.emplace_back(sign_binarize(hash_forward(model, bundle.queries[i])),
                                        bundle.targets[i].second);
        table.benign_tmap = t_map_at_k(index, benign_queries, cfg.evaluation.top_k).t_map;
        table.chance_tmap = chance_tmap_estimate(cfg, bundle, index);
    }

    auto adversarial_tmap = [&](const GuideMapper& mapper, const AttackConfig& acfg) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.attack = acfg;
        std::vector<AttackResult> attacks =
            stage_attack(run_cfg, bundle, captions, mapper, model, backend, pooler, "");
        std::vector<std::pair<HashCode, MultiLabelVector>> adv_queries;
        for (size_t i = 0; i < attacks.size(); ++i)
            adv_queries.emplace_back(attacks[i].achieved_code, bundle.targets[i].second);
        return t_map_at_k(index, adv_queries, cfg.evaluation.top_k).t_map;
    };

    for (const auto& combo : combos) {
        AttackConfig acfg = cfg.attack;
        acfg.kappa1 = combo[0];
        acfg.kappa2 = combo[1];
        acfg.kappa3 = combo[2];
        AblationRow row;
        row.kappa1 = combo[0];
        row.kappa2 = combo[1];
        row.kappa3 = combo[2];
        row.tmap_with_han = adversarial_tmap(han_mapper, acfg);
        row.tmap_without_han = adversarial_tmap(random_mapper, acfg);
        table.rows.push_back(row);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream js((fs::path(out_dir) / "ablation.json").string());
        js << ablation_table_json(table);
        std::ofstream txt((fs::path(out_dir) / "ablation.txt").string());
        txt << ablation_table_text(table);
    }
    return table;
}

std::string ablation_table_json(const AblationTable& table) {
    nlohmann::json j;
    j["benign_tmap"] = table.benign_tmap;
    j["chance_tmap"] = table.chance_tmap;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : table.rows) {
        rows.push_back({{"kappa1", row.kappa1},
                        {"kappa2", row.kappa2},
                        {"kappa3", row.kappa3},
                        {"tmap_with_han", row.tmap_with_han},
                        {"tmap_without_han", row.tmap_without_han}});
    }
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

std::string ablation_table_text(const AblationTable& table) {
    std::ostringstream os;
    os << "kappa1  kappa2  kappa3  | t-MAP (HAN)  t-MAP (w/o HAN)\n";
    os << "------------------------+----------------------------\n";
    char buf[128];
    for (const auto& row : table.rows) {
        std::snprintf(buf, sizeof(buf), "%6.2f  %6.2f  %6.2f  |   %8.4f       %8.4f\n",
                      row.kappa1, row.kappa2, row.kappa3, row.tmap_with_han,
                      row.tmap_without_han);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "benign t-MAP: %.4f   chance t-MAP: %.4f\n",
                  table.benign_tmap, table.chance_tmap);
    os << buf;
    return os.str();
}

}  // namespace hashlat
