#include "hashlat/text_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "hashlat/core/rng.hpp"
#include "hashlat/hash_model.hpp"

namespace hashlat {

namespace {

const char* kColors[] = {"red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple"};
const char* kShapes[] = {"circle", "square", "triangle", "cross"};

std::string class_name(int64_t c) {
    std::string name = std::string(kColors[c % 8]) + " " + kShapes[(c / 8 + c) % 4];
    if (c >= 32) name += " type" + std::to_string(c);
    return name;
}

std::string joined_class_names(const MultiLabelVector& labels,
                               const std::vector<std::string>& names) {
    std::string out;
    for (int64_t c = 0; c < labels.num_classes(); ++c) {
        if (!labels.bits[static_cast<size_t>(c)]) continue;
        if (!out.empty()) out += " and ";
        out += c < static_cast<int64_t>(names.size()) ? names[static_cast<size_t>(c)]
                                                      : class_name(c);
    }
    return out;
}

uint64_t labels_hash(const MultiLabelVector& labels) {
    return fnv1a64(labels.bits.data(), labels.bits.size());
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

}  // namespace

MockCaptionProvider::MockCaptionProvider(uint64_t seed, std::vector<std::string> class_names)
    : seed_(seed), class_names_(std::move(class_names)) {}

std::vector<Caption> MockCaptionProvider::generate(const ImageSample& image, int64_t n) {
    static const char* templates[] = {
        "a photo of a %s on a plain background",
        "the image shows a %s",
        "a small picture containing a %s",
        "a %s rendered as a simple icon",
        "a synthetic image of a %s",
    };
    const std::string names = joined_class_names(image.labels, class_names_);
    Rng rng(seed_ ^ labels_hash(image.labels));
    std::vector<Caption> captions;
    captions.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const char* tpl = templates[i % 5];
        char buf[512];
        std::snprintf(buf, sizeof(buf), tpl, names.c_str());
        std::string text = buf;
        // Occasional filler word keeps captions distinct without touching the
        // class tokens.
        if (rng.uniform() < 0.5) text += " scene";
        if (i >= 5) text += " variant " + std::to_string(i);
        captions.push_back({text, image.id, std::nullopt});
    }
    return captions;
}

MockSimilarityScorer::MockSimilarityScorer(uint64_t seed, std::vector<std::string> class_names)
    : class_names_(std::move(class_names)), encoder_(seed) {}

double MockSimilarityScorer::score(const Caption& caption, const ImageSample& image) {
    TextLatent text = encoder_.encode_string(caption.text);
    TextLatent img = encoder_.encode_string(joined_class_names(image.labels, class_names_));
    double dot = 0.0, nt = 0.0, ni = 0.0;
    for (int64_t i = 0; i < text.dim(); ++i) {
        dot += text.values[static_cast<size_t>(i)] * img.values[static_cast<size_t>(i)];
        nt += text.values[static_cast<size_t>(i)] * text.values[static_cast<size_t>(i)];
        ni += img.values[static_cast<size_t>(i)] * img.values[static_cast<size_t>(i)];
    }
    if (nt == 0.0 || ni == 0.0) return 0.0;
    return dot / (std::sqrt(nt) * std::sqrt(ni));
}

std::vector<Caption> generate_captions(CaptionProvider& provider, const ImageSample& image,
                                       int64_t n) {
    if (n < 1) throw InvalidArgumentError("generate_captions: n must be >= 1");
    std::vector<Caption> captions = provider.generate(image, n);
    if (static_cast<int64_t>(captions.size()) != n)
        throw InvalidValueError("generate_captions: provider returned wrong count");
    return captions;
}

std::vector<Caption> filter_captions(const std::vector<Caption>& captions,
                                     SimilarityScorer& scorer, const ImageSample& image,
                                     double threshold) {
    if (captions.empty()) throw InvalidArgumentError("filter_captions: no captions");
    if (threshold < -1.0 || threshold > 1.0)
        throw InvalidArgumentError("filter_captions: threshold outside [-1,1]");
    std::vector<Caption> scored = captions;
    for (auto& c : scored) c.similarity_score = scorer.score(c, image);
    std::vector<Caption> retained;
    for (const auto& c : scored)
        if (*c.similarity_score >= threshold) retained.push_back(c);
    if (retained.empty()) {
        // Everything filtered: keep the single best caption so the attack
        // still has a guide text.
        size_t best = 0;
        for (size_t i = 1; i < scored.size(); ++i)
            if (*scored[i].similarity_score > *scored[best].similarity_score) best = i;
        retained.push_back(scored[best]);
    }
    return retained;
}

TextEncoder::TextEncoder(uint64_t seed, int64_t dim) : seed_(seed), dim_(dim) {
    Rng rng(seed ^ 0xabcdef1234567890ull);
    projection_.resize(static_cast<size_t>(dim_ * token_dim_));
    const double scale = 1.0 / std::sqrt(static_cast<double>(token_dim_));
    for (auto& v : projection_) v = rng.normal(0.0, scale);
}

TextLatent TextEncoder::encode_string(const std::string& text) const {
    std::vector<double> token_sum(static_cast<size_t>(token_dim_), 0.0);
    for (const std::string& tok : tokenize(text)) {
        Rng trng(fnv1a64(tok.data(), tok.size()) ^ seed_);
        for (int64_t i = 0; i < token_dim_; ++i) token_sum[static_cast<size_t>(i)] += trng.normal();
    }
    double norm = 0.0;
    for (double v : token_sum) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (auto& v : token_sum) v /= norm;
    std::vector<double> out(static_cast<size_t>(dim_), 0.0);
    for (int64_t i = 0; i < dim_; ++i) {
        double acc = 0.0;
        const double* row = projection_.data() + i * token_dim_;
        for (int64_t j = 0; j < token_dim_; ++j) acc += row[j] * token_sum[static_cast<size_t>(j)];
        out[static_cast<size_t>(i)] = acc;
    }
    double onorm = 0.0;
    for (double v : out) onorm += v * v;
    onorm = std::sqrt(onorm);
    if (onorm > 0.0)
        for (auto& v : out) v /= onorm;
    return TextLatent(std::move(out));
}

TextLatent TextEncoder::encode(const Caption& caption) const {
    if (caption.text.empty()) throw InvalidArgumentError("encode_text: empty caption");
    return encode_string(caption.text);
}

TextLatent encode_text(const TextEncoder& encoder, const Caption& caption) {
    return encoder.encode(caption);
}

HttpCaptionProvider::HttpCaptionProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {}

std::vector<Caption> HttpCaptionProvider::generate(const ImageSample& image, int64_t n) {
    auto attempt = [&]() -> std::vector<Caption> {
        ++attempts_;
        httplib::Client client(cfg_.endpoint);
        client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
        client.set_read_timeout(0, cfg_.timeout_ms * 1000);
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
            client.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
        nlohmann::json req;
        req["model"] = cfg_.model;
        req["prompt"] = cfg_.prompt;
        req["image_id"] = image.id;
        req["n"] = n;
        auto res = client.Post("/v1/captions", req.dump(), "application/json");
        if (!res)
            throw TransportError("caption provider unreachable: " + cfg_.endpoint);
        if (res->status != 200)
            throw TransportError("caption provider HTTP " + std::to_string(res->status));
        nlohmann::json body = nlohmann::json::parse(res->body);
        std::vector<Caption> captions;
        for (const auto& text : body.at("captions"))
            captions.push_back({text.get<std::string>(), image.id, std::nullopt});
        return captions;
    };
    attempts_ = 0;
    return call_with_retries(attempt, cfg_.max_retries);
}

void save_caption_cache(const std::string& path, const std::vector<CaptionCacheEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("caption cache: cannot open for write: " + path);
    for (const auto& entry : entries) {
        nlohmann::json j;
        j["image_id"] = entry.image_id;
        nlohmann::json caps = nlohmann::json::array();
        for (const auto& c : entry.captions) {
            nlohmann::json cj;
            cj["text"] = c.text;
            if (c.similarity_score)
                cj["score"] = *c.similarity_score;
            else
                cj["score"] = nullptr;
            caps.push_back(cj);
        }
        j["captions"] = caps;
        os << j.dump() << "\n";
    }
    if (!os) throw IoError("caption cache: write failed: " + path);
}

std::vector<CaptionCacheEntry> load_caption_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("caption cache: cannot open: " + path);
    std::vector<CaptionCacheEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CaptionCacheEntry entry;
        entry.image_id = j.at("image_id").get<int64_t>();
        for (const auto& cj : j.at("captions")) {
            Caption c;
            c.text = cj.at("text").get<std::string>();
            c.source_image_id = entry.image_id;
            if (!cj.at("score").is_null()) c.similarity_score = cj.at("score").get<double>();
            entry.captions.push_back(c);
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

// Exposed for the experiments module so dataset class names and mock captions
// agree.
std::string default_class_name(int64_t c) { return class_name(c); }

}  // namespace hashlat
