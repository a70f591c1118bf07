#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hashlat/core/tensor.hpp"
#include "hashlat/hash_space.hpp"

namespace hashlat {

struct ImageSample;  // hash_model.hpp

// Pooled text-encoder embedding; 1024-dim by default.
struct TextLatent {
    std::vector<double> values;

    TextLatent() = default;
    explicit TextLatent(std::vector<double> v) : values(std::move(v)) {}
    int64_t dim() const { return static_cast<int64_t>(values.size()); }
};

struct Caption {
    std::string text;
    int64_t source_image_id = -1;
    std::optional<double> similarity_score;
};

// Caption source. Implementations must return exactly n captions.
class CaptionProvider {
public:
    virtual ~CaptionProvider() = default;
    virtual std::vector<Caption> generate(const ImageSample& image, int64_t n) = 0;
    virtual std::string id() const = 0;
};

class SimilarityScorer {
public:
    virtual ~SimilarityScorer() = default;
    // Score in [-1, 1].
    virtual double score(const Caption& caption, const ImageSample& image) = 0;
    virtual std::string id() const = 0;
};

// Deterministic 1024-dim embedding: seeded hash-of-tokens into a fixed random
// projection, so equal strings map to equal latents and captions sharing
// class tokens correlate.
class TextEncoder {
public:
    explicit TextEncoder(uint64_t seed, int64_t dim = 1024);
    TextLatent encode(const Caption& caption) const;
    TextLatent encode_string(const std::string& text) const;
    int64_t dim() const { return dim_; }

private:
    uint64_t seed_;
    int64_t dim_;
    int64_t token_dim_ = 256;
    std::vector<double> projection_;  // dim x token_dim
};

// Deterministic captions derived from image labels and a seed. Class names
// follow the synthetic dataset (shape + color per class).
class MockCaptionProvider : public CaptionProvider {
public:
    explicit MockCaptionProvider(uint64_t seed, std::vector<std::string> class_names = {});
    std::vector<Caption> generate(const ImageSample& image, int64_t n) override;
    std::string id() const override { return "mock"; }

private:
    uint64_t seed_;
    std::vector<std::string> class_names_;
};

// Cosine similarity between the mock text embedding and a mock image
// embedding built from the image labels in the same projection space, so the
// 0.25 threshold stays meaningful offline.
class MockSimilarityScorer : public SimilarityScorer {
public:
    explicit MockSimilarityScorer(uint64_t seed, std::vector<std::string> class_names = {});
    double score(const Caption& caption, const ImageSample& image) override;
    std::string id() const override { return "mock"; }

private:
    std::vector<std::string> class_names_;
    TextEncoder encoder_;
};

struct HttpProviderConfig {
    std::string endpoint;     // host:port
    std::string model;
    std::string prompt = "Write a simple five-sentence description of this image.";
    int timeout_ms = 2000;
    int max_retries = 2;      // attempts = 1 + max_retries
    std::string api_key_env = "CAPTION_API_KEY";
};

// Thin client for a real captioner behind the CaptionProvider interface.
// Not part of the acceptance-gated path.
class HttpCaptionProvider : public CaptionProvider {
public:
    explicit HttpCaptionProvider(HttpProviderConfig cfg);
    std::vector<Caption> generate(const ImageSample& image, int64_t n) override;
    std::string id() const override { return "http"; }
    int attempts_made() const { return attempts_; }

private:
    HttpProviderConfig cfg_;
    int attempts_ = 0;
};

// Bounded-retry helper; rethrows the last TransportError after
// 1 + max_retries failed attempts.
template <typename Fn>
auto call_with_retries(Fn&& fn, int max_retries) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const TransportError&) {
            if (attempt >= max_retries) throw;
        }
    }
}

// n deterministic captions for the image; provider failures surface as
// TransportError after the provider's bounded retries.
std::vector<Caption> generate_captions(CaptionProvider& provider, const ImageSample& image,
                                       int64_t n);

// Keeps captions scoring >= threshold (scores recorded on the survivors); if
// everything is filtered out, the single best-scoring caption is kept.
std::vector<Caption> filter_captions(const std::vector<Caption>& captions,
                                     SimilarityScorer& scorer, const ImageSample& image,
                                     double threshold);

TextLatent encode_text(const TextEncoder& encoder, const Caption& caption);

// JSONL cache: {"image_id": ..., "captions": [{"text": ..., "score": ...}]}
struct CaptionCacheEntry {
    int64_t image_id = -1;
    std::vector<Caption> captions;
};

void save_caption_cache(const std::string& path, const std::vector<CaptionCacheEntry>& entries);
std::vector<CaptionCacheEntry> load_caption_cache(const std::string& path);

// Canonical class-name phrase for class c ("red circle", ...); the synthetic
// dataset and the mock caption provider share this vocabulary.
std::string default_class_name(int64_t c);

}  // namespace hashlat
