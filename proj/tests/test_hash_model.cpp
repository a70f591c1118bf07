#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "hashlat/core/rng.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/hash_space.hpp"
#include "oracles.hpp"

using namespace hashlat;

namespace {

// Tiny synthetic set: per-class base color plus smooth per-image wobble.
std::vector<ImageSample> make_toy_dataset(int64_t classes, int64_t per_class, int64_t size,
                                          uint64_t seed, int64_t id_base = 0) {
    Rng rng(seed);
    std::vector<std::vector<double>> base(static_cast<size_t>(classes));
    for (auto& b : base) {
        b = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    }
    std::vector<ImageSample> out;
    int64_t id = id_base;
    for (int64_t c = 0; c < classes; ++c) {
        for (int64_t i = 0; i < per_class; ++i) {
            Tensor pixels({3, size, size});
            double wobble = rng.uniform(-0.05, 0.05);
            for (int64_t ch = 0; ch < 3; ++ch)
                for (int64_t p = 0; p < size * size; ++p)
                    pixels[ch * size * size + p] =
                        std::clamp(base[static_cast<size_t>(c)][static_cast<size_t>(ch)] + wobble +
                                       0.02 * std::sin(0.5 * static_cast<double>(p + ch)),
                                   0.0, 1.0);
            MultiLabelVector labels(std::vector<uint8_t>(static_cast<size_t>(classes), 0));
            labels.bits[static_cast<size_t>(c)] = 1;
            out.push_back({std::move(pixels), std::move(labels), id++});
        }
    }
    return out;
}

ImageSample random_image(Rng& rng, int64_t classes, int64_t size) {
    Tensor pixels({3, size, size});
    for (auto& v : pixels.vec()) v = rng.uniform(0.05, 0.95);
    MultiLabelVector labels(std::vector<uint8_t>(static_cast<size_t>(classes), 0));
    labels.bits[0] = 1;
    return {std::move(pixels), std::move(labels), 0};
}

// Mean intra-class and inter-class Hamming distances on held-out samples.
std::pair<double, double> class_distance_gap(const HashModelParams& model,
                                             const std::vector<ImageSample>& samples) {
    std::vector<HashCode> codes;
    for (const auto& s : samples) codes.push_back(sign_binarize(hash_forward(model, s)));
    double intra = 0.0, inter = 0.0;
    int64_t n_intra = 0, n_inter = 0;
    for (size_t i = 0; i < samples.size(); ++i)
        for (size_t j = i + 1; j < samples.size(); ++j) {
            double d = hamming_distance(codes[i], codes[j]);
            if (pairwise_similarity(samples[i].labels, samples[j].labels)) {
                intra += d;
                ++n_intra;
            } else {
                inter += d;
                ++n_inter;
            }
        }
    return {intra / std::max<int64_t>(n_intra, 1), inter / std::max<int64_t>(n_inter, 1)};
}

}  // namespace

TEST_CASE("hash_forward basics") {
    HashModelParams params = HashModelParams::init(16, 16, 42);

    SUBCASE("zero image with zero biases gives the zero vector") {
        ImageSample zero{Tensor({3, 16, 16}), MultiLabelVector({1}), 0};
        ContinuousCode code = hash_forward(params, zero);
        REQUIRE(code.k() == 16);
        for (double v : code.values) CHECK(v == 0.0);
    }
    SUBCASE("binarized composition lands in {-1,+1}^k") {
        Rng rng(1);
        ImageSample img = random_image(rng, 2, 16);
        HashCode code = sign_binarize(hash_forward(params, img));
        REQUIRE(code.k() == 16);
        for (int8_t b : code.bits) CHECK((b == 1 || b == -1));
    }
    SUBCASE("deterministic forward") {
        Rng rng(2);
        ImageSample img = random_image(rng, 2, 16);
        auto a = hash_forward(params, img);
        auto b = hash_forward(params, img);
        CHECK(a.values == b.values);
    }
    SUBCASE("shape mismatch raises") {
        ImageSample bad{Tensor({3, 8, 8}), MultiLabelVector({1}), 0};
        CHECK_THROWS_AS(hash_forward(params, bad), DimensionError);
    }
}

TEST_CASE("hash model gradients match central finite differences") {
    HashModelParams params = HashModelParams::init(8, 16, 7);
    Rng rng(3);
    ImageSample img = random_image(rng, 2, 16);

    // Scalar head: L = w . output
    std::vector<double> w(8);
    for (auto& v : w) v = rng.normal();

    HashForwardCache cache;
    hash_forward_cached(params, img.pixels, cache);
    std::vector<double> param_grad(static_cast<size_t>(params.total_len()), 0.0);
    Tensor pixel_grad;
    hash_backward(params, img.pixels, cache, w, param_grad, &pixel_grad);

    SUBCASE("w.r.t. parameters") {
        Rng pick(17);
        for (int trial = 0; trial < 10; ++trial) {
            int64_t i = pick.uniform_int(0, params.total_len() - 1);
            auto f = [&](const std::vector<double>& flat) {
                HashModelParams p = params;
                p.flat = flat;
                ContinuousCode code = hash_forward(p, img);
                double acc = 0.0;
                for (size_t j = 0; j < w.size(); ++j) acc += w[j] * code.values[j];
                return acc;
            };
            double fd = oracle::central_diff(f, params.flat, static_cast<size_t>(i));
            CHECK(oracle::rel_err(param_grad[static_cast<size_t>(i)], fd) < 1e-4);
        }
    }
    SUBCASE("w.r.t. pixels") {
        Rng pick(19);
        for (int trial = 0; trial < 10; ++trial) {
            int64_t i = pick.uniform_int(0, img.pixels.numel() - 1);
            auto f = [&](const std::vector<double>& flat) {
                ImageSample tmp = img;
                tmp.pixels.vec() = flat;
                ContinuousCode code = hash_forward(params, tmp);
                double acc = 0.0;
                for (size_t j = 0; j < w.size(); ++j) acc += w[j] * code.values[j];
                return acc;
            };
            double fd = oracle::central_diff(f, img.pixels.vec(), static_cast<size_t>(i));
            CHECK(oracle::rel_err(pixel_grad[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("class hash targets") {
    SUBCASE("Hadamard rows at k=16: pairwise distance exactly k/2") {
        auto targets = class_hash_targets(8, 16, 0);
        REQUIRE(targets.size() == 8);
        for (size_t i = 0; i < targets.size(); ++i)
            for (size_t j = i + 1; j < targets.size(); ++j)
                CHECK(hamming_distance(targets[i], targets[j]) == 8.0);
    }
    SUBCASE("greedy selection for non-power-of-two k keeps codes apart") {
        auto targets = class_hash_targets(6, 12, 9);
        REQUIRE(targets.size() == 6);
        for (size_t i = 0; i < targets.size(); ++i)
            for (size_t j = i + 1; j < targets.size(); ++j)
                CHECK(hamming_distance(targets[i], targets[j]) >= 3.0);
    }
    SUBCASE("multi-label target is re-binarized mean with +1 ties") {
        std::vector<HashCode> targets = {HashCode({1, 1, -1, -1}), HashCode({-1, 1, 1, -1})};
        MultiLabelVector both({1, 1});
        HashCode mixed = sample_hash_target(both, targets);
        // coordinates: mean(1,-1)=0 -> +1; mean(1,1)=1 -> +1; mean(-1,1)=0 -> +1; mean(-1,-1) -> -1
        CHECK(mixed.bits == std::vector<int8_t>{1, 1, 1, -1});
    }
}

TEST_CASE("training separates classes on held-out data") {
    auto train = make_toy_dataset(4, 16, 16, 1234);
    auto held_out = make_toy_dataset(4, 6, 16, 777, 1000);
    HashTrainOptions options;
    options.batch_size = 32;
    options.learning_rate = 5e-3;

    HashModelParams model = train_hash_model(train, 16, 5, 8, options);
    auto [intra, inter] = class_distance_gap(model, held_out);
    CHECK(intra < inter);

    SUBCASE("two seeds differ but both satisfy the ordering") {
        HashModelParams other = train_hash_model(train, 16, 6, 8, options);
        CHECK(other.flat != model.flat);
        auto [intra2, inter2] = class_distance_gap(other, held_out);
        CHECK(intra2 < inter2);
    }
    SUBCASE("identical seed reproduces parameters bitwise") {
        HashModelParams again = train_hash_model(train, 16, 5, 8, options);
        CHECK(again.flat == model.flat);
    }
}

TEST_CASE("epochs=0 returns the initialization") {
    auto train = make_toy_dataset(3, 4, 16, 55);
    HashModelParams trained = train_hash_model(train, 8, 9, 0);
    HashModelParams init = HashModelParams::init(8, 16, 9);
    CHECK(trained.flat == init.flat);
}

TEST_CASE("single-class dataset is a config error") {
    auto train = make_toy_dataset(1, 6, 16, 3);
    CHECK_THROWS_AS(train_hash_model(train, 8, 1, 2), ConfigError);
}

TEST_CASE("checkpoint round-trips exactly") {
    auto train = make_toy_dataset(3, 4, 16, 21);
    HashModelParams model = train_hash_model(train, 8, 13, 2);
    std::string path =
        (std::filesystem::temp_directory_path() / "hashlat_hash_model_test.ckpt").string();
    model.save(path);
    HashModelParams loaded = HashModelParams::load(path);
    CHECK(loaded.k == model.k);
    CHECK(loaded.image_size == model.image_size);
    CHECK(loaded.flat == model.flat);
    std::filesystem::remove(path);
}
