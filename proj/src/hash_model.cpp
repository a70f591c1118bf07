#include "hashlat/hash_model.hpp"

#include <algorithm>
#include <cmath>

#include "hashlat/core/adamw.hpp"
#include "hashlat/core/errors.hpp"
#include "hashlat/core/kernels.hpp"
#include "hashlat/core/rng.hpp"

namespace hashlat {

namespace {

void check_image(const HashModelParams& params, const Tensor& pixels) {
    if (pixels.shape().size() != 3 || pixels.dim(0) != params.in_channels ||
        pixels.dim(1) != params.image_size || pixels.dim(2) != params.image_size)
        throw DimensionError("hash_forward: image dims do not match model config");
}

// positions x oc -> oc x h x w
void transpose_to_chw(const double* pos_major, int64_t positions, int64_t oc, double* chw) {
    for (int64_t c = 0; c < oc; ++c)
        for (int64_t p = 0; p < positions; ++p) chw[c * positions + p] = pos_major[p * oc + c];
}

void transpose_to_pos(const double* chw, int64_t positions, int64_t oc, double* pos_major) {
    for (int64_t c = 0; c < oc; ++c)
        for (int64_t p = 0; p < positions; ++p) pos_major[p * oc + c] = chw[c * positions + p];
}

}  // namespace

HashModelParams HashModelParams::init(int64_t k, int64_t image_size, uint64_t seed) {
    if (k < 2) throw DimensionError("hash model: k must be >= 2");
    if (image_size < 4 || image_size % 4 != 0)
        throw DimensionError("hash model: image size must be a positive multiple of 4");
    HashModelParams p;
    p.k = k;
    p.image_size = image_size;
    p.flat.assign(static_cast<size_t>(p.total_len()), 0.0);
    Rng rng(seed);
    auto init_span = [&](int64_t off, int64_t len, int64_t fan_in) {
        double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (int64_t i = 0; i < len; ++i) p.flat[static_cast<size_t>(off + i)] =
            rng.normal(0.0, scale);
    };
    init_span(p.conv1_w_off(), p.conv1_w_len(), p.in_channels * 9);
    init_span(p.conv2_w_off(), p.conv2_w_len(), p.c1 * 9);
    init_span(p.head_w_off(), p.head_w_len(), p.c2);
    // biases stay zero
    return p;
}

ContinuousCode hash_forward_cached(const HashModelParams& params, const Tensor& pixels,
                                   HashForwardCache& cache) {
    check_image(params, pixels);
    for (double v : pixels.vec())
        if (!std::isfinite(v)) throw InvalidValueError("hash_forward: non-finite pixel");

    const int64_t s = params.image_size;
    const int64_t s2 = s / 2, s4 = s / 4;
    const int64_t pos1 = s * s, pos2 = s2 * s2;
    const double* w1 = params.flat.data() + params.conv1_w_off();
    const double* b1 = params.flat.data() + params.conv1_b_off();
    const double* w2 = params.flat.data() + params.conv2_w_off();
    const double* b2 = params.flat.data() + params.conv2_b_off();
    const double* wh = params.flat.data() + params.head_w_off();
    const double* bh = params.flat.data() + params.head_b_off();

    // conv1
    cache.col1 = Tensor({pos1, params.in_channels * 9});
    kernels::im2col(pixels.data(), params.in_channels, s, s, 3, 1, cache.col1.data());
    Tensor out1({pos1, params.c1});
    kernels::matmul_nt(cache.col1.data(), w1, out1.data(), pos1, params.in_channels * 9,
                       params.c1);
    cache.a1 = Tensor({params.c1, s, s});
    transpose_to_chw(out1.data(), pos1, params.c1, cache.a1.data());
    for (int64_t c = 0; c < params.c1; ++c)
        for (int64_t p = 0; p < pos1; ++p) cache.a1[c * pos1 + p] += b1[c];
    Tensor r1 = cache.a1;
    for (auto& v : r1.vec()) v = v > 0.0 ? v : 0.0;
    cache.p1 = Tensor({params.c1, s2, s2});
    kernels::avgpool2(r1.data(), params.c1, s, s, cache.p1.data());

    // conv2
    cache.col2 = Tensor({pos2, params.c1 * 9});
    kernels::im2col(cache.p1.data(), params.c1, s2, s2, 3, 1, cache.col2.data());
    Tensor out2({pos2, params.c2});
    kernels::matmul_nt(cache.col2.data(), w2, out2.data(), pos2, params.c1 * 9, params.c2);
    cache.a2 = Tensor({params.c2, s2, s2});
    transpose_to_chw(out2.data(), pos2, params.c2, cache.a2.data());
    for (int64_t c = 0; c < params.c2; ++c)
        for (int64_t p = 0; p < pos2; ++p) cache.a2[c * pos2 + p] += b2[c];
    Tensor r2 = cache.a2;
    for (auto& v : r2.vec()) v = v > 0.0 ? v : 0.0;
    cache.p2 = Tensor({params.c2, s4, s4});
    kernels::avgpool2(r2.data(), params.c2, s2, s2, cache.p2.data());

    // global average pool + tanh head
    const int64_t cells = s4 * s4;
    cache.feature.assign(static_cast<size_t>(params.c2), 0.0);
    for (int64_t c = 0; c < params.c2; ++c) {
        double acc = 0.0;
        for (int64_t p = 0; p < cells; ++p) acc += cache.p2[c * cells + p];
        cache.feature[static_cast<size_t>(c)] = acc / static_cast<double>(cells);
    }
    cache.output.assign(static_cast<size_t>(params.k), 0.0);
    for (int64_t j = 0; j < params.k; ++j) {
        double acc = bh[j];
        for (int64_t c = 0; c < params.c2; ++c) acc += wh[j * params.c2 + c] * cache.feature[c];
        cache.output[static_cast<size_t>(j)] = std::tanh(acc);
    }
    return ContinuousCode(cache.output);
}

ContinuousCode hash_forward(const HashModelParams& params, const ImageSample& image) {
    HashForwardCache cache;
    return hash_forward_cached(params, image.pixels, cache);
}

ContinuousCode hash_forward_with_feature(const HashModelParams& params, const ImageSample& image,
                                         std::vector<double>& feature_out) {
    HashForwardCache cache;
    ContinuousCode code = hash_forward_cached(params, image.pixels, cache);
    feature_out = cache.feature;
    return code;
}

void hash_backward(const HashModelParams& params, const Tensor& pixels,
                   const HashForwardCache& cache, const std::vector<double>& d_output,
                   std::vector<double>& param_grad, Tensor* pixel_grad) {
    if (static_cast<int64_t>(d_output.size()) != params.k)
        throw DimensionError("hash_backward: bad gradient length");
    if (static_cast<int64_t>(param_grad.size()) != params.total_len())
        throw DimensionError("hash_backward: bad param grad length");

    const int64_t s = params.image_size;
    const int64_t s2 = s / 2, s4 = s / 4;
    const int64_t pos1 = s * s, pos2 = s2 * s2;
    const int64_t cells = s4 * s4;
    const double* w2 = params.flat.data() + params.conv2_w_off();
    const double* wh = params.flat.data() + params.head_w_off();
    const double* w1 = params.flat.data() + params.conv1_w_off();
    double* g_w1 = param_grad.data() + params.conv1_w_off();
    double* g_b1 = param_grad.data() + params.conv1_b_off();
    double* g_w2 = param_grad.data() + params.conv2_w_off();
    double* g_b2 = param_grad.data() + params.conv2_b_off();
    double* g_wh = param_grad.data() + params.head_w_off();
    double* g_bh = param_grad.data() + params.head_b_off();

    // head
    std::vector<double> da(static_cast<size_t>(params.k));
    for (int64_t j = 0; j < params.k; ++j) {
        double o = cache.output[static_cast<size_t>(j)];
        da[static_cast<size_t>(j)] = d_output[static_cast<size_t>(j)] * (1.0 - o * o);
    }
    std::vector<double> dfeat(static_cast<size_t>(params.c2), 0.0);
    for (int64_t j = 0; j < params.k; ++j) {
        g_bh[j] += da[static_cast<size_t>(j)];
        for (int64_t c = 0; c < params.c2; ++c) {
            g_wh[j * params.c2 + c] += da[static_cast<size_t>(j)] * cache.feature[c];
            dfeat[static_cast<size_t>(c)] += da[static_cast<size_t>(j)] * wh[j * params.c2 + c];
        }
    }

    // global pool backward
    Tensor dp2({params.c2, s4, s4});
    for (int64_t c = 0; c < params.c2; ++c) {
        double g = dfeat[static_cast<size_t>(c)] / static_cast<double>(cells);
        for (int64_t p = 0; p < cells; ++p) dp2[c * cells + p] = g;
    }

    // pool2 + relu2 backward
    Tensor dr2({params.c2, s2, s2});
    dr2.fill(0.0);
    kernels::avgpool2_backward(dp2.data(), params.c2, s2, s2, dr2.data());
    for (int64_t i = 0; i < dr2.numel(); ++i)
        if (cache.a2[i] <= 0.0) dr2[i] = 0.0;

    // conv2 backward
    Tensor da2_pos({pos2, params.c2});
    transpose_to_pos(dr2.data(), pos2, params.c2, da2_pos.data());
    for (int64_t c = 0; c < params.c2; ++c) {
        double acc = 0.0;
        for (int64_t p = 0; p < pos2; ++p) acc += da2_pos[p * params.c2 + c];
        g_b2[c] += acc;
    }
    {
        Tensor gw2({params.c2, params.c1 * 9});
        kernels::matmul_tn(da2_pos.data(), cache.col2.data(), gw2.data(), params.c2, pos2,
                           params.c1 * 9);
        for (int64_t i = 0; i < gw2.numel(); ++i) g_w2[i] += gw2[i];
    }
    Tensor dcol2({pos2, params.c1 * 9});
    kernels::matmul_nn(da2_pos.data(), w2, dcol2.data(), pos2, params.c2, params.c1 * 9);
    Tensor dp1({params.c1, s2, s2});
    dp1.fill(0.0);
    kernels::col2im(dcol2.data(), params.c1, s2, s2, 3, 1, dp1.data());

    // pool1 + relu1 backward
    Tensor dr1({params.c1, s, s});
    dr1.fill(0.0);
    kernels::avgpool2_backward(dp1.data(), params.c1, s, s, dr1.data());
    for (int64_t i = 0; i < dr1.numel(); ++i)
        if (cache.a1[i] <= 0.0) dr1[i] = 0.0;

    // conv1 backward
    Tensor da1_pos({pos1, params.c1});
    transpose_to_pos(dr1.data(), pos1, params.c1, da1_pos.data());
    for (int64_t c = 0; c < params.c1; ++c) {
        double acc = 0.0;
        for (int64_t p = 0; p < pos1; ++p) acc += da1_pos[p * params.c1 + c];
        g_b1[c] += acc;
    }
    {
        Tensor gw1({params.c1, params.in_channels * 9});
        kernels::matmul_tn(da1_pos.data(), cache.col1.data(), gw1.data(), params.c1, pos1,
                           params.in_channels * 9);
        for (int64_t i = 0; i < gw1.numel(); ++i) g_w1[i] += gw1[i];
    }
    if (pixel_grad) {
        Tensor dcol1({pos1, params.in_channels * 9});
        kernels::matmul_nn(da1_pos.data(), w1, dcol1.data(), pos1, params.c1,
                           params.in_channels * 9);
        if (!pixel_grad->same_shape(pixels)) *pixel_grad = Tensor(pixels.shape());
        pixel_grad->fill(0.0);
        kernels::col2im(dcol1.data(), params.in_channels, s, s, 3, 1, pixel_grad->data());
    }
}

std::vector<HashCode> class_hash_targets(int64_t num_classes, int64_t k, uint64_t seed) {
    if (num_classes < 1) throw InvalidArgumentError("class_hash_targets: need >= 1 class");
    if (k < 2) throw InvalidArgumentError("class_hash_targets: k must be >= 2");
    const bool pow2 = (k & (k - 1)) == 0;
    std::vector<HashCode> targets;
    if (pow2 && num_classes < k) {
        // Sylvester-Hadamard rows (skipping the all-ones row 0); any two rows
        // are at distance exactly k/2.
        std::vector<int8_t> h(static_cast<size_t>(k) * k, 1);
        for (int64_t block = 1; block < k; block *= 2)
            for (int64_t i = 0; i < block; ++i)
                for (int64_t j = 0; j < block; ++j) {
                    int8_t v = h[static_cast<size_t>(i * k + j)];
                    h[static_cast<size_t>(i * k + j + block)] = v;
                    h[static_cast<size_t>((i + block) * k + j)] = v;
                    h[static_cast<size_t>((i + block) * k + j + block)] = static_cast<int8_t>(-v);
                }
        for (int64_t c = 0; c < num_classes; ++c) {
            std::vector<int8_t> row(h.begin() + static_cast<int64_t>((c + 1) * k),
                                    h.begin() + static_cast<int64_t>((c + 2) * k));
            targets.emplace_back(std::move(row));
        }
        return targets;
    }
    // Greedy max-min-distance selection from random +-1 candidates.
    Rng rng(seed);
    auto random_code = [&]() {
        std::vector<int8_t> bits(static_cast<size_t>(k));
        for (auto& b : bits) b = rng.uniform() < 0.5 ? int8_t{-1} : int8_t{1};
        return HashCode(std::move(bits));
    };
    targets.push_back(random_code());
    const int64_t candidates = 256;
    while (static_cast<int64_t>(targets.size()) < num_classes) {
        HashCode best;
        double best_min = -1.0;
        for (int64_t t = 0; t < candidates; ++t) {
            HashCode cand = random_code();
            double mind = static_cast<double>(k) + 1;
            for (const auto& chosen : targets)
                mind = std::min(mind, hamming_distance(cand, chosen));
            if (mind > best_min) {
                best_min = mind;
                best = cand;
            }
        }
        targets.push_back(best);
    }
    return targets;
}

HashCode sample_hash_target(const MultiLabelVector& labels,
                            const std::vector<HashCode>& class_targets) {
    if (labels.num_classes() != static_cast<int64_t>(class_targets.size()))
        throw DimensionError("sample_hash_target: label/targets mismatch");
    if (!labels.any()) throw InvalidValueError("sample_hash_target: no labels set");
    const int64_t k = class_targets.front().k();
    std::vector<double> mean(static_cast<size_t>(k), 0.0);
    int64_t count = 0;
    for (int64_t c = 0; c < labels.num_classes(); ++c) {
        if (!labels.bits[static_cast<size_t>(c)]) continue;
        ++count;
        for (int64_t j = 0; j < k; ++j)
            mean[static_cast<size_t>(j)] += class_targets[static_cast<size_t>(c)].bits[j];
    }
    for (auto& v : mean) v /= static_cast<double>(count);
    return sign_binarize(ContinuousCode(std::move(mean)));
}

HashModelParams train_hash_model(const std::vector<ImageSample>& dataset, int64_t k,
                                 uint64_t seed, int64_t epochs,
                                 const HashTrainOptions& options) {
    if (dataset.empty()) throw ConfigError("train_hash_model: empty dataset");
    const int64_t num_classes = dataset.front().labels.num_classes();
    std::vector<bool> class_present(static_cast<size_t>(num_classes), false);
    for (const auto& sample : dataset) {
        if (sample.labels.num_classes() != num_classes)
            throw DimensionError("train_hash_model: inconsistent label lengths");
        for (int64_t c = 0; c < num_classes; ++c)
            if (sample.labels.bits[static_cast<size_t>(c)]) class_present[static_cast<size_t>(c)] = true;
    }
    int64_t present = 0;
    for (bool b : class_present) present += b ? 1 : 0;
    if (present < 2) throw ConfigError("train_hash_model: need at least two classes present");

    HashModelParams params = HashModelParams::init(k, dataset.front().pixels.dim(1), seed);
    if (epochs <= 0) return params;

    auto targets = class_hash_targets(num_classes, k, seed);
    std::vector<HashCode> sample_targets;
    sample_targets.reserve(dataset.size());
    for (const auto& s : dataset) sample_targets.push_back(sample_hash_target(s.labels, targets));

    AdamW opt(params.flat.size(), options.learning_rate);
    Rng shuffle_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int64_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    const int64_t n = static_cast<int64_t>(dataset.size());
    const int64_t batch = std::min<int64_t>(options.batch_size, n);
    std::vector<double> grad(params.flat.size());
    std::vector<std::vector<double>> slab(static_cast<size_t>(batch));
    std::vector<HashForwardCache> caches(static_cast<size_t>(batch));

    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (int64_t start = 0; start < n; start += batch) {
            const int64_t cur = std::min(batch, n - start);
            const bool par = kernels::parallel_enabled() && cur > 1;
            // Per-sample gradients into private slabs (parallel), accumulated
            // serially in batch order.
#pragma omp parallel for schedule(dynamic) if (par)
            for (int64_t b = 0; b < cur; ++b) {
                const auto& sample = dataset[static_cast<size_t>(order[start + b])];
                const auto& tgt = sample_targets[static_cast<size_t>(order[start + b])];
                auto& sg = slab[static_cast<size_t>(b)];
                sg.assign(params.flat.size(), 0.0);
                hash_forward_cached(params, sample.pixels, caches[static_cast<size_t>(b)]);
                const auto& out = caches[static_cast<size_t>(b)].output;
                std::vector<double> dout(static_cast<size_t>(k));
                for (int64_t j = 0; j < k; ++j) {
                    double o = out[static_cast<size_t>(j)];
                    double c = static_cast<double>(tgt.bits[j]);
                    double ao = std::abs(o);
                    double sg_o = o >= 0.0 ? 1.0 : -1.0;
                    dout[static_cast<size_t>(j)] =
                        (2.0 / static_cast<double>(k)) *
                        ((o - c) + options.quant_weight * (ao - 1.0) * sg_o) /
                        static_cast<double>(cur);
                }
                hash_backward(params, sample.pixels, caches[static_cast<size_t>(b)], dout, sg,
                              nullptr);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            for (int64_t b = 0; b < cur; ++b) {
                const auto& sg = slab[static_cast<size_t>(b)];
                for (size_t i = 0; i < grad.size(); ++i) grad[i] += sg[i];
            }
            opt.step(params.flat, grad);
        }
    }
    return params;
}

Checkpoint HashModelParams::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.put_i64("meta", {k, image_size, in_channels, c1, c2});
    auto span = [&](int64_t off, int64_t len) {
        return std::vector<double>(flat.begin() + off, flat.begin() + off + len);
    };
    ckpt.put("conv1_w", {c1, in_channels, 3, 3}, span(conv1_w_off(), conv1_w_len()));
    ckpt.put("conv1_b", {c1}, span(conv1_b_off(), c1));
    ckpt.put("conv2_w", {c2, c1, 3, 3}, span(conv2_w_off(), conv2_w_len()));
    ckpt.put("conv2_b", {c2}, span(conv2_b_off(), c2));
    ckpt.put("head_w", {k, c2}, span(head_w_off(), head_w_len()));
    ckpt.put("head_b", {k}, span(head_b_off(), k));
    return ckpt;
}

HashModelParams HashModelParams::from_checkpoint(const Checkpoint& ckpt) {
    const auto& meta = ckpt.get_i64("meta");
    if (meta.size() != 5) throw IoError("hash model checkpoint: bad meta");
    HashModelParams p;
    p.k = meta[0];
    p.image_size = meta[1];
    p.in_channels = meta[2];
    p.c1 = meta[3];
    p.c2 = meta[4];
    p.flat.assign(static_cast<size_t>(p.total_len()), 0.0);
    auto copy_in = [&](const char* name, int64_t off, int64_t len) {
        const Tensor& t = ckpt.get(name);
        if (t.numel() != len) throw IoError("hash model checkpoint: bad array size");
        std::copy(t.vec().begin(), t.vec().end(), p.flat.begin() + off);
    };
    copy_in("conv1_w", p.conv1_w_off(), p.conv1_w_len());
    copy_in("conv1_b", p.conv1_b_off(), p.c1);
    copy_in("conv2_w", p.conv2_w_off(), p.conv2_w_len());
    copy_in("conv2_b", p.conv2_b_off(), p.c2);
    copy_in("head_w", p.head_w_off(), p.head_w_len());
    copy_in("head_b", p.head_b_off(), p.k);
    return p;
}

void HashModelParams::save(const std::string& path) const { to_checkpoint().save(path); }

HashModelParams HashModelParams::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

}  // namespace hashlat
