#include "hashlat/align_net.hpp"

#include <cmath>
#include <fstream>

#include "hashlat/core/adamw.hpp"
#include "hashlat/core/errors.hpp"
#include "hashlat/core/kernels.hpp"
#include "hashlat/core/rng.hpp"

namespace hashlat {

HANParams HANParams::init(int64_t k, uint64_t seed, int64_t in_dim, int64_t h1, int64_t h2) {
    if (k < 2) throw DimensionError("HAN: k must be >= 2");
    HANParams p;
    p.in_dim = in_dim;
    p.h1 = h1;
    p.h2 = h2;
    p.k = k;
    p.flat.assign(static_cast<size_t>(p.total_len()), 0.0);
    Rng rng(seed);
    auto init_span = [&](int64_t off, int64_t len, int64_t fan_in) {
        double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (int64_t i = 0; i < len; ++i)
            p.flat[static_cast<size_t>(off + i)] = rng.normal(0.0, scale);
    };
    init_span(p.w1_off(), p.w1_len(), in_dim);
    init_span(p.w2_off(), p.w2_len(), h1);
    init_span(p.w3_off(), p.w3_len(), h2);
    return p;
}

HanForward han_forward(const HANParams& params, const TextLatent& z) {
    if (z.dim() != params.in_dim) throw DimensionError("han_forward: input dim mismatch");
    HanBatchCache cache;
    Tensor x({1, params.in_dim}, z.values);
    han_batch_forward(params, x, cache);
    HanForward out;
    out.text_feature = cache.tf.vec();
    out.guide = TextGuideVector(cache.bt.vec());
    return out;
}

void han_batch_forward(const HANParams& params, const Tensor& x, HanBatchCache& cache) {
    if (x.shape().size() != 2 || x.dim(1) != params.in_dim)
        throw DimensionError("han_batch_forward: input shape mismatch");
    const int64_t n = x.dim(0);
    const double* w1 = params.flat.data() + params.w1_off();
    const double* b1 = params.flat.data() + params.b1_off();
    const double* w2 = params.flat.data() + params.w2_off();
    const double* b2 = params.flat.data() + params.b2_off();
    const double* w3 = params.flat.data() + params.w3_off();
    const double* b3 = params.flat.data() + params.b3_off();

    cache.x = x;
    cache.a1 = Tensor({n, params.h1});
    kernels::matmul_nt(x.data(), w1, cache.a1.data(), n, params.in_dim, params.h1);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < params.h1; ++j) cache.a1[i * params.h1 + j] += b1[j];
    cache.h1v = cache.a1;
    for (auto& v : cache.h1v.vec()) v = v > 0.0 ? v : 0.0;

    cache.tf = Tensor({n, params.h2});
    kernels::matmul_nt(cache.h1v.data(), w2, cache.tf.data(), n, params.h1, params.h2);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < params.h2; ++j) cache.tf[i * params.h2 + j] += b2[j];

    cache.bt = Tensor({n, params.k});
    kernels::matmul_nt(cache.tf.data(), w3, cache.bt.data(), n, params.h2, params.k);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < params.k; ++j)
            cache.bt[i * params.k + j] = std::tanh(cache.bt[i * params.k + j] + b3[j]);
}

void han_batch_backward(const HANParams& params, const HanBatchCache& cache, const Tensor& d_tf,
                        const Tensor& d_bt, std::vector<double>& param_grad, Tensor* d_input) {
    const int64_t n = cache.x.dim(0);
    if (static_cast<int64_t>(param_grad.size()) != params.total_len())
        throw DimensionError("han_batch_backward: bad grad size");

    const double* w2 = params.flat.data() + params.w2_off();
    const double* w3 = params.flat.data() + params.w3_off();
    const double* w1 = params.flat.data() + params.w1_off();
    double* g_w1 = param_grad.data() + params.w1_off();
    double* g_b1 = param_grad.data() + params.b1_off();
    double* g_w2 = param_grad.data() + params.w2_off();
    double* g_b2 = param_grad.data() + params.b2_off();
    double* g_w3 = param_grad.data() + params.w3_off();
    double* g_b3 = param_grad.data() + params.b3_off();

    Tensor da3({n, params.k});
    for (int64_t i = 0; i < n * params.k; ++i) {
        double b = cache.bt[i];
        da3[i] = d_bt[i] * (1.0 - b * b);
    }
    {
        Tensor gw3({params.k, params.h2});
        kernels::matmul_tn(da3.data(), cache.tf.data(), gw3.data(), params.k, n, params.h2);
        for (int64_t i = 0; i < gw3.numel(); ++i) g_w3[i] += gw3[i];
        for (int64_t j = 0; j < params.k; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) acc += da3[i * params.k + j];
            g_b3[j] += acc;
        }
    }
    Tensor dtf = d_tf;
    {
        Tensor from_head({n, params.h2});
        kernels::matmul_nn(da3.data(), w3, from_head.data(), n, params.k, params.h2);
        for (int64_t i = 0; i < dtf.numel(); ++i) dtf[i] += from_head[i];
    }
    {
        Tensor gw2({params.h2, params.h1});
        kernels::matmul_tn(dtf.data(), cache.h1v.data(), gw2.data(), params.h2, n, params.h1);
        for (int64_t i = 0; i < gw2.numel(); ++i) g_w2[i] += gw2[i];
        for (int64_t j = 0; j < params.h2; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) acc += dtf[i * params.h2 + j];
            g_b2[j] += acc;
        }
    }
    Tensor da1({n, params.h1});
    kernels::matmul_nn(dtf.data(), w2, da1.data(), n, params.h2, params.h1);
    for (int64_t i = 0; i < n * params.h1; ++i)
        if (cache.a1[i] <= 0.0) da1[i] = 0.0;
    {
        Tensor gw1({params.h1, params.in_dim});
        kernels::matmul_tn(da1.data(), cache.x.data(), gw1.data(), params.h1, n, params.in_dim);
        for (int64_t i = 0; i < gw1.numel(); ++i) g_w1[i] += gw1[i];
        for (int64_t j = 0; j < params.h1; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) acc += da1[i * params.h1 + j];
            g_b1[j] += acc;
        }
    }
    if (d_input) {
        *d_input = Tensor({n, params.in_dim});
        kernels::matmul_nn(da1.data(), w1, d_input->data(), n, params.h1, params.in_dim);
    }
}

namespace {

void check_batch_pair(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) != b.dim(0) ||
        a.dim(1) != b.dim(1))
        throw DimensionError(std::string(what) + ": batch shape mismatch");
    if (a.dim(0) == 0) throw InvalidArgumentError(std::string(what) + ": empty batch");
}

}  // namespace

double loss_direct(const Tensor& tf, const Tensor& if_feat) {
    Tensor dummy(tf.shape());
    return loss_direct_grad(tf, if_feat, dummy, 0.0);
}

double loss_direct_grad(const Tensor& tf, const Tensor& if_feat, Tensor& d_tf, double scale) {
    check_batch_pair(tf, if_feat, "loss_direct");
    const int64_t n = tf.dim(0), d = tf.dim(1);
    double mean_cos = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* t = tf.data() + i * d;
        const double* v = if_feat.data() + i * d;
        double dot = 0.0, nt = 0.0, nv = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            dot += t[j] * v[j];
            nt += t[j] * t[j];
            nv += v[j] * v[j];
        }
        if (nt == 0.0 || nv == 0.0)
            throw InvalidValueError("loss_direct: zero-norm feature");
        double nt_s = std::sqrt(nt), nv_s = std::sqrt(nv);
        double cosv = dot / (nt_s * nv_s);
        mean_cos += cosv;
        if (scale != 0.0) {
            double* g = d_tf.data() + i * d;
            double c1 = 1.0 / (nt_s * nv_s);
            double c2 = dot / (nt_s * nt_s * nt_s * nv_s);
            // d(1 - mean cos)/dt = -(v/(|t||v|) - (t.v) t/(|t|^3 |v|))/N
            for (int64_t j = 0; j < d; ++j)
                g[j] += scale * (-(v[j] * c1 - t[j] * c2) / static_cast<double>(n));
        }
    }
    return 1.0 - mean_cos / static_cast<double>(n);
}

double loss_quan(const Tensor& bt) {
    Tensor dummy(bt.shape());
    return loss_quan_grad(bt, dummy, 0.0);
}

double loss_quan_grad(const Tensor& bt, Tensor& d_bt, double scale) {
    if (bt.shape().size() != 2 || bt.dim(0) == 0)
        throw InvalidArgumentError("loss_quan: empty batch");
    const int64_t n = bt.dim(0), k = bt.dim(1);
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* b = bt.data() + i * k;
        double sq = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            double dev = std::abs(b[j]) - 1.0;
            sq += dev * dev;
        }
        double r = std::sqrt(sq);
        total += r;
        if (scale != 0.0 && r > 0.0) {
            double* g = d_bt.data() + i * k;
            for (int64_t j = 0; j < k; ++j) {
                double dev = std::abs(b[j]) - 1.0;
                double sgn = b[j] >= 0.0 ? 1.0 : -1.0;
                g[j] += scale * (dev * sgn) / (r * static_cast<double>(n));
            }
        }
    }
    return total / static_cast<double>(n);
}

double loss_ham(const Tensor& bt, const Tensor& b_img) {
    Tensor dummy(bt.shape());
    return loss_ham_grad(bt, b_img, dummy, 0.0);
}

double loss_ham_grad(const Tensor& bt, const Tensor& b_img, Tensor& d_bt, double scale) {
    check_batch_pair(bt, b_img, "loss_ham");
    const int64_t n = bt.dim(0), k = bt.dim(1);
    double total = 0.0;
    for (int64_t i = 0; i < n * k; ++i) {
        double diff = bt[i] - b_img[i];
        total += std::abs(diff);
        if (scale != 0.0 && diff != 0.0)
            d_bt[i] += scale * (diff > 0.0 ? 1.0 : -1.0) / static_cast<double>(n);
    }
    return total / static_cast<double>(n);
}

double loss_align(const AlignConfig& cfg, double direct, double quan, double ham) {
    if (!(std::isfinite(direct) && std::isfinite(quan) && std::isfinite(ham)))
        throw InvalidValueError("loss_align: non-finite part");
    return cfg.alpha * direct + cfg.beta * quan + cfg.gamma * ham;
}

Tensor make_feature_projection(uint64_t seed, int64_t in_dim, int64_t out_dim) {
    Rng rng(seed ^ 0x51f0a3c6e9d2b784ull);
    Tensor proj({out_dim, in_dim});
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : proj.vec()) v = rng.normal(0.0, scale);
    return proj;
}

AlignLossParts align_loss_and_grad(const HANParams& params, const Tensor& x, const Tensor& if_feat,
                                   const Tensor& b_img, const AlignConfig& cfg,
                                   std::vector<double>* param_grad) {
    HanBatchCache cache;
    han_batch_forward(params, x, cache);
    AlignLossParts parts;
    Tensor d_tf({x.dim(0), params.h2});
    Tensor d_bt({x.dim(0), params.k});
    double scale_direct = param_grad ? cfg.alpha : 0.0;
    double scale_quan = param_grad ? cfg.beta : 0.0;
    double scale_ham = param_grad ? cfg.gamma : 0.0;
    parts.direct = loss_direct_grad(cache.tf, if_feat, d_tf, scale_direct);
    parts.quan = loss_quan_grad(cache.bt, d_bt, scale_quan);
    parts.ham = loss_ham_grad(cache.bt, b_img, d_bt, scale_ham);
    parts.total = loss_align(cfg, parts.direct, parts.quan, parts.ham);
    if (param_grad) han_batch_backward(params, cache, d_tf, d_bt, *param_grad, nullptr);
    return parts;
}

AlignmentData prepare_alignment_data(const std::vector<std::pair<TextLatent, ImageSample>>& pairs,
                                     const HashModelParams& hash_model, const AlignConfig& cfg,
                                     int64_t feature_dim) {
    if (pairs.empty()) throw InvalidArgumentError("train_alignment: no pairs");
    const int64_t n = static_cast<int64_t>(pairs.size());
    const int64_t in_dim = pairs.front().first.dim();
    AlignmentData data;
    data.x = Tensor({n, in_dim});
    data.if_feat = Tensor({n, feature_dim});
    data.b_img = Tensor({n, hash_model.k});
    Tensor proj = make_feature_projection(cfg.seed, hash_model.feature_dim(), feature_dim);
    for (int64_t i = 0; i < n; ++i) {
        const auto& [text, image] = pairs[static_cast<size_t>(i)];
        if (text.dim() != in_dim)
            throw DimensionError("train_alignment: inconsistent text latent dims");
        std::copy(text.values.begin(), text.values.end(), data.x.data() + i * in_dim);
        std::vector<double> feature;
        ContinuousCode code = hash_forward_with_feature(hash_model, image, feature);
        HashCode binary = sign_binarize(code);
        for (int64_t j = 0; j < hash_model.k; ++j)
            data.b_img[i * hash_model.k + j] = static_cast<double>(binary.bits[j]);
        for (int64_t r = 0; r < feature_dim; ++r) {
            double acc = 0.0;
            const double* row = proj.data() + r * hash_model.feature_dim();
            for (int64_t c = 0; c < hash_model.feature_dim(); ++c) acc += row[c] * feature[c];
            data.if_feat[i * feature_dim + r] = acc;
        }
    }
    return data;
}

HANParams train_alignment(const HANParams& han,
                          const std::vector<std::pair<TextLatent, ImageSample>>& pairs,
                          const HashModelParams& hash_model, const AlignConfig& cfg,
                          const std::string& log_path) {
    if (cfg.alpha <= 0.0 && cfg.beta <= 0.0 && cfg.gamma <= 0.0)
        throw ConfigError("train_alignment: all loss weights are zero");
    AlignmentData data = prepare_alignment_data(pairs, hash_model, cfg, han.h2);

    HANParams params = han;
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw IoError("train_alignment: cannot open log: " + log_path);
        log << "epoch,loss_direct,loss_quan,loss_ham,loss_align\n";
    }
    if (cfg.epochs <= 0) return params;

    AdamW opt(params.flat.size(), cfg.learning_rate);
    std::vector<double> grad(params.flat.size());
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        AlignLossParts parts = align_loss_and_grad(params, data.x, data.if_feat, data.b_img, cfg,
                                                   &grad);
        if (!std::isfinite(parts.total))
            throw DivergenceError("train_alignment: non-finite loss", static_cast<int>(epoch));
        opt.step(params.flat, grad);
        if (log)
            log << epoch << ',' << parts.direct << ',' << parts.quan << ',' << parts.ham << ','
                << parts.total << "\n";
    }
    return params;
}

Checkpoint HANParams::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.put_i64("meta", {in_dim, h1, h2, k});
    auto span = [&](int64_t off, int64_t len) {
        return std::vector<double>(flat.begin() + off, flat.begin() + off + len);
    };
    ckpt.put("w1", {h1, in_dim}, span(w1_off(), w1_len()));
    ckpt.put("b1", {h1}, span(b1_off(), h1));
    ckpt.put("w2", {h2, h1}, span(w2_off(), w2_len()));
    ckpt.put("b2", {h2}, span(b2_off(), h2));
    ckpt.put("w3", {k, h2}, span(w3_off(), w3_len()));
    ckpt.put("b3", {k}, span(b3_off(), k));
    return ckpt;
}

HANParams HANParams::from_checkpoint(const Checkpoint& ckpt) {
    const auto& meta = ckpt.get_i64("meta");
    if (meta.size() != 4) throw IoError("HAN checkpoint: bad meta");
    HANParams p;
    p.in_dim = meta[0];
    p.h1 = meta[1];
    p.h2 = meta[2];
    p.k = meta[3];
    p.flat.assign(static_cast<size_t>(p.total_len()), 0.0);
    auto copy_in = [&](const char* name, int64_t off, int64_t len) {
        const Tensor& t = ckpt.get(name);
        if (t.numel() != len) throw IoError("HAN checkpoint: bad array size");
        std::copy(t.vec().begin(), t.vec().end(), p.flat.begin() + off);
    };
    copy_in("w1", p.w1_off(), p.w1_len());
    copy_in("b1", p.b1_off(), p.h1);
    copy_in("w2", p.w2_off(), p.w2_len());
    copy_in("b2", p.b2_off(), p.h2);
    copy_in("w3", p.w3_off(), p.w3_len());
    copy_in("b3", p.b3_off(), p.k);
    return p;
}

void HANParams::save(const std::string& path) const { to_checkpoint().save(path); }

HANParams HANParams::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

}  // namespace hashlat
