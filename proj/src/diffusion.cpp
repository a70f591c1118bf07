#include "hashlat/diffusion.hpp"

#include <cmath>

#include "hashlat/core/errors.hpp"
#include "hashlat/core/kernels.hpp"
#include "hashlat/core/rng.hpp"

namespace hashlat {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

ToyDiffusionBackend::ToyDiffusionBackend(const BackendConfig& cfg) : cfg_(cfg) {
    if (cfg_.total_timesteps < 1) throw ConfigError("backend: total_timesteps must be >= 1");
    if (cfg_.latent_channels < 1 || cfg_.latent_height < 1 || cfg_.latent_width < 1)
        throw ConfigError("backend: bad latent dims");
    if (cfg_.latent_channels > 32)
        throw ConfigError("backend: toy denoiser supports at most 32 latent channels");
    pos_feat_ = cfg_.latent_channels + 4;

    Rng rng(cfg_.seed);
    auto init = [&](std::vector<double>& w, int64_t len, int64_t fan_in) {
        w.resize(static_cast<size_t>(len));
        double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w) v = rng.normal(0.0, scale);
    };
    init(wq_, heads_ * head_dim_ * pos_feat_, pos_feat_);
    init(wk_, heads_ * head_dim_ * token_dim_, token_dim_);
    init(wv_, heads_ * head_dim_ * token_dim_, token_dim_);
    init(wo_, cfg_.latent_channels * heads_ * head_dim_, heads_ * head_dim_);
    const int64_t mlp_in = cfg_.latent_channels + 8;  // z channels + pe + time embedding
    init(wm1_, mlp_hidden_ * mlp_in, mlp_in);
    bm1_.assign(static_cast<size_t>(mlp_hidden_), 0.0);
    init(wm2_, cfg_.latent_channels * mlp_hidden_, mlp_hidden_);

    betas_.resize(static_cast<size_t>(cfg_.total_timesteps + 1), 0.0);
    alpha_bars_.resize(static_cast<size_t>(cfg_.total_timesteps + 1), 1.0);
    for (int64_t t = 1; t <= cfg_.total_timesteps; ++t) {
        double frac = cfg_.total_timesteps == 1
                          ? 0.0
                          : static_cast<double>(t - 1) / static_cast<double>(cfg_.total_timesteps - 1);
        betas_[static_cast<size_t>(t)] = cfg_.beta_start + (cfg_.beta_end - cfg_.beta_start) * frac;
        alpha_bars_[static_cast<size_t>(t)] =
            alpha_bars_[static_cast<size_t>(t - 1)] * (1.0 - betas_[static_cast<size_t>(t)]);
    }
}

double ToyDiffusionBackend::alpha_bar(int t) const {
    if (t < 0 || t > cfg_.total_timesteps) throw RangeError("alpha_bar: t outside schedule");
    return alpha_bars_[static_cast<size_t>(t)];
}

void ToyDiffusionBackend::check_latent(const Tensor& z) const {
    if (z.shape().size() != 3 || z.dim(0) != cfg_.latent_channels ||
        z.dim(1) != cfg_.latent_height || z.dim(2) != cfg_.latent_width)
        throw DimensionError("backend: latent shape mismatch");
    for (double v : z.vec())
        if (!std::isfinite(v)) throw InvalidValueError("backend: non-finite latent");
}

void ToyDiffusionBackend::check_text(const TextLatent& text) const {
    if (text.dim() != tokens_ * token_dim_)
        throw DimensionError("backend: text latent dim mismatch");
}

// ---------------------------------------------------------------------------
// Autoencoder

void ToyDiffusionBackend::fit_autoencoder(const std::vector<ImageSample>& images) {
    if (images.empty()) throw InvalidArgumentError("fit_autoencoder: no images");
    const Tensor& first = images.front().pixels;
    image_shape_ = first.shape();
    pixel_dim_ = first.numel();
    const int64_t n = static_cast<int64_t>(images.size());
    const int64_t d = pixel_dim_;
    const int64_t r = cfg_.latent_dim();

    mean_.assign(static_cast<size_t>(d), 0.0);
    for (const auto& img : images) {
        if (img.pixels.shape() != image_shape_)
            throw DimensionError("fit_autoencoder: inconsistent image shapes");
        for (int64_t i = 0; i < d; ++i) mean_[static_cast<size_t>(i)] += img.pixels[i];
    }
    for (auto& v : mean_) v /= static_cast<double>(n);

    std::vector<double> x(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j)
            x[static_cast<size_t>(i * d + j)] =
                images[static_cast<size_t>(i)].pixels[j] - mean_[static_cast<size_t>(j)];

    // Gram trick: eigenvectors of X X^T (n x n) give the principal directions
    // as X^T u / sqrt(lambda).
    std::vector<double> gram(static_cast<size_t>(n * n));
    kernels::matmul_nt(x.data(), x.data(), gram.data(), n, d, n);
    std::vector<double> eigvals, eigvecs;
    kernels::jacobi_eigh(gram, n, eigvals, eigvecs);

    components_.assign(static_cast<size_t>(r * d), 0.0);
    scales_.assign(static_cast<size_t>(r), 1.0);
    const int64_t keep = std::min(r, n);
    const double floor_scale = 1e-6;
    for (int64_t j = 0; j < keep; ++j) {
        double lambda = eigvals[static_cast<size_t>(j)];
        if (lambda <= 1e-10) break;
        double inv = 1.0 / std::sqrt(lambda);
        double* comp = components_.data() + j * d;
        for (int64_t i = 0; i < n; ++i) {
            double u = eigvecs[static_cast<size_t>(i * n + j)] * inv;
            const double* xi = x.data() + i * d;
            for (int64_t c = 0; c < d; ++c) comp[c] += u * xi[c];
        }
        scales_[static_cast<size_t>(j)] =
            std::max(std::sqrt(lambda / static_cast<double>(n)), floor_scale);
    }
    fitted_ = true;
}

LatentState ToyDiffusionBackend::encode(const Tensor& pixels) const {
    if (!fitted_) throw StateError("backend: autoencoder not fitted");
    if (pixels.shape() != image_shape_)
        throw DimensionError("encode: image dims do not match backend config");
    const int64_t d = pixel_dim_, r = cfg_.latent_dim();
    std::vector<double> centered(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) centered[static_cast<size_t>(i)] = pixels[i] - mean_[static_cast<size_t>(i)];
    LatentState out;
    out.z = Tensor({cfg_.latent_channels, cfg_.latent_height, cfg_.latent_width});
    for (int64_t j = 0; j < r; ++j) {
        const double* comp = components_.data() + j * d;
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) acc += comp[i] * centered[static_cast<size_t>(i)];
        out.z[j] = acc / scales_[static_cast<size_t>(j)];
    }
    out.timestep = 0;
    return out;
}

Tensor ToyDiffusionBackend::decode(const LatentState& z) const {
    if (!fitted_) throw StateError("backend: autoencoder not fitted");
    check_latent(z.z);
    const int64_t d = pixel_dim_, r = cfg_.latent_dim();
    Tensor pixels(image_shape_);
    for (int64_t i = 0; i < d; ++i) pixels[i] = mean_[static_cast<size_t>(i)];
    for (int64_t j = 0; j < r; ++j) {
        double w = z.z[j] * scales_[static_cast<size_t>(j)];
        if (w == 0.0) continue;
        const double* comp = components_.data() + j * d;
        for (int64_t i = 0; i < d; ++i) pixels[i] += w * comp[i];
    }
    for (auto& v : pixels.vec()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return pixels;
}

Tensor ToyDiffusionBackend::decode_vjp(const LatentState& z, const Tensor& d_pixels) const {
    if (!fitted_) throw StateError("backend: autoencoder not fitted");
    check_latent(z.z);
    if (d_pixels.numel() != pixel_dim_) throw DimensionError("decode_vjp: bad gradient shape");
    const int64_t d = pixel_dim_, r = cfg_.latent_dim();
    // Recompute pre-clamp pixels for the clamp mask.
    std::vector<double> pre(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) pre[static_cast<size_t>(i)] = mean_[static_cast<size_t>(i)];
    for (int64_t j = 0; j < r; ++j) {
        double w = z.z[j] * scales_[static_cast<size_t>(j)];
        if (w == 0.0) continue;
        const double* comp = components_.data() + j * d;
        for (int64_t i = 0; i < d; ++i) pre[static_cast<size_t>(i)] += w * comp[i];
    }
    Tensor dz({cfg_.latent_channels, cfg_.latent_height, cfg_.latent_width});
    for (int64_t j = 0; j < r; ++j) {
        const double* comp = components_.data() + j * d;
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double p = pre[static_cast<size_t>(i)];
            if (p > 0.0 && p < 1.0) acc += comp[i] * d_pixels[i];
        }
        dz[j] = acc * scales_[static_cast<size_t>(j)];
    }
    return dz;
}

// ---------------------------------------------------------------------------
// Denoiser: per-position MLP + single cross-attention block over text tokens.

struct ToyDiffusionBackend::AttnCache {
    int64_t positions = 0;
    std::vector<double> keys;    // heads x tokens x head_dim
    std::vector<double> vals;    // heads x tokens x head_dim
    std::vector<double> queries; // heads x positions x head_dim
    std::vector<double> attn;    // heads x positions x tokens (softmax)
    std::vector<double> q_in;    // positions x pos_feat
};

namespace {

inline void position_features(int64_t h_idx, int64_t w_idx, int64_t height, int64_t width,
                              double* pe) {
    pe[0] = std::sin(2.0 * kPi * static_cast<double>(h_idx) / static_cast<double>(height));
    pe[1] = std::cos(2.0 * kPi * static_cast<double>(h_idx) / static_cast<double>(height));
    pe[2] = std::sin(2.0 * kPi * static_cast<double>(w_idx) / static_cast<double>(width));
    pe[3] = std::cos(2.0 * kPi * static_cast<double>(w_idx) / static_cast<double>(width));
}

inline void time_features(int t, int64_t total, double* te) {
    double frac = 2.0 * kPi * static_cast<double>(t) / static_cast<double>(total);
    te[0] = std::sin(frac);
    te[1] = std::cos(frac);
    te[2] = std::sin(2.0 * frac);
    te[3] = std::cos(2.0 * frac);
}

}  // namespace

void ToyDiffusionBackend::attention_forward(const Tensor& z, const TextLatent& text,
                                            AttnCache& cache) const {
    const int64_t ch = cfg_.latent_channels;
    const int64_t hh = cfg_.latent_height, ww = cfg_.latent_width;
    const int64_t positions = hh * ww;
    cache.positions = positions;
    cache.keys.assign(static_cast<size_t>(heads_ * tokens_ * head_dim_), 0.0);
    cache.vals.assign(static_cast<size_t>(heads_ * tokens_ * head_dim_), 0.0);
    cache.queries.assign(static_cast<size_t>(heads_ * positions * head_dim_), 0.0);
    cache.attn.assign(static_cast<size_t>(heads_ * positions * tokens_), 0.0);
    cache.q_in.assign(static_cast<size_t>(positions * pos_feat_), 0.0);

    for (int64_t s = 0; s < heads_; ++s) {
        for (int64_t j = 0; j < tokens_; ++j) {
            const double* tok = text.values.data() + j * token_dim_;
            double* key = cache.keys.data() + (s * tokens_ + j) * head_dim_;
            double* val = cache.vals.data() + (s * tokens_ + j) * head_dim_;
            const double* wk = wk_.data() + s * head_dim_ * token_dim_;
            const double* wv = wv_.data() + s * head_dim_ * token_dim_;
            for (int64_t r = 0; r < head_dim_; ++r) {
                double ka = 0.0, va = 0.0;
                for (int64_t c = 0; c < token_dim_; ++c) {
                    ka += wk[r * token_dim_ + c] * tok[c];
                    va += wv[r * token_dim_ + c] * tok[c];
                }
                key[r] = ka;
                val[r] = va;
            }
        }
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    for (int64_t p = 0; p < positions; ++p) {
        double* qin = cache.q_in.data() + p * pos_feat_;
        for (int64_t c = 0; c < ch; ++c) qin[c] = z[c * positions + p];
        position_features(p / ww, p % ww, hh, ww, qin + ch);
        for (int64_t s = 0; s < heads_; ++s) {
            double* q = cache.queries.data() + (s * positions + p) * head_dim_;
            const double* wq = wq_.data() + s * head_dim_ * pos_feat_;
            for (int64_t r = 0; r < head_dim_; ++r) {
                double acc = 0.0;
                for (int64_t c = 0; c < pos_feat_; ++c) acc += wq[r * pos_feat_ + c] * qin[c];
                q[r] = acc;
            }
            double* a = cache.attn.data() + (s * positions + p) * tokens_;
            double maxl = -1e300;
            for (int64_t j = 0; j < tokens_; ++j) {
                const double* key = cache.keys.data() + (s * tokens_ + j) * head_dim_;
                double logit = 0.0;
                for (int64_t r = 0; r < head_dim_; ++r) logit += q[r] * key[r];
                a[j] = logit * inv_sqrt;
                maxl = std::max(maxl, a[j]);
            }
            double sum = 0.0;
            for (int64_t j = 0; j < tokens_; ++j) {
                a[j] = std::exp(a[j] - maxl);
                sum += a[j];
            }
            for (int64_t j = 0; j < tokens_; ++j) a[j] /= sum;
        }
    }
}

AttentionMap ToyDiffusionBackend::attention(const LatentState& z, const TextLatent& text) const {
    check_latent(z.z);
    check_text(text);
    AttnCache cache;
    attention_forward(z.z, text, cache);
    AttentionMap maps;
    maps.values = Tensor({heads_, cfg_.latent_height, cfg_.latent_width});
    // Saliency per head and position: concentration of the token softmax
    // (sum of squared weights), in (0, 1].
    for (int64_t s = 0; s < heads_; ++s)
        for (int64_t p = 0; p < cache.positions; ++p) {
            const double* a = cache.attn.data() + (s * cache.positions + p) * tokens_;
            double acc = 0.0;
            for (int64_t j = 0; j < tokens_; ++j) acc += a[j] * a[j];
            maps.values[s * cache.positions + p] = acc;
        }
    return maps;
}

Tensor ToyDiffusionBackend::attention_vjp(const LatentState& z, const TextLatent& text,
                                          const Tensor& d_maps) const {
    check_latent(z.z);
    check_text(text);
    if (d_maps.numel() != heads_ * cfg_.latent_height * cfg_.latent_width)
        throw DimensionError("attention_vjp: bad gradient shape");
    AttnCache cache;
    attention_forward(z.z, text, cache);

    const int64_t ch = cfg_.latent_channels;
    const int64_t positions = cache.positions;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    Tensor dz(z.z.shape());
    dz.fill(0.0);
    for (int64_t p = 0; p < positions; ++p) {
        double dqin[64] = {0.0};
        for (int64_t s = 0; s < heads_; ++s) {
            const double* a = cache.attn.data() + (s * positions + p) * tokens_;
            double dm = d_maps[s * positions + p];
            // maps = sum_j a_j^2 -> da_j = 2 a_j dm, then softmax backward.
            double dot = 0.0;
            for (int64_t j = 0; j < tokens_; ++j) dot += a[j] * (2.0 * a[j] * dm);
            // dlogit_j = a_j (da_j - sum_i a_i da_i)
            const double* wq = wq_.data() + s * head_dim_ * pos_feat_;
            double dq[64] = {0.0};
            for (int64_t j = 0; j < tokens_; ++j) {
                double dlogit = a[j] * (2.0 * a[j] * dm - dot) * inv_sqrt;
                if (dlogit == 0.0) continue;
                const double* key = cache.keys.data() + (s * tokens_ + j) * head_dim_;
                for (int64_t r = 0; r < head_dim_; ++r) dq[r] += dlogit * key[r];
            }
            for (int64_t r = 0; r < head_dim_; ++r)
                for (int64_t c = 0; c < pos_feat_; ++c) dqin[c] += wq[r * pos_feat_ + c] * dq[r];
        }
        for (int64_t c = 0; c < ch; ++c) dz[c * positions + p] += dqin[c];
    }
    return dz;
}

Tensor ToyDiffusionBackend::eps(const Tensor& z, int t, const TextLatent& text) const {
    check_latent(z);
    check_text(text);
    const int64_t ch = cfg_.latent_channels;
    const int64_t positions = cfg_.latent_height * cfg_.latent_width;
    AttnCache cache;
    attention_forward(z, text, cache);

    double te[4];
    time_features(t, cfg_.total_timesteps, te);
    const int64_t mlp_in = ch + 8;

    Tensor out({ch, cfg_.latent_height, cfg_.latent_width});
    std::vector<double> concat(static_cast<size_t>(heads_ * head_dim_));
    std::vector<double> m_in(static_cast<size_t>(mlp_in));
    std::vector<double> hidden(static_cast<size_t>(mlp_hidden_));
    for (int64_t p = 0; p < positions; ++p) {
        // attention output
        for (int64_t s = 0; s < heads_; ++s) {
            const double* a = cache.attn.data() + (s * positions + p) * tokens_;
            double* slot = concat.data() + s * head_dim_;
            for (int64_t r = 0; r < head_dim_; ++r) slot[r] = 0.0;
            for (int64_t j = 0; j < tokens_; ++j) {
                const double* val = cache.vals.data() + (s * tokens_ + j) * head_dim_;
                for (int64_t r = 0; r < head_dim_; ++r) slot[r] += a[j] * val[r];
            }
        }
        // per-position MLP on [z, pe, te]
        const double* qin = cache.q_in.data() + p * pos_feat_;
        for (int64_t c = 0; c < ch; ++c) m_in[static_cast<size_t>(c)] = qin[c];
        for (int64_t c = 0; c < 4; ++c) m_in[static_cast<size_t>(ch + c)] = qin[ch + c];
        for (int64_t c = 0; c < 4; ++c) m_in[static_cast<size_t>(ch + 4 + c)] = te[c];
        for (int64_t r = 0; r < mlp_hidden_; ++r) {
            double acc = bm1_[static_cast<size_t>(r)];
            for (int64_t c = 0; c < mlp_in; ++c) acc += wm1_[r * mlp_in + c] * m_in[static_cast<size_t>(c)];
            hidden[static_cast<size_t>(r)] = std::tanh(acc);
        }
        for (int64_t c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (int64_t r = 0; r < mlp_hidden_; ++r) acc += wm2_[c * mlp_hidden_ + r] * hidden[static_cast<size_t>(r)];
            const double* wo_row = wo_.data() + c * heads_ * head_dim_;
            for (int64_t r = 0; r < heads_ * head_dim_; ++r) acc += wo_row[r] * concat[static_cast<size_t>(r)];
            out[c * positions + p] = cfg_.eps_scale * acc;
        }
    }
    return out;
}

Tensor ToyDiffusionBackend::eps_vjp(const Tensor& z, int t, const TextLatent& text,
                                    const Tensor& d_eps) const {
    check_latent(z);
    check_text(text);
    if (d_eps.numel() != z.numel()) throw DimensionError("eps_vjp: bad gradient shape");
    const int64_t ch = cfg_.latent_channels;
    const int64_t positions = cfg_.latent_height * cfg_.latent_width;
    AttnCache cache;
    attention_forward(z, text, cache);

    double te[4];
    time_features(t, cfg_.total_timesteps, te);
    const int64_t mlp_in = ch + 8;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));

    Tensor dz(z.shape());
    dz.fill(0.0);
    std::vector<double> m_in(static_cast<size_t>(mlp_in));
    std::vector<double> hidden(static_cast<size_t>(mlp_hidden_));
    for (int64_t p = 0; p < positions; ++p) {
        const double* qin = cache.q_in.data() + p * pos_feat_;
        for (int64_t c = 0; c < ch; ++c) m_in[static_cast<size_t>(c)] = qin[c];
        for (int64_t c = 0; c < 4; ++c) m_in[static_cast<size_t>(ch + c)] = qin[ch + c];
        for (int64_t c = 0; c < 4; ++c) m_in[static_cast<size_t>(ch + 4 + c)] = te[c];
        for (int64_t r = 0; r < mlp_hidden_; ++r) {
            double acc = bm1_[static_cast<size_t>(r)];
            for (int64_t c = 0; c < mlp_in; ++c) acc += wm1_[r * mlp_in + c] * m_in[static_cast<size_t>(c)];
            hidden[static_cast<size_t>(r)] = std::tanh(acc);
        }

        // d_eps scaled
        double dout[64];
        for (int64_t c = 0; c < ch; ++c) dout[c] = cfg_.eps_scale * d_eps[c * positions + p];

        // MLP path
        double dhidden[64] = {0.0};
        for (int64_t c = 0; c < ch; ++c)
            for (int64_t r = 0; r < mlp_hidden_; ++r)
                dhidden[r] += wm2_[c * mlp_hidden_ + r] * dout[c];
        for (int64_t r = 0; r < mlp_hidden_; ++r) {
            double hpre = hidden[static_cast<size_t>(r)];
            double dpre = dhidden[r] * (1.0 - hpre * hpre);
            for (int64_t c = 0; c < ch; ++c) dz[c * positions + p] += wm1_[r * mlp_in + c] * dpre;
        }

        // Attention path: out contribution Wo * concat(heads), queries depend
        // on z through q_in.
        double dconcat[64] = {0.0};
        for (int64_t c = 0; c < ch; ++c) {
            const double* wo_row = wo_.data() + c * heads_ * head_dim_;
            for (int64_t r = 0; r < heads_ * head_dim_; ++r) dconcat[r] += wo_row[r] * dout[c];
        }
        for (int64_t s = 0; s < heads_; ++s) {
            const double* a = cache.attn.data() + (s * positions + p) * tokens_;
            const double* dhead = dconcat + s * head_dim_;
            double da[64];
            double dot = 0.0;
            for (int64_t j = 0; j < tokens_; ++j) {
                const double* val = cache.vals.data() + (s * tokens_ + j) * head_dim_;
                double acc = 0.0;
                for (int64_t r = 0; r < head_dim_; ++r) acc += dhead[r] * val[r];
                da[j] = acc;
                dot += a[j] * acc;
            }
            double dq[64] = {0.0};
            for (int64_t j = 0; j < tokens_; ++j) {
                double dlogit = a[j] * (da[j] - dot) * inv_sqrt;
                if (dlogit == 0.0) continue;
                const double* key = cache.keys.data() + (s * tokens_ + j) * head_dim_;
                for (int64_t r = 0; r < head_dim_; ++r) dq[r] += dlogit * key[r];
            }
            const double* wq = wq_.data() + s * head_dim_ * pos_feat_;
            for (int64_t r = 0; r < head_dim_; ++r)
                for (int64_t c = 0; c < ch; ++c)
                    dz[c * positions + p] += wq[r * pos_feat_ + c] * dq[r];
        }
    }
    return dz;
}

// ---------------------------------------------------------------------------
// DDIM

std::pair<LatentState, AttentionMap> ToyDiffusionBackend::step(const LatentState& z_t,
                                                               const TextLatent& text,
                                                               int t) const {
    if (t < 1) throw StateError("diffusion_step: t must be >= 1");
    if (t > cfg_.total_timesteps) throw RangeError("diffusion_step: t beyond schedule");
    if (z_t.timestep != t)
        throw StateError("diffusion_step: latent timestep " + std::to_string(z_t.timestep) +
                         " does not match t=" + std::to_string(t));
    check_latent(z_t.z);
    check_text(text);

    const double ab_t = alpha_bars_[static_cast<size_t>(t)];
    const double ab_prev = alpha_bars_[static_cast<size_t>(t - 1)];
    const double c1 = std::sqrt(ab_prev / ab_t);
    const double c2 = std::sqrt(1.0 - ab_prev) - c1 * std::sqrt(1.0 - ab_t);

    Tensor e = eps(z_t.z, t, text);
    LatentState out;
    out.z = Tensor(z_t.z.shape());
    for (int64_t i = 0; i < out.z.numel(); ++i) out.z[i] = c1 * z_t.z[i] + c2 * e[i];
    out.timestep = t - 1;
    AttentionMap maps = attention(out, text);
    return {std::move(out), std::move(maps)};
}

Tensor ToyDiffusionBackend::step_vjp(const LatentState& z_t, const TextLatent& text, int t,
                                     const Tensor& d_out) const {
    if (t < 1 || t > cfg_.total_timesteps) throw RangeError("step_vjp: t outside schedule");
    const double ab_t = alpha_bars_[static_cast<size_t>(t)];
    const double ab_prev = alpha_bars_[static_cast<size_t>(t - 1)];
    const double c1 = std::sqrt(ab_prev / ab_t);
    const double c2 = std::sqrt(1.0 - ab_prev) - c1 * std::sqrt(1.0 - ab_t);

    Tensor scaled(d_out.shape());
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] = c2 * d_out[i];
    Tensor dz = eps_vjp(z_t.z, t, text, scaled);
    for (int64_t i = 0; i < dz.numel(); ++i) dz[i] += c1 * d_out[i];
    return dz;
}

LatentState ToyDiffusionBackend::ddim_invert(const LatentState& z0, const TextLatent& text,
                                             int steps) const {
    if (z0.timestep != 0) throw StateError("ddim_invert: latent must be at timestep 0");
    if (steps < 1) throw InvalidArgumentError("ddim_invert: steps must be >= 1");
    if (steps > cfg_.total_timesteps) throw RangeError("ddim_invert: steps beyond schedule");
    check_latent(z0.z);
    check_text(text);

    LatentState cur = z0;
    for (int t = 0; t < steps; ++t) {
        const double ab_t = alpha_bars_[static_cast<size_t>(t)];
        const double ab_next = alpha_bars_[static_cast<size_t>(t + 1)];
        const double c1 = std::sqrt(ab_next / ab_t);
        const double c2 = std::sqrt(1.0 - ab_next) - c1 * std::sqrt(1.0 - ab_t);
        Tensor e = eps(cur.z, t, text);
        Tensor next(cur.z.shape());
        for (int64_t i = 0; i < next.numel(); ++i) next[i] = c1 * cur.z[i] + c2 * e[i];
        cur.z = std::move(next);
        cur.timestep = t + 1;
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Persistence

void ToyDiffusionBackend::save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.put_i64("config", {cfg_.latent_channels, cfg_.latent_height, cfg_.latent_width,
                            cfg_.total_timesteps, static_cast<int64_t>(cfg_.seed),
                            fitted_ ? int64_t{1} : int64_t{0}, pixel_dim_});
    ckpt.put("schedule", {static_cast<int64_t>(3)},
             {cfg_.beta_start, cfg_.beta_end, cfg_.eps_scale});
    ckpt.put_scalar("pooler_ridge", cfg_.pooler_ridge);
    if (fitted_) {
        ckpt.put_i64("image_shape", image_shape_);
        ckpt.put("mean", {pixel_dim_}, mean_);
        ckpt.put("components", {cfg_.latent_dim(), pixel_dim_}, components_);
        ckpt.put("scales", {cfg_.latent_dim()}, scales_);
    }
    ckpt.save(path);
}

ToyDiffusionBackend ToyDiffusionBackend::load(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    const auto& meta = ckpt.get_i64("config");
    if (meta.size() != 7) throw IoError("backend checkpoint: bad config");
    BackendConfig cfg;
    cfg.latent_channels = meta[0];
    cfg.latent_height = meta[1];
    cfg.latent_width = meta[2];
    cfg.total_timesteps = meta[3];
    cfg.seed = static_cast<uint64_t>(meta[4]);
    const Tensor& sched = ckpt.get("schedule");
    cfg.beta_start = sched[0];
    cfg.beta_end = sched[1];
    cfg.eps_scale = sched[2];
    cfg.pooler_ridge = ckpt.get_scalar("pooler_ridge");
    ToyDiffusionBackend backend(cfg);
    if (meta[5]) {
        backend.image_shape_ = ckpt.get_i64("image_shape");
        backend.pixel_dim_ = meta[6];
        backend.mean_ = ckpt.get("mean").vec();
        backend.components_ = ckpt.get("components").vec();
        backend.scales_ = ckpt.get("scales").vec();
        backend.fitted_ = true;
    }
    return backend;
}

}  // namespace hashlat
