#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hashlat/core/checkpoint.hpp"
#include "hashlat/core/tensor.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/text_pipeline.hpp"

namespace hashlat {

// Spatial latent plus its diffusion timestep (0 = clean / decodable).
struct LatentState {
    Tensor z;  // C_z x H_z x W_z
    int timestep = 0;
};

// Per-head spatial saliency, S x H x W, non-negative.
struct AttentionMap {
    Tensor values;

    int64_t heads() const { return values.dim(0); }
    int64_t height() const { return values.dim(1); }
    int64_t width() const { return values.dim(2); }
};

struct BackendConfig {
    int64_t latent_channels = 4;
    int64_t latent_height = 8;
    int64_t latent_width = 8;
    int64_t total_timesteps = 40;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double eps_scale = 0.05;
    uint64_t seed = 23;
    double pooler_ridge = 1e-3;

    int64_t latent_dim() const { return latent_channels * latent_height * latent_width; }
};

// Pluggable latent encode/decode + DDIM inversion + per-step denoising with
// cross-attention exposure. Implementations must be deterministic pure
// functions of (inputs, config seed) and thread-safe once constructed.
class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual const BackendConfig& config() const = 0;

    virtual LatentState encode(const Tensor& pixels) const = 0;
    // Pixels clamped to [0,1].
    virtual Tensor decode(const LatentState& z) const = 0;
    // d_loss/d_z given d_loss/d_pixels (clamp passes gradient strictly inside (0,1)).
    virtual Tensor decode_vjp(const LatentState& z, const Tensor& d_pixels) const = 0;

    // Repeated inverse map: timestep 0 -> `steps`.
    virtual LatentState ddim_invert(const LatentState& z0, const TextLatent& text,
                                    int steps) const = 0;

    // One denoising update t -> t-1 conditioned on text; the returned map is
    // the cross-attention state of the produced latent.
    virtual std::pair<LatentState, AttentionMap> step(const LatentState& z_t,
                                                      const TextLatent& text, int t) const = 0;
    // d_loss/d_z_t given d_loss/d_z_out.
    virtual Tensor step_vjp(const LatentState& z_t, const TextLatent& text, int t,
                            const Tensor& d_out) const = 0;

    // Cross-attention maps of a latent under the text conditioning.
    virtual AttentionMap attention(const LatentState& z, const TextLatent& text) const = 0;
    virtual Tensor attention_vjp(const LatentState& z, const TextLatent& text,
                                 const Tensor& d_maps) const = 0;
};

// Deterministic toy backend: PCA linear autoencoder fitted on the synthetic
// dataset, a tiny fixed conditional denoiser (per-position MLP plus one
// explicit cross-attention block over text tokens) driving a deterministic
// DDIM schedule.
class ToyDiffusionBackend : public DiffusionBackend {
public:
    explicit ToyDiffusionBackend(const BackendConfig& cfg);

    const BackendConfig& config() const override { return cfg_; }

    // Fits the linear autoencoder (principal components, whitened scales).
    void fit_autoencoder(const std::vector<ImageSample>& images);
    bool fitted() const { return fitted_; }

    LatentState encode(const Tensor& pixels) const override;
    Tensor decode(const LatentState& z) const override;
    Tensor decode_vjp(const LatentState& z, const Tensor& d_pixels) const override;

    LatentState ddim_invert(const LatentState& z0, const TextLatent& text,
                            int steps) const override;

    std::pair<LatentState, AttentionMap> step(const LatentState& z_t, const TextLatent& text,
                                              int t) const override;
    Tensor step_vjp(const LatentState& z_t, const TextLatent& text, int t,
                    const Tensor& d_out) const override;

    AttentionMap attention(const LatentState& z, const TextLatent& text) const override;
    Tensor attention_vjp(const LatentState& z, const TextLatent& text,
                         const Tensor& d_maps) const override;

    // Noise prediction (exposed for gradient tests).
    Tensor eps(const Tensor& z, int t, const TextLatent& text) const;
    Tensor eps_vjp(const Tensor& z, int t, const TextLatent& text, const Tensor& d_eps) const;

    double alpha_bar(int t) const;
    int64_t attention_heads() const { return heads_; }

    void save(const std::string& path) const;
    static ToyDiffusionBackend load(const std::string& path);

private:
    struct AttnCache;
    void attention_forward(const Tensor& z, const TextLatent& text, AttnCache& cache) const;
    void check_latent(const Tensor& z) const;
    void check_text(const TextLatent& text) const;

    BackendConfig cfg_;
    int64_t heads_ = 4;
    int64_t head_dim_ = 8;
    int64_t tokens_ = 8;
    int64_t token_dim_ = 128;
    int64_t pos_feat_ = 0;  // latent channels + 4 positional features

    // Denoiser weights (seeded, fixed).
    std::vector<double> wq_, wk_, wv_;  // per head
    std::vector<double> wo_;
    std::vector<double> wm1_, bm1_, wm2_;
    int64_t mlp_hidden_ = 16;

    std::vector<double> betas_, alpha_bars_;

    // Autoencoder.
    bool fitted_ = false;
    std::vector<double> mean_;        // D
    std::vector<double> components_;  // r x D (rows)
    std::vector<double> scales_;      // r
    int64_t pixel_dim_ = 0;
    std::vector<int64_t> image_shape_;
};

}  // namespace hashlat
