#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hashlat/align_net.hpp"
#include "hashlat/diffusion.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/hash_space.hpp"
#include "hashlat/text_pipeline.hpp"

namespace hashlat {

struct AttackConfig {
    double kappa1 = 15.0;
    double kappa2 = 1.0;
    double kappa3 = 8.0;
    double margin = -1.0;  // < 0 -> defaults to 0.2 * k at run time
    int64_t steps = 30;
    double learning_rate = 0.15;  // paper-parity value is 1e-3; see README
    double weight_decay = 0.0;
    double epsilon_linf = 0.0;  // > 0 -> post-decode pixel clamp around the benign image
    uint64_t seed = 3;

    void validate() const;
    double resolved_margin(int64_t k) const { return margin > 0.0 ? margin : 0.2 * static_cast<double>(k); }
};

// Per-bit binary cross-entropy between targets q=(1+b_t)/2 and predictions
// p=(1+b_z)/2, p clamped to [1e-6, 1-1e-6], averaged over bits.
double loss_distance(const TextGuideVector& b_t, const std::vector<double>& b_z);
double loss_distance_grad(const TextGuideVector& b_t, const std::vector<double>& b_z,
                          std::vector<double>& d_bz, double scale);

// ||b_t - b_z||_1 + max(0, M - b_t . b_z)
double loss_path(const TextGuideVector& b_t, const std::vector<double>& b_z, double margin);
double loss_path_grad(const TextGuideVector& b_t, const std::vector<double>& b_z, double margin,
                      std::vector<double>& d_bz, double scale);

double loss_attack(double distance, double path);

// Spatial variance of per-head attention, averaged over heads and cells.
double loss_attention(const AttentionMap& maps);
double loss_attention_grad(const AttentionMap& maps, Tensor& d_maps, double scale);

// Mean over cells (channels averaged) of squared deviation from the
// reference latent plus squared forward differences; out-of-range neighbor
// terms are dropped at the boundary.
double loss_recon(const Tensor& z0, const Tensor& zt);
double loss_recon_grad(const Tensor& z0, const Tensor& zt, Tensor& d_zt, double scale);

double total_objective(const AttackConfig& cfg, double attack, double recon, double attention);

// Maps a pooled 1024-d vector to the k-dim guide/code vector. HAN-backed for
// the real attack; a random tanh head stands in for the no-HAN ablation.
class GuideMapper {
public:
    virtual ~GuideMapper() = default;
    virtual int64_t k() const = 0;
    virtual int64_t in_dim() const = 0;
    virtual std::vector<double> forward(const std::vector<double>& u) const = 0;
    // Returns d_loss/d_u given d_loss/d_b.
    virtual std::vector<double> backward(const std::vector<double>& u,
                                         const std::vector<double>& d_b) const = 0;
};

class HanGuideMapper : public GuideMapper {
public:
    explicit HanGuideMapper(const HANParams& params) : params_(params) {}
    int64_t k() const override { return params_.k; }
    int64_t in_dim() const override { return params_.in_dim; }
    std::vector<double> forward(const std::vector<double>& u) const override;
    std::vector<double> backward(const std::vector<double>& u,
                                 const std::vector<double>& d_b) const override;

private:
    const HANParams& params_;
};

class RandomHeadGuideMapper : public GuideMapper {
public:
    RandomHeadGuideMapper(int64_t k, int64_t in_dim, uint64_t seed);
    int64_t k() const override { return k_; }
    int64_t in_dim() const override { return in_dim_; }
    std::vector<double> forward(const std::vector<double>& u) const override;
    std::vector<double> backward(const std::vector<double>& u,
                                 const std::vector<double>& d_b) const override;

private:
    int64_t k_, in_dim_;
    std::vector<double> w_;  // k x in_dim
};

// Frozen linear pooling of the spatial latent into the mapper's input space.
// Fitted once by ridge regression (training latents -> caption latents).
class LatentPooler {
public:
    LatentPooler() = default;
    LatentPooler(int64_t out_dim, int64_t in_dim);

    static LatentPooler fit(const Tensor& latents, const Tensor& texts, double ridge);

    std::vector<double> apply(const Tensor& z) const;
    Tensor vjp(const std::vector<double>& d_u, const std::vector<int64_t>& z_shape) const;

    int64_t in_dim() const { return in_dim_; }
    int64_t out_dim() const { return out_dim_; }
    uint64_t weight_checksum() const;

    void save(const std::string& path) const;
    static LatentPooler load(const std::string& path);

private:
    int64_t out_dim_ = 0, in_dim_ = 0;
    std::vector<double> w_;  // out_dim x in_dim
};

struct AttackResult {
    Tensor adversarial_pixels;
    LatentState final_latent;
    std::vector<double> trace_distance, trace_path, trace_attack, trace_recon, trace_attention,
        trace_total;
    std::vector<double> trace_t_distance;  // d_H(sign(b_z_t), sign(b_t)) per step
    double initial_t_distance = 0.0;
    TextGuideVector target_guide;
    TextGuideVector benign_guide;
    HashCode achieved_code;               // sign(H(decode(z_T)))
    HashCode benign_code;                 // sign(H(x))
    double eval_hamming_to_target = 0.0;  // d_H(achieved, sign(b_t))
    double latent_path_hamming_to_target = 0.0;
    double benign_hamming_to_target = 0.0;
};

// Algorithm: invert the benign latent, then per step denoise, evaluate the
// weighted objective on the produced latent (guide losses through
// mapper(pooler(z)), recon against the inverted latent, attention variance),
// and update the latent by AdamW. HAN / hash model / pooler stay frozen.
AttackResult run_attack(const ImageSample& benign, const TextLatent& benign_text,
                        const TextLatent& target_text, const GuideMapper& mapper,
                        const HashModelParams& hash_model, const DiffusionBackend& backend,
                        const LatentPooler& pooler, const AttackConfig& cfg);

// trace JSON + adversarial PNG + full-precision latent/pixels checkpoint.
void save_attack_result(const AttackResult& result, const std::string& dir);
AttackResult load_attack_result_arrays(const std::string& dir);

}  // namespace hashlat
