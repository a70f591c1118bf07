#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hashlat/core/checkpoint.hpp"
#include "hashlat/core/tensor.hpp"
#include "hashlat/hash_model.hpp"
#include "hashlat/text_pipeline.hpp"

namespace hashlat {

// Length-k guide vector in [-1,1] (tanh-bounded head output).
struct TextGuideVector {
    std::vector<double> values;

    TextGuideVector() = default;
    explicit TextGuideVector(std::vector<double> v) : values(std::move(v)) {}
    int64_t k() const { return static_cast<int64_t>(values.size()); }
};

// Alignment network: trunk 1024 -> 512 -> 256 (ReLU between), tanh projection
// head 256 -> k. The 256-dim trunk output is the text feature T_F.
struct HANParams {
    int64_t in_dim = 1024;
    int64_t h1 = 512;
    int64_t h2 = 256;
    int64_t k = 16;
    std::vector<double> flat;

    int64_t w1_off() const { return 0; }
    int64_t w1_len() const { return h1 * in_dim; }
    int64_t b1_off() const { return w1_off() + w1_len(); }
    int64_t w2_off() const { return b1_off() + h1; }
    int64_t w2_len() const { return h2 * h1; }
    int64_t b2_off() const { return w2_off() + w2_len(); }
    int64_t w3_off() const { return b2_off() + h2; }
    int64_t w3_len() const { return k * h2; }
    int64_t b3_off() const { return w3_off() + w3_len(); }
    int64_t total_len() const { return b3_off() + k; }

    static HANParams init(int64_t k, uint64_t seed, int64_t in_dim = 1024, int64_t h1 = 512,
                          int64_t h2 = 256);

    void save(const std::string& path) const;
    static HANParams load(const std::string& path);
    Checkpoint to_checkpoint() const;
    static HANParams from_checkpoint(const Checkpoint& ckpt);
};

struct HanForward {
    std::vector<double> text_feature;  // T_F, h2-dim
    TextGuideVector guide;             // b_t, k-dim
};

HanForward han_forward(const HANParams& params, const TextLatent& z);

struct HanBatchCache {
    Tensor x;    // N x in_dim
    Tensor a1;   // N x h1, pre-activation
    Tensor h1v;  // N x h1, post-ReLU
    Tensor tf;   // N x h2
    Tensor bt;   // N x k (tanh applied)
};

// Batch forward; rows of x are inputs.
void han_batch_forward(const HANParams& params, const Tensor& x, HanBatchCache& cache);

// Accumulates parameter gradients given upstream gradients on T_F and b_t;
// optionally returns input gradients.
void han_batch_backward(const HANParams& params, const HanBatchCache& cache, const Tensor& d_tf,
                        const Tensor& d_bt, std::vector<double>& param_grad,
                        Tensor* d_input = nullptr);

// 1 - mean cosine similarity between matched rows; range [0,2].
double loss_direct(const Tensor& tf, const Tensor& if_feat);
// Gradient w.r.t. tf rows, scaled by `scale`, accumulated into d_tf.
double loss_direct_grad(const Tensor& tf, const Tensor& if_feat, Tensor& d_tf, double scale);

// (1/N) sum_i || |b_i| - 1 ||_2
double loss_quan(const Tensor& bt);
double loss_quan_grad(const Tensor& bt, Tensor& d_bt, double scale);

// (1/N) sum_i || b_i - code_i ||_1
double loss_ham(const Tensor& bt, const Tensor& b_img);
double loss_ham_grad(const Tensor& bt, const Tensor& b_img, Tensor& d_bt, double scale);

struct AlignConfig {
    double alpha = 1.0;
    double beta = 0.5;
    double gamma = 1.0;
    double learning_rate = 5e-3;
    int64_t epochs = 80;
    uint64_t seed = 11;
};

struct AlignLossParts {
    double direct = 0.0;
    double quan = 0.0;
    double ham = 0.0;
    double total = 0.0;
};

// alpha*L_Direct + beta*L_Quan + gamma*L_Ham
double loss_align(const AlignConfig& cfg, double direct, double quan, double ham);

// Frozen projection mapping the hash model's penultimate pooled feature into
// the 256-dim shared feature space (the I_F convention).
Tensor make_feature_projection(uint64_t seed, int64_t in_dim, int64_t out_dim = 256);

// Loss and full parameter gradient on a prepared batch; used by training and
// by the finite-difference suite.
AlignLossParts align_loss_and_grad(const HANParams& params, const Tensor& x, const Tensor& if_feat,
                                   const Tensor& b_img, const AlignConfig& cfg,
                                   std::vector<double>* param_grad);

struct AlignmentData {
    Tensor x;        // N x in_dim text latents
    Tensor if_feat;  // N x 256 projected image features
    Tensor b_img;    // N x k binarized image codes (+-1 doubles)
};

// Builds the training batch from (text, image) pairs with the hash model
// frozen: I_F via the fixed projection (out dim = the HAN feature width),
// b(x) via sign-binarized model codes.
AlignmentData prepare_alignment_data(const std::vector<std::pair<TextLatent, ImageSample>>& pairs,
                                     const HashModelParams& hash_model, const AlignConfig& cfg,
                                     int64_t feature_dim = 256);

// Gradient descent on the alignment loss w.r.t. HAN parameters only; the hash
// model stays bitwise frozen. Writes a per-epoch CSV log when log_path is
// non-empty: epoch,loss_direct,loss_quan,loss_ham,loss_align
HANParams train_alignment(const HANParams& han,
                          const std::vector<std::pair<TextLatent, ImageSample>>& pairs,
                          const HashModelParams& hash_model, const AlignConfig& cfg,
                          const std::string& log_path = "");

}  // namespace hashlat
