#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hashlat/core/checkpoint.hpp"
#include "hashlat/core/tensor.hpp"
#include "hashlat/hash_space.hpp"

namespace hashlat {

struct ImageSample {
    Tensor pixels;  // 3 x H x W, values in [0,1]
    MultiLabelVector labels;
    int64_t id = -1;
};

// Small convolutional deep-hashing model: two 3x3 conv blocks with 2x2
// average pooling, global average pool, tanh linear head to k outputs.
// The attack never sees this architecture directly; everything goes through
// hash_forward.
struct HashModelParams {
    int64_t k = 16;
    int64_t image_size = 32;
    int64_t in_channels = 3;
    int64_t c1 = 16;
    int64_t c2 = 32;
    std::vector<double> flat;  // all weights, layer order below

    int64_t conv1_w_off() const { return 0; }
    int64_t conv1_w_len() const { return c1 * in_channels * 9; }
    int64_t conv1_b_off() const { return conv1_w_off() + conv1_w_len(); }
    int64_t conv2_w_off() const { return conv1_b_off() + c1; }
    int64_t conv2_w_len() const { return c2 * c1 * 9; }
    int64_t conv2_b_off() const { return conv2_w_off() + conv2_w_len(); }
    int64_t head_w_off() const { return conv2_b_off() + c2; }
    int64_t head_w_len() const { return k * c2; }
    int64_t head_b_off() const { return head_w_off() + head_w_len(); }
    int64_t total_len() const { return head_b_off() + k; }

    int64_t feature_dim() const { return c2; }

    static HashModelParams init(int64_t k, int64_t image_size, uint64_t seed);

    void save(const std::string& path) const;
    static HashModelParams load(const std::string& path);
    Checkpoint to_checkpoint() const;
    static HashModelParams from_checkpoint(const Checkpoint& ckpt);
};

// Forward cache for backpropagation.
struct HashForwardCache {
    Tensor col1, a1, p1, col2, a2, p2;  // pre-activations and pooled maps
    std::vector<double> feature;        // global-pooled penultimate feature
    std::vector<double> output;         // tanh head output
};

// The model's continuous code (pre-sign output).
ContinuousCode hash_forward(const HashModelParams& params, const ImageSample& image);

// Forward that also returns the penultimate pooled feature (used for I_F).
ContinuousCode hash_forward_with_feature(const HashModelParams& params, const ImageSample& image,
                                         std::vector<double>& feature_out);

ContinuousCode hash_forward_cached(const HashModelParams& params, const Tensor& pixels,
                                   HashForwardCache& cache);

// Backpropagates d_output through the cache; accumulates into param_grad
// (size total_len) and, when pixel_grad is non-null, into the input gradient.
void hash_backward(const HashModelParams& params, const Tensor& pixels,
                   const HashForwardCache& cache, const std::vector<double>& d_output,
                   std::vector<double>& param_grad, Tensor* pixel_grad);

// Fixed per-class binary target codes: Hadamard rows when k is a power of two
// and C fits, otherwise greedy max-min-distance +-1 sampling.
std::vector<HashCode> class_hash_targets(int64_t num_classes, int64_t k, uint64_t seed);

// Target for a multi-label sample: re-binarized mean of its class targets.
HashCode sample_hash_target(const MultiLabelVector& labels,
                            const std::vector<HashCode>& class_targets);

struct HashTrainOptions {
    int64_t batch_size = 64;
    double learning_rate = 3e-3;
    double quant_weight = 0.1;
};

// Binary-target regression toward fixed class codes plus quantization
// penalty; deterministic for a fixed seed. Requires at least two distinct
// classes in the dataset.
HashModelParams train_hash_model(const std::vector<ImageSample>& dataset, int64_t k,
                                 uint64_t seed, int64_t epochs,
                                 const HashTrainOptions& options = {});

}  // namespace hashlat
