#pragma once

// Minimal layer library with explicit forward/backward passes.
//
// Forward passes are const and write activations into caller-owned cache
// structs, so frozen weights can serve several inference streams at once.
// Backward passes accumulate into Param::grad and therefore need exclusive
// access to the weights.

#include "diffclass/rng.hpp"
#include "diffclass/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace diffclass::nn {

using Vec = std::vector<double>;

struct Param {
    Param() = default;
    explicit Param(std::vector<int> shape) : value(shape), grad(std::move(shape)) {}
    Tensor value;
    Tensor grad;
};

struct ParamRef {
    std::string name;
    Param* param;
};
using ParamList = std::vector<ParamRef>;

void zero_grads(const ParamList& params);
std::size_t count_values(const ParamList& params);

// U(-bound, bound) fill.
void init_uniform(Tensor& t, double bound, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, bool bias = true);

    // U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    void init(Rng& rng);

    Vec forward(std::span<const double> x) const;
    // Accumulates weight/bias grads; writes the input gradient into dx when nonempty.
    void backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

    int in_features() const { return in_; }
    int out_features() const { return out_; }
    bool has_bias() const { return has_bias_; }
    void collect(const std::string& prefix, ParamList& out);

    Param weight;  // (out, in)
    Param bias;    // (out)

private:
    int in_ = 0;
    int out_ = 0;
    bool has_bias_ = true;
};

struct ConvCache {
    Tensor cols;  // (in_channels * k * k, out_h * out_w)
    int in_h = 0;
    int in_w = 0;
    int out_h = 0;
    int out_w = 0;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias = true);

    // He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)) times `gain`.
    void init(Rng& rng, double gain = 1.0);

    Tensor forward(const Tensor& x, ConvCache* cache) const;
    // Returns the input gradient (empty tensor when need_input_grad is false).
    Tensor backward(const Tensor& dy, const ConvCache& cache, bool need_input_grad);

    int output_size(int input) const { return (input + 2 * padding_ - kernel_) / stride_ + 1; }
    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }
    void collect(const std::string& prefix, ParamList& out);

    Param weight;  // (out, in, k, k)
    Param bias;    // (out)

private:
    int in_c_ = 0;
    int out_c_ = 0;
    int kernel_ = 1;
    int stride_ = 1;
    int padding_ = 0;
    bool has_bias_ = true;
};

struct MaxPoolCache {
    std::vector<int> argmax;
    int in_h = 0;
    int in_w = 0;
};

// 3x3, stride 2, padding 1 (ResNet stem pooling).
Tensor max_pool_3x3s2(const Tensor& x, MaxPoolCache* cache);
Tensor max_pool_3x3s2_backward(const Tensor& dy, const MaxPoolCache& cache, int channels);

void relu_inplace(Tensor& x);
// dy is masked in place by (output > 0).
void relu_backward_inplace(Tensor& dy, const Tensor& output);

double silu(double x);
double silu_grad(double x);

Vec global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(std::span<const double> dy, const std::vector<int>& shape);

// ResNet-style convolutional encoder without normalization layers.
struct EncoderConfig {
    int in_channels = 3;
    int stem_channels = 64;
    int stem_kernel = 7;
    int stem_stride = 2;
    bool stem_pool = true;
    std::vector<int> stage_channels{64, 128, 256, 512};
    std::vector<int> stage_strides{1, 2, 2, 2};
    int blocks_per_stage = 2;

    // ResNet18 topology: 7x7/2 stem, 3x3/2 max pool, 4 stages x 2 basic blocks.
    static EncoderConfig resnet18();
    // Small encoder for desk-scale runs: 3x3/2 stem, 2 stages x 1 block, stride 8.
    static EncoderConfig compact();

    int downsampling() const;
    int feature_dim() const { return stage_channels.back(); }
    int output_size(int input) const;
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct BlockCache {
    Tensor input;
    ConvCache conv1;
    Tensor hidden;  // post-ReLU
    ConvCache conv2;
    ConvCache shortcut;
    Tensor output;  // post-ReLU
};

struct EncoderCache {
    ConvCache stem;
    Tensor stem_out;  // post-ReLU
    MaxPoolCache pool;
    std::vector<BlockCache> blocks;
};

class Encoder {
public:
    Encoder() = default;
    explicit Encoder(EncoderConfig config);

    void init(Rng& rng);

    // Returns the final feature map (feature_dim, h, w).
    Tensor forward(const Tensor& image, EncoderCache* cache) const;
    // Accumulates parameter grads. Image gradients are never needed.
    void backward(const EncoderCache& cache, Tensor dfeature);

    const EncoderConfig& config() const { return config_; }
    void collect(const std::string& prefix, ParamList& out);

private:
    struct Block {
        Conv2d conv1;
        Conv2d conv2;
        Conv2d shortcut;  // 1x1 projection; unused when shapes match
        bool project = false;
    };

    EncoderConfig config_;
    Conv2d stem_;
    std::vector<Block> blocks_;
};

}  // namespace diffclass::nn
