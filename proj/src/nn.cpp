#include "diffclass/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace diffclass::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

void im2col(const Tensor& x, int kernel, int stride, int padding, int out_h, int out_w,
            Tensor& cols)
{
    const int channels = x.dim(0), in_h = x.dim(1), in_w = x.dim(2);
    const int hw = out_h * out_w;
    cols = Tensor({channels * kernel * kernel, hw});
    double* dst = cols.data();
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= in_h) {
                        std::fill(dst, dst + out_w, 0.0);
                        dst += out_w;
                        continue;
                    }
                    const double* row = x.data() + (static_cast<std::size_t>(c) * in_h + iy) * in_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - padding + kx;
                        *dst++ = (ix >= 0 && ix < in_w) ? row[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const Tensor& cols, int channels, int in_h, int in_w, int kernel, int stride,
            int padding, int out_h, int out_w, Tensor& x)
{
    x = Tensor({channels, in_h, in_w});
    const double* src = cols.data();
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= in_h) {
                        src += out_w;
                        continue;
                    }
                    double* row = x.data() + (static_cast<std::size_t>(c) * in_h + iy) * in_w;
                    for (int ox = 0; ox < out_w; ++ox, ++src) {
                        const int ix = ox * stride - padding + kx;
                        if (ix >= 0 && ix < in_w) {
                            row[ix] += *src;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void zero_grads(const ParamList& params)
{
    for (const auto& p : params) {
        p.param->grad.fill(0.0);
    }
}

std::size_t count_values(const ParamList& params)
{
    std::size_t n = 0;
    for (const auto& p : params) {
        n += p.param->value.size();
    }
    return n;
}

void init_uniform(Tensor& t, double bound, Rng& rng)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) {
        v = dist(rng);
    }
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, bool bias)
    : weight({out_features, in_features}),
      bias({bias ? out_features : 0}),
      in_(in_features),
      out_(out_features),
      has_bias_(bias)
{
    if (in_features <= 0 || out_features <= 0) {
        throw std::invalid_argument("linear layer sizes must be positive");
    }
}

void Linear::init(Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    init_uniform(weight.value, bound, rng);
    if (has_bias_) {
        init_uniform(bias.value, bound, rng);
    }
}

Vec Linear::forward(std::span<const double> x) const
{
    if (static_cast<int>(x.size()) != in_) {
        throw std::invalid_argument("linear input has " + std::to_string(x.size()) +
                                    " features, expected " + std::to_string(in_));
    }
    Vec y(static_cast<std::size_t>(out_));
    VectorMap ym(y.data(), out_);
    ym.noalias() = ConstMatrixMap(weight.value.data(), out_, in_) * ConstVectorMap(x.data(), in_);
    if (has_bias_) {
        ym += ConstVectorMap(bias.value.data(), out_);
    }
    return y;
}

void Linear::backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx)
{
    const ConstVectorMap xm(x.data(), in_);
    const ConstVectorMap dym(dy.data(), out_);
    MatrixMap(weight.grad.data(), out_, in_).noalias() += dym * xm.transpose();
    if (has_bias_) {
        VectorMap(bias.grad.data(), out_) += dym;
    }
    if (!dx.empty()) {
        VectorMap(dx.data(), in_).noalias() =
            ConstMatrixMap(weight.value.data(), out_, in_).transpose() * dym;
    }
}

void Linear::collect(const std::string& prefix, ParamList& out)
{
    out.push_back({prefix + ".weight", &weight});
    if (has_bias_) {
        out.push_back({prefix + ".bias", &bias});
    }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : weight({out_channels, in_channels, kernel, kernel}),
      bias({bias ? out_channels : 0}),
      in_c_(in_channels),
      out_c_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias)
{
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
        throw std::invalid_argument("invalid convolution geometry");
    }
}

void Conv2d::init(Rng& rng, double gain)
{
    const double fan_in = static_cast<double>(in_c_) * kernel_ * kernel_;
    init_uniform(weight.value, gain * std::sqrt(6.0 / fan_in), rng);
    if (has_bias_) {
        bias.value.fill(0.0);
    }
}

Tensor Conv2d::forward(const Tensor& x, ConvCache* cache) const
{
    if (x.rank() != 3 || x.dim(0) != in_c_) {
        throw std::invalid_argument("conv input " + x.shape_string() + " does not have " +
                                    std::to_string(in_c_) + " channels");
    }
    const int out_h = output_size(x.dim(1));
    const int out_w = output_size(x.dim(2));
    if (out_h <= 0 || out_w <= 0) {
        throw std::invalid_argument("conv input " + x.shape_string() + " is smaller than the kernel");
    }
    ConvCache local;
    ConvCache& c = cache ? *cache : local;
    c.in_h = x.dim(1);
    c.in_w = x.dim(2);
    c.out_h = out_h;
    c.out_w = out_w;
    im2col(x, kernel_, stride_, padding_, out_h, out_w, c.cols);

    const int k = in_c_ * kernel_ * kernel_;
    const int hw = out_h * out_w;
    Tensor y({out_c_, out_h, out_w});
    MatrixMap ym(y.data(), out_c_, hw);
    ym.noalias() = ConstMatrixMap(weight.value.data(), out_c_, k) * ConstMatrixMap(c.cols.data(), k, hw);
    if (has_bias_) {
        ym.colwise() += ConstVectorMap(bias.value.data(), out_c_);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, const ConvCache& cache, bool need_input_grad)
{
    const int k = in_c_ * kernel_ * kernel_;
    const int hw = cache.out_h * cache.out_w;
    const ConstMatrixMap dym(dy.data(), out_c_, hw);
    const ConstMatrixMap cols(cache.cols.data(), k, hw);
    MatrixMap(weight.grad.data(), out_c_, k).noalias() += dym * cols.transpose();
    if (has_bias_) {
        VectorMap(bias.grad.data(), out_c_) += dym.rowwise().sum();
    }
    if (!need_input_grad) {
        return {};
    }
    Tensor dcols({k, hw});
    MatrixMap(dcols.data(), k, hw).noalias() =
        ConstMatrixMap(weight.value.data(), out_c_, k).transpose() * dym;
    Tensor dx;
    col2im(dcols, in_c_, cache.in_h, cache.in_w, kernel_, stride_, padding_, cache.out_h,
           cache.out_w, dx);
    return dx;
}

void Conv2d::collect(const std::string& prefix, ParamList& out)
{
    out.push_back({prefix + ".weight", &weight});
    if (has_bias_) {
        out.push_back({prefix + ".bias", &bias});
    }
}

// ---------------------------------------------------------------- pooling / activations

Tensor max_pool_3x3s2(const Tensor& x, MaxPoolCache* cache)
{
    const int channels = x.dim(0), in_h = x.dim(1), in_w = x.dim(2);
    const int out_h = (in_h + 2 - 3) / 2 + 1;
    const int out_w = (in_w + 2 - 3) / 2 + 1;
    Tensor y({channels, out_h, out_w});
    if (cache) {
        cache->argmax.assign(y.size(), 0);
        cache->in_h = in_h;
        cache->in_w = in_w;
    }
    std::size_t o = 0;
    for (int c = 0; c < channels; ++c) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = 0;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = oy * 2 - 1 + ky;
                    if (iy < 0 || iy >= in_h) {
                        continue;
                    }
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ox * 2 - 1 + kx;
                        if (ix < 0 || ix >= in_w) {
                            continue;
                        }
                        const int idx = (c * in_h + iy) * in_w + ix;
                        if (x[static_cast<std::size_t>(idx)] > best) {
                            best = x[static_cast<std::size_t>(idx)];
                            best_idx = idx;
                        }
                    }
                }
                y[o] = best;
                if (cache) {
                    cache->argmax[o] = best_idx;
                }
            }
        }
    }
    return y;
}

Tensor max_pool_3x3s2_backward(const Tensor& dy, const MaxPoolCache& cache, int channels)
{
    Tensor dx({channels, cache.in_h, cache.in_w});
    for (std::size_t o = 0; o < dy.size(); ++o) {
        dx[static_cast<std::size_t>(cache.argmax[o])] += dy[o];
    }
    return dx;
}

void relu_inplace(Tensor& x)
{
    // NaN passes through so divergence is caught downstream.
    for (double& v : x.values()) {
        if (v < 0.0) {
            v = 0.0;
        }
    }
}

void relu_backward_inplace(Tensor& dy, const Tensor& output)
{
    for (std::size_t i = 0; i < dy.size(); ++i) {
        if (!(output[i] > 0.0)) {
            dy[i] = 0.0;
        }
    }
}

double silu(double x)
{
    return x / (1.0 + std::exp(-x));
}

double silu_grad(double x)
{
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

Vec global_avg_pool(const Tensor& x)
{
    const int channels = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Vec out(static_cast<std::size_t>(channels), 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* p = x.data() + c * hw;
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            s += p[i];
        }
        out[c] = s / static_cast<double>(hw);
    }
    return out;
}

Tensor global_avg_pool_backward(std::span<const double> dy, const std::vector<int>& shape)
{
    Tensor dx(shape);
    const std::size_t hw = static_cast<std::size_t>(shape[1]) * shape[2];
    for (int c = 0; c < shape[0]; ++c) {
        const double g = dy[c] / static_cast<double>(hw);
        std::fill(dx.data() + c * hw, dx.data() + (c + 1) * hw, g);
    }
    return dx;
}

// ---------------------------------------------------------------- Encoder

EncoderConfig EncoderConfig::resnet18()
{
    return EncoderConfig{};
}

EncoderConfig EncoderConfig::compact()
{
    EncoderConfig c;
    c.stem_channels = 8;
    c.stem_kernel = 3;
    c.stem_stride = 2;
    c.stem_pool = false;
    c.stage_channels = {16, 32};
    c.stage_strides = {2, 2};
    c.blocks_per_stage = 1;
    return c;
}

int EncoderConfig::downsampling() const
{
    int s = stem_stride * (stem_pool ? 2 : 1);
    for (int st : stage_strides) {
        s *= st;
    }
    return s;
}

int EncoderConfig::output_size(int input) const
{
    int n = (input + 2 * (stem_kernel / 2) - stem_kernel) / stem_stride + 1;
    if (stem_pool) {
        n = (n + 2 - 3) / 2 + 1;
    }
    for (int st : stage_strides) {
        n = (n + 2 - 3) / st + 1;
    }
    return n;
}

void EncoderConfig::validate() const
{
    if (in_channels <= 0 || stem_channels <= 0 || stem_kernel <= 0 || stem_stride <= 0 ||
        blocks_per_stage <= 0 || stage_channels.empty() ||
        stage_channels.size() != stage_strides.size()) {
        throw std::invalid_argument("invalid encoder configuration");
    }
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
        if (stage_channels[i] <= 0 || stage_strides[i] <= 0) {
            throw std::invalid_argument("invalid encoder stage configuration");
        }
    }
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config))
{
    config_.validate();
    stem_ = Conv2d(config_.in_channels, config_.stem_channels, config_.stem_kernel,
                   config_.stem_stride, config_.stem_kernel / 2);
    int channels = config_.stem_channels;
    for (std::size_t s = 0; s < config_.stage_channels.size(); ++s) {
        const int out = config_.stage_channels[s];
        for (int b = 0; b < config_.blocks_per_stage; ++b) {
            const int stride = b == 0 ? config_.stage_strides[s] : 1;
            Block block;
            block.conv1 = Conv2d(channels, out, 3, stride, 1);
            block.conv2 = Conv2d(out, out, 3, 1, 1);
            block.project = stride != 1 || channels != out;
            if (block.project) {
                block.shortcut = Conv2d(channels, out, 1, stride, 0);
            }
            blocks_.push_back(std::move(block));
            channels = out;
        }
    }
}

void Encoder::init(Rng& rng)
{
    stem_.init(rng);
    for (auto& b : blocks_) {
        b.conv1.init(rng);
        // Small residual branches keep activations bounded without normalization layers.
        b.conv2.init(rng, 0.1);
        if (b.project) {
            b.shortcut.init(rng);
        }
    }
}

Tensor Encoder::forward(const Tensor& image, EncoderCache* cache) const
{
    if (image.rank() != 3 || image.dim(0) != config_.in_channels) {
        throw std::invalid_argument("encoder expects a (" + std::to_string(config_.in_channels) +
                                    ", H, W) image, got " + image.shape_string());
    }
    Tensor x = stem_.forward(image, cache ? &cache->stem : nullptr);
    relu_inplace(x);
    if (cache) {
        cache->stem_out = x;
    }
    if (config_.stem_pool) {
        x = max_pool_3x3s2(x, cache ? &cache->pool : nullptr);
    }
    if (cache) {
        cache->blocks.assign(blocks_.size(), BlockCache{});
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const Block& b = blocks_[i];
        BlockCache* bc = cache ? &cache->blocks[i] : nullptr;
        if (bc) {
            bc->input = x;
        }
        Tensor h = b.conv1.forward(x, bc ? &bc->conv1 : nullptr);
        relu_inplace(h);
        Tensor y = b.conv2.forward(h, bc ? &bc->conv2 : nullptr);
        if (bc) {
            bc->hidden = std::move(h);
        }
        if (b.project) {
            y += b.shortcut.forward(x, bc ? &bc->shortcut : nullptr);
        } else {
            y += x;
        }
        relu_inplace(y);
        if (bc) {
            bc->output = y;
        }
        x = std::move(y);
    }
    return x;
}

void Encoder::backward(const EncoderCache& cache, Tensor dfeature)
{
    Tensor dx = std::move(dfeature);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        Block& b = blocks_[i];
        const BlockCache& bc = cache.blocks[i];
        relu_backward_inplace(dx, bc.output);
        Tensor dh = b.conv2.backward(dx, bc.conv2, true);
        relu_backward_inplace(dh, bc.hidden);
        Tensor din = b.conv1.backward(dh, bc.conv1, true);
        if (b.project) {
            din += b.shortcut.backward(dx, bc.shortcut, true);
        } else {
            din += dx;
        }
        dx = std::move(din);
    }
    if (config_.stem_pool) {
        dx = max_pool_3x3s2_backward(dx, cache.pool, config_.stem_channels);
    }
    relu_backward_inplace(dx, cache.stem_out);
    stem_.backward(dx, cache.stem, false);
}

void Encoder::collect(const std::string& prefix, ParamList& out)
{
    stem_.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = prefix + ".block" + std::to_string(i);
        blocks_[i].conv1.collect(p + ".conv1", out);
        blocks_[i].conv2.collect(p + ".conv2", out);
        if (blocks_[i].project) {
            blocks_[i].shortcut.collect(p + ".shortcut", out);
        }
    }
}

}  // namespace diffclass::nn
