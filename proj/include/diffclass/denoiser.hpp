#pragma once

#include "diffclass/diffusion.hpp"
#include "diffclass/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace diffclass {

// Sinusoidal timestep embedding, interleaved (sin, cos) pairs with frequencies
// 10000^(-i / (dim/2)), i = 0 .. dim/2 - 1.
std::vector<double> time_embedding(int t, int dim);

struct DenoiserConfig {
    int num_classes = 2;
    int feature_dim = 512;  // length of the image feature rho(x)
    int latent_width = 128;
    int time_dim = 64;
    int num_blocks = 2;

    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
};

struct DenoiserInput {
    std::span<const double> rho_x;
    const ClassVector* y_t = nullptr;
    const ClassVector* y_g = nullptr;
    const ClassVector* y_l = nullptr;
    int t = 1;
};

struct DenoiserCache {
    struct Block {
        nn::Vec h_in;
        nn::Vec film;  // [gamma | beta]
        nn::Vec u;
        nn::Vec m;
        nn::Vec a;
    };
    nn::Vec concat;   // [y_t | y_g | y_l]
    nn::Vec cond_in;  // [rho_x | time embedding]
    std::vector<Block> blocks;
    nn::Vec h_out;
    nn::Vec act_out;
};

// Conditional noise estimator eps_theta(rho(x), y_t, y_g, y_l, t).
//
// The concatenated class vectors are linearly projected into the latent, then
// refined by residual blocks h += W2 silu(W1 h * (1 + gamma) + beta), where
// (gamma, beta) are computed per block from [rho(x) | time embedding]. A
// zero-initialized linear head maps silu(h) back to C outputs.
class Denoiser {
public:
    explicit Denoiser(DenoiserConfig config);

    void init(Rng& rng);

    nn::Vec project_to_latent(const ClassVector& y_t, const ClassVector& y_g,
                              const ClassVector& y_l) const;

    nn::Vec estimate_noise(const DenoiserInput& input, DenoiserCache* cache = nullptr) const;

    // Accumulates grads for d(loss)/d(eps_hat) = deps. Returns d(loss)/d(rho_x).
    nn::Vec backward(const DenoiserCache& cache, std::span<const double> deps);

    const DenoiserConfig& config() const { return config_; }
    void collect(const std::string& prefix, nn::ParamList& out);

    nn::Param& projection() { return projection_; }

private:
    struct Block {
        nn::Linear cond;
        nn::Linear fc1;
        nn::Linear fc2;
    };

    DenoiserConfig config_;
    nn::Param projection_;  // (latent, 3C), no bias
    std::vector<Block> blocks_;
    nn::Linear head_;
};

}  // namespace diffclass
