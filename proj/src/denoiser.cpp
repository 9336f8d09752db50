#include "diffclass/denoiser.hpp"

#include "diffclass/error.hpp"

#include <cmath>
#include <stdexcept>

namespace diffclass {

std::vector<double> time_embedding(int t, int dim)
{
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("time embedding dimension must be a positive even number, got " +
                                    std::to_string(dim));
    }
    if (t < 0) {
        throw std::invalid_argument("time embedding needs t >= 0");
    }
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out[2 * i] = std::sin(t * freq);
        out[2 * i + 1] = std::cos(t * freq);
    }
    return out;
}

void DenoiserConfig::validate() const
{
    if (num_classes < 2) {
        throw std::invalid_argument("denoiser needs at least 2 classes");
    }
    if (latent_width < num_classes) {
        throw std::invalid_argument("latent width must be at least the class count");
    }
    if (feature_dim <= 0 || num_blocks < 1 || time_dim <= 0 || time_dim % 2 != 0) {
        throw std::invalid_argument("invalid denoiser configuration");
    }
}

Denoiser::Denoiser(DenoiserConfig config)
    : config_(config), projection_({config.latent_width, 3 * config.num_classes})
{
    config_.validate();
    const int width = config_.latent_width;
    for (int b = 0; b < config_.num_blocks; ++b) {
        blocks_.push_back(Block{nn::Linear(config_.feature_dim + config_.time_dim, 2 * width),
                                nn::Linear(width, width), nn::Linear(width, width)});
    }
    head_ = nn::Linear(width, config_.num_classes);
}

void Denoiser::init(Rng& rng)
{
    nn::init_uniform(projection_.value, 1.0 / std::sqrt(3.0 * config_.num_classes), rng);
    for (auto& b : blocks_) {
        b.cond.init(rng);
        b.fc1.init(rng);
        b.fc2.init(rng);
    }
    head_.weight.value.fill(0.0);
    head_.bias.value.fill(0.0);
}

nn::Vec Denoiser::project_to_latent(const ClassVector& y_t, const ClassVector& y_g,
                                    const ClassVector& y_l) const
{
    const int c = config_.num_classes;
    if (y_t.size() != c || y_g.size() != c || y_l.size() != c) {
        throw std::invalid_argument("denoiser class vectors must have length " + std::to_string(c));
    }
    nn::Vec concat;
    concat.reserve(static_cast<std::size_t>(3 * c));
    for (const ClassVector* v : {&y_t, &y_g, &y_l}) {
        concat.insert(concat.end(), v->values().begin(), v->values().end());
    }
    const int width = config_.latent_width;
    nn::Vec latent(static_cast<std::size_t>(width), 0.0);
    for (int i = 0; i < width; ++i) {
        const double* row = projection_.value.data() + static_cast<std::size_t>(i) * 3 * c;
        double s = 0.0;
        for (int j = 0; j < 3 * c; ++j) {
            s += row[j] * concat[j];
        }
        latent[i] = s;
    }
    return latent;
}

nn::Vec Denoiser::estimate_noise(const DenoiserInput& input, DenoiserCache* cache) const
{
    if (!input.y_t || !input.y_g || !input.y_l) {
        throw std::invalid_argument("denoiser input is missing a class vector");
    }
    if (static_cast<int>(input.rho_x.size()) != config_.feature_dim) {
        throw std::invalid_argument("image feature has length " + std::to_string(input.rho_x.size()) +
                                    ", expected " + std::to_string(config_.feature_dim));
    }
    if (input.t < 1) {
        throw std::invalid_argument("denoiser timestep must be >= 1");
    }
    const int width = config_.latent_width;

    nn::Vec h = project_to_latent(*input.y_t, *input.y_g, *input.y_l);
    if (!all_finite(h)) {
        throw NumericFailure("non-finite activation in denoiser projection", 0);
    }
    nn::Vec cond_in(input.rho_x.begin(), input.rho_x.end());
    const auto temb = time_embedding(input.t, config_.time_dim);
    cond_in.insert(cond_in.end(), temb.begin(), temb.end());

    if (cache) {
        cache->concat.clear();
        for (const ClassVector* v : {input.y_t, input.y_g, input.y_l}) {
            cache->concat.insert(cache->concat.end(), v->values().begin(), v->values().end());
        }
        cache->cond_in = cond_in;
        cache->blocks.assign(blocks_.size(), {});
    }

    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const Block& blk = blocks_[b];
        nn::Vec film = blk.cond.forward(cond_in);
        nn::Vec u = blk.fc1.forward(h);
        nn::Vec m(static_cast<std::size_t>(width));
        nn::Vec a(static_cast<std::size_t>(width));
        for (int j = 0; j < width; ++j) {
            m[j] = u[j] * (1.0 + film[j]) + film[width + j];
            a[j] = nn::silu(m[j]);
        }
        const nn::Vec v = blk.fc2.forward(a);
        if (cache) {
            cache->blocks[b] = {h, std::move(film), std::move(u), std::move(m), a};
        }
        for (int j = 0; j < width; ++j) {
            h[j] += v[j];
        }
        if (!all_finite(h)) {
            throw NumericFailure("non-finite activation in denoiser block " + std::to_string(b),
                                 static_cast<int>(b) + 1);
        }
    }

    nn::Vec act(static_cast<std::size_t>(width));
    for (int j = 0; j < width; ++j) {
        act[j] = nn::silu(h[j]);
    }
    nn::Vec out = head_.forward(act);
    if (!all_finite(out)) {
        throw NumericFailure("non-finite activation in denoiser head",
                             static_cast<int>(blocks_.size()) + 1);
    }
    if (cache) {
        cache->h_out = std::move(h);
        cache->act_out = std::move(act);
    }
    return out;
}

nn::Vec Denoiser::backward(const DenoiserCache& cache, std::span<const double> deps)
{
    const int width = config_.latent_width;
    nn::Vec dh(static_cast<std::size_t>(width));
    head_.backward(cache.act_out, deps, dh);
    for (int j = 0; j < width; ++j) {
        dh[j] *= nn::silu_grad(cache.h_out[j]);
    }

    nn::Vec dcond(cache.cond_in.size(), 0.0);
    nn::Vec scratch(cache.cond_in.size());
    for (std::size_t b = blocks_.size(); b-- > 0;) {
        Block& blk = blocks_[b];
        const auto& st = cache.blocks[b];
        nn::Vec da(static_cast<std::size_t>(width));
        blk.fc2.backward(st.a, dh, da);
        nn::Vec du(static_cast<std::size_t>(width));
        nn::Vec dfilm(static_cast<std::size_t>(2 * width));
        for (int j = 0; j < width; ++j) {
            const double dm = da[j] * nn::silu_grad(st.m[j]);
            du[j] = dm * (1.0 + st.film[j]);
            dfilm[j] = dm * st.u[j];
            dfilm[width + j] = dm;
        }
        blk.cond.backward(cache.cond_in, dfilm, scratch);
        for (std::size_t i = 0; i < dcond.size(); ++i) {
            dcond[i] += scratch[i];
        }
        nn::Vec dh_in(static_cast<std::size_t>(width));
        blk.fc1.backward(st.h_in, du, dh_in);
        for (int j = 0; j < width; ++j) {
            dh[j] += dh_in[j];
        }
    }

    const std::size_t cols = cache.concat.size();
    for (int i = 0; i < width; ++i) {
        double* row = projection_.grad.data() + static_cast<std::size_t>(i) * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] += dh[i] * cache.concat[j];
        }
    }
    return nn::Vec(dcond.begin(), dcond.begin() + config_.feature_dim);
}

void Denoiser::collect(const std::string& prefix, nn::ParamList& out)
{
    out.push_back({prefix + ".projection", &projection_});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string p = prefix + ".block" + std::to_string(b);
        blocks_[b].cond.collect(p + ".cond", out);
        blocks_[b].fc1.collect(p + ".fc1", out);
        blocks_[b].fc2.collect(p + ".fc2", out);
    }
    head_.collect(prefix + ".head", out);
}

}  // namespace diffclass
