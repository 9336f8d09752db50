#pragma once

#include "diffclass/denoiser.hpp"
#include "diffclass/diffusion.hpp"
#include "diffclass/guidance.hpp"
#include "diffclass/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace diffclass {

struct DiffusionConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule schedule() const { return make_linear_schedule(steps, beta_start, beta_end); }
    bool operator==(const DiffusionConfig&) const = default;
};

struct ModelConfig {
    std::vector<std::string> classes;
    GuidanceConfig guidance;
    nn::EncoderConfig image_encoder = nn::EncoderConfig::resnet18();
    bool share_image_encoder = false;
    DenoiserConfig denoiser;
    DiffusionConfig diffusion;

    // ResNet18 encoders at 224 px, 6144-wide latent, T = 1000.
    static ModelConfig full(std::vector<std::string> classes);
    // Compact encoders, 128-wide latent, T = 100 with betas scaled by 1000/T.
    static ModelConfig desk(std::vector<std::string> classes, int image_size = 32);

    int num_classes() const { return static_cast<int>(classes.size()); }
    int image_size() const { return guidance.image_size; }
    // Fills derived fields (class counts, feature dims) and validates.
    void finalize();
    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::ordered_json& j, const nn::EncoderConfig& c);
void from_json(const nlohmann::ordered_json& j, nn::EncoderConfig& c);
void to_json(nlohmann::ordered_json& j, const ModelConfig& c);
void from_json(const nlohmann::ordered_json& j, ModelConfig& c);

struct Conditioning {
    DcgOutput dcg;
    nn::Vec rho;
    ClassVector prior;  // (y_g + y_l) / 2, the diffusion shift
};

struct ConditionCache {
    DcgCache dcg;
    nn::EncoderCache image;
    std::vector<int> image_map_shape;
};

// Everything trainable: guidance network, image encoder for rho(x), denoiser.
class Models {
    ModelConfig config_;  // declared first: members below are built from it

public:
    explicit Models(ModelConfig config);

    void init(std::uint64_t seed);
    // False until init() or a checkpoint load has filled the weights.
    bool has_weights() const { return has_weights_; }
    void mark_loaded() { has_weights_ = true; }

    Conditioning condition(const Tensor& image, ConditionCache* cache = nullptr) const;
    // Accumulates grads from the prior logits and from d(loss)/d(rho). With
    // `guidance` false the guidance network is left untouched (frozen), which
    // also freezes rho when it is shared with the global encoder.
    void backward(const ConditionCache& cache, std::span<const double> dglobal_logits,
                  std::span<const double> dlocal_logits, std::span<const double> drho,
                  bool guidance);

    const ModelConfig& config() const { return config_; }
    NoiseSchedule schedule() const { return config_.diffusion.schedule(); }

    nn::ParamList params();
    nn::ParamList guidance_params();
    nn::ParamList stream_params();  // image encoder + denoiser

    GuidanceNet dcg;
    nn::Encoder image_encoder;
    Denoiser denoiser;

private:
    bool has_weights_ = false;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container: 8-byte magic, u32 version, u64 header length, JSON header
// (config, tensor index with names/shapes/offsets, metadata), then the raw
// little-endian doubles of every tensor in index order.
void save_checkpoint(const std::filesystem::path& path, Models& models,
                     const nlohmann::ordered_json& metadata = {});
Models load_checkpoint(const std::filesystem::path& path, nlohmann::ordered_json* metadata = nullptr);

}  // namespace diffclass
