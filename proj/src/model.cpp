#include "diffclass/model.hpp"

#include "diffclass/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace diffclass {

using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'C', 'L', 'S', 'C', 'K', 'P', 'T'};

}  // namespace

ModelConfig ModelConfig::full(std::vector<std::string> classes)
{
    ModelConfig c;
    c.classes = std::move(classes);
    c.guidance.image_size = 224;
    c.guidance.global_encoder = nn::EncoderConfig::resnet18();
    c.guidance.local_encoder = nn::EncoderConfig::resnet18();
    c.guidance.roi_count = 4;
    c.guidance.crop_size = 112;
    c.guidance.local_input_size = 112;
    c.image_encoder = nn::EncoderConfig::resnet18();
    c.denoiser.latent_width = 6144;
    c.denoiser.time_dim = 128;
    c.denoiser.num_blocks = 2;
    c.diffusion = DiffusionConfig{1000, 1e-4, 0.02};
    c.finalize();
    return c;
}

ModelConfig ModelConfig::desk(std::vector<std::string> classes, int image_size)
{
    ModelConfig c;
    c.classes = std::move(classes);
    c.guidance.image_size = image_size;
    c.guidance.global_encoder = nn::EncoderConfig::compact();
    c.guidance.local_encoder = nn::EncoderConfig::compact();
    c.guidance.roi_count = 4;
    c.guidance.crop_size = image_size / 2;
    c.guidance.local_input_size = image_size / 2;
    c.image_encoder = nn::EncoderConfig::compact();
    c.denoiser.latent_width = 128;
    c.denoiser.time_dim = 32;
    c.denoiser.num_blocks = 2;
    c.diffusion = DiffusionConfig{100, 1e-3, 0.2};
    c.finalize();
    return c;
}

void ModelConfig::finalize()
{
    if (classes.size() < 2) {
        throw std::invalid_argument("a model needs at least 2 classes");
    }
    if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
        throw std::invalid_argument("class vocabulary contains duplicates");
    }
    guidance.num_classes = num_classes();
    denoiser.num_classes = num_classes();
    denoiser.feature_dim =
        share_image_encoder ? guidance.global_encoder.feature_dim() : image_encoder.feature_dim();
    guidance.validate();
    image_encoder.validate();
    denoiser.validate();
    (void)diffusion.schedule();
}

void to_json(ordered_json& j, const nn::EncoderConfig& c)
{
    j = ordered_json{{"in_channels", c.in_channels},       {"stem_channels", c.stem_channels},
                     {"stem_kernel", c.stem_kernel},       {"stem_stride", c.stem_stride},
                     {"stem_pool", c.stem_pool},           {"stage_channels", c.stage_channels},
                     {"stage_strides", c.stage_strides},   {"blocks_per_stage", c.blocks_per_stage}};
}

void from_json(const ordered_json& j, nn::EncoderConfig& c)
{
    c.in_channels = j.value("in_channels", c.in_channels);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    c.stem_stride = j.value("stem_stride", c.stem_stride);
    c.stem_pool = j.value("stem_pool", c.stem_pool);
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.stage_strides = j.value("stage_strides", c.stage_strides);
    c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
}

namespace {

ordered_json encoder_json(const nn::EncoderConfig& c)
{
    ordered_json j;
    to_json(j, c);
    return j;
}

}  // namespace

void to_json(ordered_json& j, const ModelConfig& c)
{
    j = ordered_json{
        {"classes", c.classes},
        {"guidance",
         {{"image_size", c.guidance.image_size},
          {"global_encoder", encoder_json(c.guidance.global_encoder)},
          {"local_encoder", encoder_json(c.guidance.local_encoder)},
          {"roi_count", c.guidance.roi_count},
          {"crop_size", c.guidance.crop_size},
          {"local_input_size", c.guidance.local_input_size}}},
        {"image_encoder", encoder_json(c.image_encoder)},
        {"share_image_encoder", c.share_image_encoder},
        {"denoiser",
         {{"latent_width", c.denoiser.latent_width},
          {"time_dim", c.denoiser.time_dim},
          {"num_blocks", c.denoiser.num_blocks}}},
        {"diffusion",
         {{"steps", c.diffusion.steps},
          {"beta_start", c.diffusion.beta_start},
          {"beta_end", c.diffusion.beta_end}}},
    };
}

void from_json(const ordered_json& j, ModelConfig& c)
{
    c.classes = j.value("classes", c.classes);
    if (j.contains("guidance")) {
        const auto& g = j.at("guidance");
        c.guidance.image_size = g.value("image_size", c.guidance.image_size);
        if (g.contains("global_encoder")) {
            from_json(g.at("global_encoder"), c.guidance.global_encoder);
        }
        if (g.contains("local_encoder")) {
            from_json(g.at("local_encoder"), c.guidance.local_encoder);
        }
        c.guidance.roi_count = g.value("roi_count", c.guidance.roi_count);
        c.guidance.crop_size = g.value("crop_size", c.guidance.crop_size);
        c.guidance.local_input_size = g.value("local_input_size", c.guidance.local_input_size);
    }
    if (j.contains("image_encoder")) {
        from_json(j.at("image_encoder"), c.image_encoder);
    }
    c.share_image_encoder = j.value("share_image_encoder", c.share_image_encoder);
    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        c.denoiser.latent_width = d.value("latent_width", c.denoiser.latent_width);
        c.denoiser.time_dim = d.value("time_dim", c.denoiser.time_dim);
        c.denoiser.num_blocks = d.value("num_blocks", c.denoiser.num_blocks);
    }
    if (j.contains("diffusion")) {
        const auto& d = j.at("diffusion");
        c.diffusion.steps = d.value("steps", c.diffusion.steps);
        c.diffusion.beta_start = d.value("beta_start", c.diffusion.beta_start);
        c.diffusion.beta_end = d.value("beta_end", c.diffusion.beta_end);
    }
}

Models::Models(ModelConfig config)
    : config_((config.finalize(), std::move(config))),
      dcg(config_.guidance),
      image_encoder(config_.image_encoder),
      denoiser(config_.denoiser)
{
}

void Models::init(std::uint64_t seed)
{
    Rng dcg_rng(derive_seed(seed, 1));
    Rng enc_rng(derive_seed(seed, 2));
    Rng den_rng(derive_seed(seed, 3));
    dcg.init(dcg_rng);
    image_encoder.init(enc_rng);
    denoiser.init(den_rng);
    has_weights_ = true;
}

Conditioning Models::condition(const Tensor& image, ConditionCache* cache) const
{
    DcgOutput out = dcg.forward(image, cache ? &cache->dcg : nullptr);
    nn::Vec rho;
    if (config_.share_image_encoder) {
        rho = out.feature;
    } else {
        Tensor fmap = image_encoder.forward(image, cache ? &cache->image : nullptr);
        if (cache) {
            cache->image_map_shape = fmap.shape();
        }
        rho = nn::global_avg_pool(fmap);
    }
    ClassVector prior = mean_prior(out.priors.global, out.priors.local);
    return Conditioning{std::move(out), std::move(rho), std::move(prior)};
}

void Models::backward(const ConditionCache& cache, std::span<const double> dglobal_logits,
                      std::span<const double> dlocal_logits, std::span<const double> drho,
                      bool guidance)
{
    if (config_.share_image_encoder) {
        if (guidance) {
            dcg.backward(cache.dcg, dglobal_logits, dlocal_logits, drho);
        }
        return;
    }
    if (guidance) {
        dcg.backward(cache.dcg, dglobal_logits, dlocal_logits);
    }
    if (!drho.empty()) {
        image_encoder.backward(cache.image, nn::global_avg_pool_backward(drho, cache.image_map_shape));
    }
}

nn::ParamList Models::params()
{
    nn::ParamList out = guidance_params();
    for (auto& p : stream_params()) {
        out.push_back(p);
    }
    return out;
}

nn::ParamList Models::guidance_params()
{
    nn::ParamList out;
    dcg.collect("dcg", out);
    return out;
}

nn::ParamList Models::stream_params()
{
    nn::ParamList out;
    if (!config_.share_image_encoder) {
        image_encoder.collect("image_encoder", out);
    }
    denoiser.collect("denoiser", out);
    return out;
}

void save_checkpoint(const std::filesystem::path& path, Models& models, const ordered_json& metadata)
{
    const auto params = models.params();
    ordered_json index = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& p : params) {
        index.push_back({{"name", p.name}, {"shape", p.param->value.shape()}, {"offset", offset}});
        offset += p.param->value.size();
    }
    ordered_json header{{"format_version", kCheckpointVersion},
                        {"config", models.config()},
                        {"tensors", index},
                        {"metadata", metadata.is_null() ? ordered_json::object() : metadata}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
        out.write(reinterpret_cast<const char*>(p.param->value.data()),
                  static_cast<std::streamsize>(p.param->value.size() * sizeof(double)));
    }
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Models load_checkpoint(const std::filesystem::path& path, ordered_json* metadata)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t length = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&length), sizeof length);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    const ordered_json header = ordered_json::parse(text);

    Models models(header.at("config").get<ModelConfig>());
    auto params = models.params();
    const auto& index = header.at("tensors");
    if (index.size() != params.size()) {
        throw IoError("checkpoint tensor count does not match its configuration");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = index[i];
        auto& value = params[i].param->value;
        if (entry.at("name").get<std::string>() != params[i].name ||
            entry.at("shape").get<std::vector<int>>() != value.shape()) {
            throw IoError("checkpoint tensor " + entry.at("name").get<std::string>() +
                          " does not match the model layout");
        }
        in.read(reinterpret_cast<char*>(value.data()),
                static_cast<std::streamsize>(value.size() * sizeof(double)));
    }
    if (!in) {
        throw IoError("truncated checkpoint " + path.string());
    }
    models.mark_loaded();
    if (metadata) {
        *metadata = header.value("metadata", ordered_json::object());
    }
    return models;
}

}  // namespace diffclass
