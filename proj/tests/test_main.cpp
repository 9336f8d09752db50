#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <fmt/format.h>

#include <atomic>
#include <chrono>

namespace testing {

TempDir::TempDir(const std::string& tag)
{
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           fmt::format("diffclass-{}-{}-{}", tag, stamp, counter.fetch_add(1));
    std::filesystem::create_directories(path);
}

TempDir::~TempDir()
{
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
}

void write_text(const std::filesystem::path& p, const std::string& text)
{
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

diffclass::ModelConfig tiny_model(int classes, int image_size)
{
    std::vector<std::string> names;
    for (int c = 0; c < classes; ++c) {
        names.push_back("class" + std::to_string(c));
    }
    diffclass::ModelConfig cfg = diffclass::ModelConfig::desk(names, image_size);
    for (auto* enc : {&cfg.guidance.global_encoder, &cfg.guidance.local_encoder, &cfg.image_encoder}) {
        enc->stem_channels = 4;
        enc->stage_channels = {4, 6};
    }
    cfg.denoiser.latent_width = 16;
    cfg.denoiser.time_dim = 8;
    cfg.finalize();
    return cfg;
}

diffclass::Tensor random_image(int size, diffclass::Rng& rng)
{
    diffclass::Tensor img({3, size, size});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : img.values()) {
        v = dist(rng);
    }
    return img;
}

ToyModel train_toy_model(int per_class, int epochs, std::uint64_t seed)
{
    ToyModel out;
    out.dir = std::make_unique<TempDir>("toy");
    diffclass::ToyConfig toy;
    toy.per_class = per_class;
    toy.seed = seed;
    out.manifest = diffclass::synth_toy_dataset(toy, out.dir->path);
    diffclass::ModelConfig cfg = diffclass::ModelConfig::desk(out.manifest.classes);
    out.preprocess.size = cfg.image_size();
    out.samples = diffclass::load_samples(out.manifest, out.preprocess);
    out.models = std::make_unique<diffclass::Models>(cfg);
    out.models->init(seed);
    diffclass::TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = seed;
    out.result = diffclass::train(tc, out.samples, *out.models);
    return out;
}

}  // namespace testing
