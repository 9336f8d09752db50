#pragma once

#include "diffclass/data.hpp"
#include "diffclass/model.hpp"
#include "diffclass/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

namespace testing {

// Scratch directory removed on destruction.
struct TempDir {
    explicit TempDir(const std::string& tag = "t");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::filesystem::path path;
};

void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p);

// Desk topology shrunk to a few channels so finite differences stay cheap.
diffclass::ModelConfig tiny_model(int classes, int image_size = 32);

diffclass::Tensor random_image(int size, diffclass::Rng& rng);

struct ToyModel {
    std::unique_ptr<TempDir> dir;
    diffclass::DatasetManifest manifest;
    diffclass::PreprocessConfig preprocess;
    std::vector<diffclass::Sample> samples;
    std::unique_ptr<diffclass::Models> models;
    diffclass::TrainResult result;
};

struct GradCheck {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst = 0.0;
    std::string worst_name;
};

// Central differences on every scalar of every parameter. `loss` must be a
// pure function of the current parameter values; `analytic` must leave the
// gradient of that loss in Param::grad. Entries where both derivatives are
// below `floor` in magnitude count as agreeing.
inline GradCheck check_gradients(const diffclass::nn::ParamList& params, const std::function<double()>& loss,
                                 const std::function<void()>& analytic, double step = 1e-4,
                                 double tolerance = 1e-3, double floor = 1e-7)
{
    diffclass::nn::zero_grads(params);
    analytic();
    GradCheck out;
    for (const auto& ref : params) {
        auto& values = ref.param->value.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double keep = values[i];
            values[i] = keep + step;
            const double up = loss();
            values[i] = keep - step;
            const double down = loss();
            values[i] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double a = ref.param->grad.values()[i];
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel = scale < floor ? 0.0 : std::abs(a - numeric) / scale;
            ++out.checked;
            if (rel >= tolerance) {
                ++out.failed;
            }
            if (rel > out.worst) {
                out.worst = rel;
                out.worst_name = ref.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

// Desk model trained on a fresh three-class toy set.
ToyModel train_toy_model(int per_class, int epochs, std::uint64_t seed);

}  // namespace testing
