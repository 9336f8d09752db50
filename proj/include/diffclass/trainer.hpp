#pragma once

#include "diffclass/data.hpp"
#include "diffclass/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace diffclass {

enum class ClassWeightMode { Inverse, Uniform };
enum class Augmentation { None, HFlip };

std::string to_string(ClassWeightMode m);
std::string to_string(Augmentation a);
ClassWeightMode parse_class_weight_mode(const std::string& s);
Augmentation parse_augmentation(const std::string& s);

struct TrainConfig {
    int epochs = 150;
    int batch_size = 30;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    ClassWeightMode class_weights = ClassWeightMode::Inverse;
    std::uint64_t seed = 0;
    double lambda_dcg = 1.0;
    bool freeze_dcg = false;
    int dcg_warmup_epochs = 0;  // epochs of guidance-only training before the joint phase
    Augmentation augmentation = Augmentation::None;
    int checkpoint_every = 0;   // 0: only the final checkpoint

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);

// ||eps - eps_hat||^2
double diffusion_loss(std::span<const double> eps, std::span<const double> eps_hat);

// -w[label] * log(max(pred[label], 1e-12))
double weighted_cross_entropy(const ClassVector& pred, int label, std::span<const double> weights);

// w_c = N / (C * n_c)
std::vector<double> class_weights(const DatasetManifest& manifest);
std::vector<double> class_weights(const std::vector<int>& labels, const std::vector<std::string>& classes);

// Uniform on 1..T.
int sample_timestep(Rng& rng, int steps);

class Adam {
public:
    Adam(nn::ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    int steps_taken() const { return t_; }
    const nn::ParamList& params() const { return params_; }

private:
    nn::ParamList params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double diffusion = 0.0;
    double wce_global = 0.0;
    double wce_local = 0.0;
    double total = 0.0;
    int steps = 0;
    double wall_time = 0.0;  // seconds
};

nlohmann::ordered_json to_json(const EpochLog& e);

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    std::function<void(int epoch, Models& models)> on_checkpoint;  // every checkpoint_every epochs
};

struct TrainResult {
    std::vector<EpochLog> log;
    int optimizer_steps = 0;
};

// Joint training of guidance and diffusion streams. `models` must already hold
// initialized weights.
TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, Models& models,
                  const TrainHooks& hooks = {});

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest,
                  const PreprocessConfig& preprocess, Models& models, const TrainHooks& hooks = {});

}  // namespace diffclass
