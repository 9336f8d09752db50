#pragma once

#include "diffclass/data.hpp"
#include "diffclass/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace diffclass {

enum class InitMode {
    PriorShifted,    // y_T ~ N(ŷ, I), the forward marginal at large T
    StandardNormal,  // y_T ~ N(0, I)
};

struct SamplerConfig {
    int steps = 100;            // reverse steps; 0 or >= T runs every step
    int chains = 1;             // probabilities are averaged over chains
    double temperature = 0.1;   // softmax temperature applied to the final ŷ0
    std::uint64_t seed = 0;
    InitMode init = InitMode::PriorShifted;

    void validate() const;
    bool operator==(const SamplerConfig&) const = default;
};

void to_json(nlohmann::ordered_json& j, const SamplerConfig& c);
void from_json(const nlohmann::ordered_json& j, SamplerConfig& c);

// Descending timesteps visited by the sampler, starting at T. The chain steps
// from each entry to the next and from the last entry to 0. With `steps` in
// 1..T-1 the entries are evenly spaced.
std::vector<int> step_sequence(int total_steps, int steps);

struct Classification {
    ClassVector probs;
    int predicted = 0;
};

// Runs the reverse chain for one image. Reads weights only.
Classification classify(const Tensor& image, const Models& models, const NoiseSchedule& sched,
                        const SamplerConfig& config, std::uint64_t image_seed);

// Same, reusing an already computed conditioning.
Classification classify(const Conditioning& cond, const Models& models, const NoiseSchedule& sched,
                        const SamplerConfig& config, std::uint64_t image_seed);

std::uint64_t image_seed(std::uint64_t run_seed, const std::string& image_id);

struct PredictionRow {
    std::string image_id;
    int truth = -1;
    int predicted = -1;
    std::vector<double> probs;
    std::optional<std::string> error;  // set when the record could not be evaluated
};

struct BatchOptions {
    PreprocessConfig preprocess;
    bool fail_fast = false;
};

std::vector<PredictionRow> batch_evaluate(const DatasetManifest& manifest, const Models& models,
                                          const NoiseSchedule& sched, const SamplerConfig& config,
                                          const BatchOptions& options = {});

std::vector<PredictionRow> batch_evaluate(const std::vector<Sample>& samples, const Models& models,
                                          const NoiseSchedule& sched, const SamplerConfig& config);

// Header: image_id,true_label,predicted_label,p_<class>... Failed rows keep
// empty prediction cells.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows,
                       const std::vector<std::string>& classes);

}  // namespace diffclass
