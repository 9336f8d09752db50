#pragma once

#include "diffclass/data.hpp"
#include "diffclass/error.hpp"
#include "diffclass/metrics.hpp"
#include "diffclass/model.hpp"
#include "diffclass/sampler.hpp"
#include "diffclass/trainer.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace diffclass {

// Everything a run needs besides data. `model.classes` is filled from the
// manifest at run time.
struct PipelineConfig {
    std::string preset = "desk";  // desk | full
    ModelConfig model;
    TrainConfig train;
    SamplerConfig sampler;
    PreprocessConfig preprocess;

    // Preset defaults. Desk: 32 px compact encoders, T = 100. Full: 224 px
    // ResNet18 encoders, T = 1000, 150 epochs, batch 30.
    static PipelineConfig defaults(const std::string& preset);
    // Sets the vocabulary, syncs the preprocessing size and validates.
    void bind(const std::vector<std::string>& classes);
};

nlohmann::ordered_json to_json(const PipelineConfig& c);
// Overlays `j` onto `c`; missing keys keep their current values.
void apply_json(const nlohmann::ordered_json& j, PipelineConfig& c);

// Raised when a checkpoint's classes differ from the evaluation manifest's.
class VocabularyMismatch : public DataError {
public:
    VocabularyMismatch(std::vector<std::string> model, std::vector<std::string> manifest);
    const std::vector<std::string>& model_classes() const { return model_; }
    const std::vector<std::string>& manifest_classes() const { return manifest_; }

private:
    std::vector<std::string> model_;
    std::vector<std::string> manifest_;
};

std::vector<int> training_parts(int fold);

// Seed used for fold `fold`'s initialization and batch order.
std::uint64_t fold_seed(std::uint64_t base, int fold);

// Trains one fold model on parts {0..4} minus `fold`. `manifest` must carry
// fold assignments; `config` must be bound to its vocabulary.
Models train_fold(const DatasetManifest& manifest, int fold, const PipelineConfig& config,
                  const TrainHooks& hooks = {}, TrainResult* result = nullptr);

struct RunPredictions {
    std::string name;
    std::vector<PredictionRow> rows;
};

// Metrics per run over successfully evaluated rows, pooled confusion and, for
// two or more runs, mean ± std.
EvalReport build_report(const std::vector<std::string>& classes, const std::vector<RunPredictions>& runs);

struct CrossvalHooks {
    std::function<void(int fold, const EpochLog&)> on_epoch;
    std::function<void(int fold, Models&, const TrainResult&, const RunPredictions&)> on_fold;
};

// Five fold models, each evaluated on the held-out test part.
EvalReport crossval(const DatasetManifest& manifest, const PipelineConfig& config,
                    const CrossvalHooks& hooks = {});

// Evaluates already trained models on `manifest` (all records). Throws
// VocabularyMismatch when any model's classes differ from the manifest's.
EvalReport evaluate_models(const std::vector<const Models*>& models, const std::vector<std::string>& names,
                           const DatasetManifest& manifest, const SamplerConfig& sampler,
                           const BatchOptions& options, std::vector<RunPredictions>* predictions = nullptr);

}  // namespace diffclass
