#include "diffclass/pipeline.hpp"

#include "diffclass/error.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace diffclass {

using nlohmann::ordered_json;

PipelineConfig PipelineConfig::defaults(const std::string& preset)
{
    // Placeholder vocabulary so the presets can validate; bind() replaces it.
    const std::vector<std::string> placeholder{"a", "b"};
    PipelineConfig c;
    c.preset = preset;
    if (preset == "desk") {
        c.model = ModelConfig::desk(placeholder);
        c.train.epochs = 20;
        c.train.batch_size = 30;
        c.sampler.steps = 25;
    } else if (preset == "full") {
        c.model = ModelConfig::full(placeholder);
        c.sampler.steps = 100;
    } else {
        throw std::invalid_argument("unknown preset '" + preset + "' (desk|full)");
    }
    c.preprocess.size = c.model.image_size();
    return c;
}

void PipelineConfig::bind(const std::vector<std::string>& classes)
{
    model.classes = classes;
    model.finalize();
    preprocess.size = model.image_size();
    train.validate();
    sampler.validate();
}

ordered_json to_json(const PipelineConfig& c)
{
    ordered_json j;
    j["preset"] = c.preset;
    j["model"] = c.model;
    j["model"]["denoiser"]["latent_width_meaning"] = "hidden width of the denoiser trunk";
    j["train"] = c.train;
    j["sampler"] = c.sampler;
    j["preprocess"] = {{"size", c.preprocess.size}, {"mean", c.preprocess.mean}, {"std", c.preprocess.std}};
    return j;
}

void apply_json(const ordered_json& j, PipelineConfig& c)
{
    if (j.contains("preset")) {
        c = PipelineConfig::defaults(j.at("preset").get<std::string>());
    }
    if (j.contains("model")) {
        from_json(j.at("model"), c.model);
    }
    if (j.contains("train")) {
        from_json(j.at("train"), c.train);
    }
    if (j.contains("sampler")) {
        from_json(j.at("sampler"), c.sampler);
    }
    if (j.contains("preprocess")) {
        const auto& p = j.at("preprocess");
        c.preprocess.mean = p.value("mean", c.preprocess.mean);
        c.preprocess.std = p.value("std", c.preprocess.std);
    }
}

namespace {

std::string join(const std::vector<std::string>& v)
{
    std::string out;
    for (const auto& s : v) {
        out += (out.empty() ? "" : ", ") + s;
    }
    return "[" + out + "]";
}

}  // namespace

VocabularyMismatch::VocabularyMismatch(std::vector<std::string> model, std::vector<std::string> manifest)
    : DataError("vocabulary mismatch: checkpoint classes " + join(model) + " vs manifest classes " +
                join(manifest)),
      model_(std::move(model)),
      manifest_(std::move(manifest))
{
}

std::vector<int> training_parts(int fold)
{
    if (fold < 0 || fold >= kFoldCount) {
        throw std::invalid_argument(fmt::format("fold must be in 0..{}, got {}", kFoldCount - 1, fold));
    }
    std::vector<int> parts;
    for (int p = 0; p < kFoldCount; ++p) {
        if (p != fold) {
            parts.push_back(p);
        }
    }
    return parts;
}

std::uint64_t fold_seed(std::uint64_t base, int fold)
{
    return derive_seed(base, 0xf01d, static_cast<std::uint64_t>(fold));
}

namespace {

Models train_on(const std::vector<Sample>& samples, int fold, const PipelineConfig& config,
                const TrainHooks& hooks, TrainResult* result)
{
    TrainConfig tc = config.train;
    tc.seed = fold_seed(config.train.seed, fold);
    Models models(config.model);
    models.init(tc.seed);
    TrainResult r = train(tc, samples, models, hooks);
    if (result) {
        *result = std::move(r);
    }
    return models;
}

}  // namespace

Models train_fold(const DatasetManifest& manifest, int fold, const PipelineConfig& config,
                  const TrainHooks& hooks, TrainResult* result)
{
    const auto parts = training_parts(fold);
    if (!manifest.has_folds()) {
        throw IntegrityError("training manifest has no fold assignments");
    }
    if (manifest.classes != config.model.classes) {
        throw VocabularyMismatch(config.model.classes, manifest.classes);
    }
    const DatasetManifest subset = manifest.select_parts(parts);
    if (subset.empty()) {
        throw std::invalid_argument(fmt::format("fold {} has no training records", fold));
    }
    return train_on(load_samples(subset, config.preprocess), fold, config, hooks, result);
}

EvalReport build_report(const std::vector<std::string>& classes, const std::vector<RunPredictions>& runs)
{
    const int c = static_cast<int>(classes.size());
    EvalReport report;
    report.classes = classes;
    report.pooled = ConfusionMatrix(c);
    for (const auto& run : runs) {
        std::vector<int> truths;
        std::vector<int> preds;
        std::vector<std::vector<double>> scores;
        std::size_t failed = 0;
        for (const auto& row : run.rows) {
            if (row.error) {
                ++failed;
                continue;
            }
            truths.push_back(row.truth);
            preds.push_back(row.predicted);
            scores.push_back(row.probs);
        }
        if (failed > 0) {
            report.warnings.push_back(fmt::format("{}: {} record(s) could not be evaluated", run.name, failed));
        }
        std::vector<std::string> warnings;
        const MetricSet m = compute_metrics(truths, preds, scores, c, &warnings);
        for (const auto& w : warnings) {
            report.warnings.push_back(run.name + ": " + w);
        }
        const ConfusionMatrix cm = confusion(truths, preds, c);
        report.pooled += cm;
        report.run_names.push_back(run.name);
        report.runs.push_back(m);
        report.run_confusions.push_back(cm);
    }
    if (report.runs.size() >= 2) {
        report.aggregate = aggregate_folds(report.runs);
    }
    return report;
}

EvalReport crossval(const DatasetManifest& manifest, const PipelineConfig& config, const CrossvalHooks& hooks)
{
    if (!manifest.has_folds()) {
        throw IntegrityError("cross-validation needs a manifest with fold assignments");
    }
    if (manifest.classes != config.model.classes) {
        throw VocabularyMismatch(config.model.classes, manifest.classes);
    }
    const DatasetManifest test = manifest.select_parts({kTestPart});
    if (test.empty()) {
        throw IntegrityError("test part is empty");
    }
    const auto test_samples = load_samples(test, config.preprocess);
    const auto all_samples = load_samples(manifest, config.preprocess);

    std::vector<RunPredictions> runs;
    for (int fold = 0; fold < kFoldCount; ++fold) {
        const auto parts = training_parts(fold);
        std::vector<Sample> train_samples;
        for (std::size_t i = 0; i < manifest.records.size(); ++i) {
            const int f = *manifest.records[i].fold;
            if (std::find(parts.begin(), parts.end(), f) != parts.end()) {
                train_samples.push_back(all_samples[i]);
            }
        }
        TrainHooks th;
        if (hooks.on_epoch) {
            th.on_epoch = [&](const EpochLog& e) { hooks.on_epoch(fold, e); };
        }
        TrainResult result;
        Models models = train_on(train_samples, fold, config, th, &result);
        RunPredictions run{fmt::format("fold{}", fold),
                           batch_evaluate(test_samples, models, models.schedule(), config.sampler)};
        if (hooks.on_fold) {
            hooks.on_fold(fold, models, result, run);
        }
        runs.push_back(std::move(run));
    }
    return build_report(manifest.classes, runs);
}

EvalReport evaluate_models(const std::vector<const Models*>& models, const std::vector<std::string>& names,
                           const DatasetManifest& manifest, const SamplerConfig& sampler,
                           const BatchOptions& options, std::vector<RunPredictions>* predictions)
{
    if (models.empty() || models.size() != names.size()) {
        throw std::invalid_argument("evaluate_models needs one name per model");
    }
    for (const Models* m : models) {
        if (m->config().classes != manifest.classes) {
            throw VocabularyMismatch(m->config().classes, manifest.classes);
        }
    }
    std::vector<RunPredictions> runs;
    for (std::size_t i = 0; i < models.size(); ++i) {
        BatchOptions opts = options;
        opts.preprocess.size = models[i]->config().image_size();
        runs.push_back({names[i], batch_evaluate(manifest, *models[i], models[i]->schedule(), sampler, opts)});
    }
    EvalReport report = build_report(manifest.classes, runs);
    if (predictions) {
        *predictions = std::move(runs);
    }
    return report;
}

}  // namespace diffclass
