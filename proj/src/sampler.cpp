#include "diffclass/sampler.hpp"

#include "diffclass/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace diffclass {

using nlohmann::ordered_json;

void SamplerConfig::validate() const
{
    if (steps < 0) {
        throw std::invalid_argument("sampler steps must be >= 0");
    }
    if (chains < 1) {
        throw std::invalid_argument("sampler needs at least one chain");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax temperature must be > 0");
    }
}

void to_json(ordered_json& j, const SamplerConfig& c)
{
    j = ordered_json{{"steps", c.steps},
                     {"chains", c.chains},
                     {"temperature", c.temperature},
                     {"seed", c.seed},
                     {"init", c.init == InitMode::PriorShifted ? "prior" : "standard"}};
}

void from_json(const ordered_json& j, SamplerConfig& c)
{
    c.steps = j.value("steps", c.steps);
    c.chains = j.value("chains", c.chains);
    c.temperature = j.value("temperature", c.temperature);
    c.seed = j.value("seed", c.seed);
    if (j.contains("init")) {
        const auto s = j.at("init").get<std::string>();
        if (s == "prior") {
            c.init = InitMode::PriorShifted;
        } else if (s == "standard") {
            c.init = InitMode::StandardNormal;
        } else {
            throw std::invalid_argument("unknown sampler init '" + s + "' (prior|standard)");
        }
    }
}

std::vector<int> step_sequence(int total_steps, int steps)
{
    if (total_steps < 1 || steps < 0) {
        throw std::invalid_argument("invalid step sequence request");
    }
    std::vector<int> seq;
    if (steps == 0 || steps >= total_steps) {
        for (int t = total_steps; t >= 1; --t) {
            seq.push_back(t);
        }
        return seq;
    }
    // t_i = round(T * (steps - i) / steps), i = 0..steps-1; distinct since T > steps.
    for (int i = 0; i < steps; ++i) {
        const double v = static_cast<double>(total_steps) * (steps - i) / steps;
        seq.push_back(std::max(1, static_cast<int>(std::lround(v))));
    }
    return seq;
}

Classification classify(const Conditioning& cond, const Models& models, const NoiseSchedule& sched,
                        const SamplerConfig& config, std::uint64_t seed)
{
    config.validate();
    if (!models.has_weights()) {
        throw InvalidState("classify called on models without weights");
    }
    const int c = models.config().num_classes();
    const auto seq = step_sequence(sched.steps(), config.steps);
    const ClassVector& y_g = cond.dcg.priors.global;
    const ClassVector& y_l = cond.dcg.priors.local;

    std::vector<double> probs(static_cast<std::size_t>(c), 0.0);
    for (int chain = 0; chain < config.chains; ++chain) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(chain)));
        auto init = standard_normal(rng, static_cast<std::size_t>(c));
        if (config.init == InitMode::PriorShifted) {
            for (int i = 0; i < c; ++i) {
                init[i] += cond.prior[i];
            }
        }
        ClassVector y = ClassVector::raw(std::move(init));
        for (std::size_t k = 0; k < seq.size(); ++k) {
            const int t = seq[k];
            const int s = k + 1 < seq.size() ? seq[k + 1] : 0;
            const nn::Vec eps_hat = models.denoiser.estimate_noise({cond.rho, &y, &y_g, &y_l, t});
            // The last step lands on ŷ0 itself and draws no noise.
            const auto z = s > 0 ? standard_normal(rng, static_cast<std::size_t>(c)) : std::vector<double>{};
            y = reverse_step_to(y, eps_hat, cond.prior, t, s, z, sched);
            if (!all_finite(y.values())) {
                throw NumericFailure(fmt::format("non-finite chain value at step t={}", t), t);
            }
        }
        const auto p = softmax(y.values(), config.temperature);
        for (int i = 0; i < c; ++i) {
            probs[i] += p[i] / config.chains;
        }
    }
    // Renormalize away rounding from the chain average.
    double sum = 0.0;
    for (double v : probs) {
        sum += v;
    }
    for (double& v : probs) {
        v /= sum;
    }
    ClassVector out = ClassVector::distribution(std::move(probs));
    const int predicted = out.argmax();
    return {std::move(out), predicted};
}

Classification classify(const Tensor& image, const Models& models, const NoiseSchedule& sched,
                        const SamplerConfig& config, std::uint64_t seed)
{
    if (!models.has_weights()) {
        throw InvalidState("classify called on models without weights");
    }
    return classify(models.condition(image), models, sched, config, seed);
}

std::uint64_t image_seed(std::uint64_t run_seed, const std::string& image_id)
{
    return derive_seed(run_seed, fnv1a64(image_id));
}

namespace {

PredictionRow to_row(const std::string& id, int truth, const Classification& c)
{
    return {id, truth, c.predicted, {c.probs.values().begin(), c.probs.values().end()}, std::nullopt};
}

}  // namespace

std::vector<PredictionRow> batch_evaluate(const DatasetManifest& manifest, const Models& models,
                                          const NoiseSchedule& sched, const SamplerConfig& config,
                                          const BatchOptions& options)
{
    std::vector<PredictionRow> rows;
    rows.reserve(manifest.size());
    for (const auto& r : manifest.records) {
        const int truth = manifest.label_index(r.label);
        try {
            const Tensor image = preprocess(manifest.image_path(r), options.preprocess);
            rows.push_back(to_row(r.image_id, truth,
                                  classify(image, models, sched, config, image_seed(config.seed, r.image_id))));
        } catch (const DataError& e) {
            if (options.fail_fast) {
                throw;
            }
            PredictionRow row;
            row.image_id = r.image_id;
            row.truth = truth;
            row.error = e.what();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<PredictionRow> batch_evaluate(const std::vector<Sample>& samples, const Models& models,
                                          const NoiseSchedule& sched, const SamplerConfig& config)
{
    std::vector<PredictionRow> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        rows.push_back(to_row(s.image_id, s.label,
                              classify(s.image, models, sched, config, image_seed(config.seed, s.image_id))));
    }
    return rows;
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows,
                       const std::vector<std::string>& classes)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write predictions " + path.string());
    }
    out << "image_id,true_label,predicted_label";
    for (const auto& c : classes) {
        out << ",p_" << c;
    }
    out << '\n';
    auto name = [&](int i) { return i >= 0 && i < static_cast<int>(classes.size()) ? classes[i] : std::string(); };
    for (const auto& r : rows) {
        out << r.image_id << ',' << name(r.truth) << ',';
        if (r.error) {
            out << std::string(classes.size(), ',') << '\n';
            continue;
        }
        out << name(r.predicted);
        for (double p : r.probs) {
            out << ',' << fmt::format("{:.6f}", p);
        }
        out << '\n';
    }
}

}  // namespace diffclass
