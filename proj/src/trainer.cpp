#include "diffclass/trainer.hpp"

#include "diffclass/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffclass {

using nlohmann::ordered_json;

std::string to_string(ClassWeightMode m)
{
    return m == ClassWeightMode::Inverse ? "inverse" : "uniform";
}

std::string to_string(Augmentation a)
{
    return a == Augmentation::HFlip ? "hflip" : "none";
}

ClassWeightMode parse_class_weight_mode(const std::string& s)
{
    if (s == "inverse") {
        return ClassWeightMode::Inverse;
    }
    if (s == "uniform") {
        return ClassWeightMode::Uniform;
    }
    throw std::invalid_argument("unknown class weight mode '" + s + "' (inverse|uniform)");
}

Augmentation parse_augmentation(const std::string& s)
{
    if (s == "none") {
        return Augmentation::None;
    }
    if (s == "hflip") {
        return Augmentation::HFlip;
    }
    throw std::invalid_argument("unknown augmentation '" + s + "' (none|hflip)");
}

void TrainConfig::validate() const
{
    if (epochs < 1) {
        throw std::invalid_argument("epochs must be >= 1");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("batch size must be >= 1");
    }
    if (!(learning_rate >= 0.0)) {
        throw std::invalid_argument("learning rate must be >= 0");
    }
    if (!(lambda_dcg >= 0.0)) {
        throw std::invalid_argument("lambda_dcg must be >= 0");
    }
    if (dcg_warmup_epochs < 0 || checkpoint_every < 0) {
        throw std::invalid_argument("warmup and checkpoint cadence must be >= 0");
    }
}

void to_json(ordered_json& j, const TrainConfig& c)
{
    j = ordered_json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"class_weights", to_string(c.class_weights)},
                     {"seed", c.seed},
                     {"lambda_dcg", c.lambda_dcg},
                     {"freeze_dcg", c.freeze_dcg},
                     {"dcg_warmup_epochs", c.dcg_warmup_epochs},
                     {"augmentation", to_string(c.augmentation)},
                     {"checkpoint_every", c.checkpoint_every},
                     {"early_stopping", false}};
}

void from_json(const ordered_json& j, TrainConfig& c)
{
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.contains("class_weights")) {
        c.class_weights = parse_class_weight_mode(j.at("class_weights").get<std::string>());
    }
    c.seed = j.value("seed", c.seed);
    c.lambda_dcg = j.value("lambda_dcg", c.lambda_dcg);
    c.freeze_dcg = j.value("freeze_dcg", c.freeze_dcg);
    c.dcg_warmup_epochs = j.value("dcg_warmup_epochs", c.dcg_warmup_epochs);
    if (j.contains("augmentation")) {
        c.augmentation = parse_augmentation(j.at("augmentation").get<std::string>());
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.value("early_stopping", false)) {
        throw std::invalid_argument("early stopping is not supported");
    }
}

double diffusion_loss(std::span<const double> eps, std::span<const double> eps_hat)
{
    if (eps.size() != eps_hat.size()) {
        throw std::invalid_argument("diffusion loss needs equal-length vectors");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - eps_hat[i];
        s += d * d;
    }
    return s;
}

double weighted_cross_entropy(const ClassVector& pred, int label, std::span<const double> weights)
{
    if (label < 0 || label >= pred.size()) {
        throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                    std::to_string(pred.size()) + " classes");
    }
    if (static_cast<int>(weights.size()) != pred.size()) {
        throw std::invalid_argument("class weight count does not match the class count");
    }
    return -weights[static_cast<std::size_t>(label)] * std::log(std::max(pred[label], 1e-12));
}

std::vector<double> class_weights(const std::vector<int>& labels, const std::vector<std::string>& classes)
{
    const std::size_t c = classes.size();
    std::vector<std::size_t> counts(c, 0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c) {
            throw std::invalid_argument("label index " + std::to_string(l) + " out of range");
        }
        ++counts[static_cast<std::size_t>(l)];
    }
    std::vector<double> w(c);
    for (std::size_t i = 0; i < c; ++i) {
        if (counts[i] == 0) {
            throw std::invalid_argument("class '" + classes[i] + "' has no training samples");
        }
        w[i] = static_cast<double>(labels.size()) / (static_cast<double>(c) * counts[i]);
    }
    return w;
}

std::vector<double> class_weights(const DatasetManifest& manifest)
{
    return class_weights(manifest.labels(), manifest.classes);
}

int sample_timestep(Rng& rng, int steps)
{
    return std::uniform_int_distribution<int>(1, steps)(rng);
}

Adam::Adam(nn::ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.param->value.shape(), 0.0);
        v_.emplace_back(p.param->value.shape(), 0.0);
    }
}

void Adam::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        double* w = params_[i].param->value.data();
        const double* g = params_[i].param->grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const std::size_t n = params_[i].param->value.size();
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

ordered_json to_json(const EpochLog& e)
{
    return ordered_json{{"epoch", e.epoch},           {"diffusion", e.diffusion},
                        {"wce_global", e.wce_global}, {"wce_local", e.wce_local},
                        {"total", e.total},           {"steps", e.steps},
                        {"wall_time", e.wall_time}};
}

namespace {

// d(-w log softmax(z)_y)/dz = w * (p - onehot(y)), scaled by `scale`.
nn::Vec wce_logit_grad(const ClassVector& p, int label, double weight, double scale)
{
    nn::Vec g(static_cast<std::size_t>(p.size()));
    for (int c = 0; c < p.size(); ++c) {
        g[c] = scale * weight * (p[c] - (c == label ? 1.0 : 0.0));
    }
    return g;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, Models& models,
                  const TrainHooks& hooks)
{
    config.validate();
    if (samples.empty()) {
        throw std::invalid_argument("training set is empty");
    }
    if (!models.has_weights()) {
        throw InvalidState("models must be initialized before training");
    }
    const auto& classes = models.config().classes;
    const int num_classes = models.config().num_classes();
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        labels.push_back(s.label);
    }
    const std::vector<double> weights = config.class_weights == ClassWeightMode::Inverse
                                            ? class_weights(labels, classes)
                                            : std::vector<double>(classes.size(), 1.0);
    const NoiseSchedule sched = models.schedule();

    const bool train_guidance = !config.freeze_dcg;
    nn::ParamList all = models.params();
    Adam joint(train_guidance ? all : models.stream_params(), config.learning_rate, config.adam_beta1,
               config.adam_beta2, config.adam_eps);
    Adam warmup(models.guidance_params(), config.learning_rate, config.adam_beta1, config.adam_beta2,
                config.adam_eps);

    const std::size_t n = samples.size();
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    std::vector<std::size_t> order(n);
    TrainResult result;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const bool warming = train_guidance && epoch <= config.dcg_warmup_epochs;
        Adam& opt = warming ? warmup : joint;

        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(config.seed, 0x5bu, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochLog log;
        log.epoch = epoch;
        int batch_index = 0;
        for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
            const std::size_t end = std::min(n, start + batch);
            const double scale = 1.0 / static_cast<double>(end - start);
            nn::zero_grads(all);
            double batch_total = 0.0;
            try {
                for (std::size_t pos = start; pos < end; ++pos) {
                    const Sample& s = samples[order[pos]];
                    Rng rng(derive_seed(config.seed, 0xd1u, static_cast<std::uint64_t>(epoch), pos));
                    Tensor flipped;
                    const Tensor* image = &s.image;
                    if (config.augmentation == Augmentation::HFlip &&
                        std::bernoulli_distribution(0.5)(rng)) {
                        flipped = flip_horizontal(s.image);
                        image = &flipped;
                    }

                    ConditionCache ccache;
                    const Conditioning cond = models.condition(*image, &ccache);
                    const ClassVector& y_g = cond.dcg.priors.global;
                    const ClassVector& y_l = cond.dcg.priors.local;
                    const double wce_g = weighted_cross_entropy(y_g, s.label, weights);
                    const double wce_l = weighted_cross_entropy(y_l, s.label, weights);
                    const double lambda = train_guidance ? config.lambda_dcg : 0.0;

                    double diff = 0.0;
                    nn::Vec drho;
                    if (!warming) {
                        const int t = sample_timestep(rng, sched.steps());
                        const auto eps = standard_normal(rng, static_cast<std::size_t>(num_classes));
                        const ClassVector y0 = ClassVector::one_hot(s.label, num_classes);
                        const ClassVector y_t = forward_diffuse(y0, cond.prior, t, eps, sched);
                        DenoiserCache dcache;
                        const nn::Vec eps_hat =
                            models.denoiser.estimate_noise({cond.rho, &y_t, &y_g, &y_l, t}, &dcache);
                        diff = diffusion_loss(eps, eps_hat);
                        nn::Vec deps(eps.size());
                        for (std::size_t i = 0; i < eps.size(); ++i) {
                            deps[i] = 2.0 * scale * (eps_hat[i] - eps[i]);
                        }
                        drho = models.denoiser.backward(dcache, deps);
                    }
                    const double total = diff + (warming ? 1.0 : lambda) * (wce_g + wce_l);
                    if (!std::isfinite(total)) {
                        throw NumericFailure(fmt::format("non-finite loss at epoch {} batch {}", epoch,
                                                         batch_index),
                                             epoch);
                    }
                    const double gw = warming ? scale : lambda * scale;
                    const nn::Vec dg = wce_logit_grad(y_g, s.label, weights[s.label], gw);
                    const nn::Vec dl = wce_logit_grad(y_l, s.label, weights[s.label], gw);
                    models.backward(ccache, dg, dl, drho, train_guidance);

                    log.diffusion += diff;
                    log.wce_global += wce_g;
                    log.wce_local += wce_l;
                    log.total += total;
                    batch_total += total;
                }
            } catch (const NumericFailure& e) {
                const std::string what = e.what();
                if (what.rfind("non-finite loss", 0) == 0) {
                    throw;
                }
                throw NumericFailure(fmt::format("{} (epoch {} batch {})", what, epoch, batch_index),
                                     e.where());
            }
            if (!std::isfinite(batch_total)) {
                throw NumericFailure(fmt::format("non-finite loss at epoch {} batch {}", epoch, batch_index),
                                     epoch);
            }
            opt.step();
            ++log.steps;
        }
        const double inv = 1.0 / static_cast<double>(n);
        log.diffusion *= inv;
        log.wce_global *= inv;
        log.wce_local *= inv;
        log.total *= inv;
        log.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.optimizer_steps += log.steps;
        result.log.push_back(log);
        if (hooks.on_epoch) {
            hooks.on_epoch(log);
        }
        if (hooks.on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 &&
            epoch != config.epochs) {
            hooks.on_checkpoint(epoch, models);
        }
    }
    return result;
}

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest,
                  const PreprocessConfig& preprocess, Models& models, const TrainHooks& hooks)
{
    if (manifest.empty()) {
        throw std::invalid_argument("training manifest is empty");
    }
    if (manifest.classes != models.config().classes) {
        throw std::invalid_argument("manifest vocabulary does not match the model vocabulary");
    }
    return train(config, load_samples(manifest, preprocess), models, hooks);
}

}  // namespace diffclass
