#include "diffclass/diffusion.hpp"

#include "diffclass/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace diffclass {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

void require_prior(const ClassVector& prior)
{
    if (prior.kind() != VectorKind::Distribution) {
        throw std::invalid_argument("prior must be a class distribution");
    }
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end)
{
    if (steps < 2) {
        throw std::invalid_argument("noise schedule needs at least 2 steps, got " +
                                    std::to_string(steps));
    }
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw std::invalid_argument("beta bounds must satisfy 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int t = 1; t <= steps; ++t) {
        betas[t - 1] = beta_start + static_cast<double>(t - 1) / (steps - 1) * (beta_end - beta_start);
    }
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas)
{
    if (betas.size() < 2) {
        throw std::invalid_argument("noise schedule needs at least 2 steps");
    }
    NoiseSchedule s;
    s.steps_ = static_cast<int>(betas.size());
    s.beta_.assign(betas.size() + 1, 0.0);
    s.alpha_.assign(betas.size() + 1, 1.0);
    s.alpha_bar_.assign(betas.size() + 1, 1.0);
    for (int t = 1; t <= s.steps_; ++t) {
        const double b = betas[t - 1];
        if (!(b > 0.0) || !(b < 1.0)) {
            throw std::invalid_argument("beta values must lie in (0, 1)");
        }
        s.beta_[t] = b;
        s.alpha_[t] = 1.0 - b;
        s.alpha_bar_[t] = s.alpha_bar_[t - 1] * s.alpha_[t];
    }
    return s;
}

void NoiseSchedule::check_step(int t, int lo) const
{
    if (t < lo || t > steps_) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside " +
                                    std::to_string(lo) + ".." + std::to_string(steps_));
    }
}

double NoiseSchedule::beta(int t) const
{
    check_step(t, 1);
    return beta_[t];
}

double NoiseSchedule::alpha(int t) const
{
    check_step(t, 1);
    return alpha_[t];
}

double NoiseSchedule::alpha_bar(int t) const
{
    check_step(t, 0);
    return alpha_bar_[t];
}

ClassVector::ClassVector(std::vector<double> v, VectorKind k) : values_(std::move(v)), kind_(k)
{
    if (values_.size() < 2) {
        throw std::invalid_argument("class vectors need at least 2 classes");
    }
}

ClassVector ClassVector::one_hot(int label, int num_classes)
{
    if (num_classes < 2) {
        throw std::invalid_argument("class vectors need at least 2 classes");
    }
    if (label < 0 || label >= num_classes) {
        throw std::invalid_argument("label " + std::to_string(label) + " outside 0.." +
                                    std::to_string(num_classes - 1));
    }
    std::vector<double> v(static_cast<std::size_t>(num_classes), 0.0);
    v[static_cast<std::size_t>(label)] = 1.0;
    return ClassVector(std::move(v), VectorKind::OneHot);
}

ClassVector ClassVector::distribution(std::vector<double> probs)
{
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) {
            throw std::invalid_argument("distribution entries must be nonnegative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("distribution must sum to 1, got " + std::to_string(sum));
    }
    return ClassVector(std::move(probs), VectorKind::Distribution);
}

ClassVector ClassVector::raw(std::vector<double> values)
{
    return ClassVector(std::move(values), VectorKind::Raw);
}

int ClassVector::argmax() const
{
    return static_cast<int>(std::max_element(values_.begin(), values_.end()) - values_.begin());
}

ClassVector mean_prior(const ClassVector& global, const ClassVector& local)
{
    require_same_length(global.size(), local.size(), "mean_prior");
    std::vector<double> m(static_cast<std::size_t>(global.size()));
    for (int i = 0; i < global.size(); ++i) {
        m[i] = 0.5 * (global[i] + local[i]);
    }
    return ClassVector::distribution(std::move(m));
}

std::vector<double> softmax(std::span<const double> logits, double temperature)
{
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax temperature must be positive");
    }
    std::vector<double> out(logits.size());
    if (logits.empty()) {
        return out;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - peak) / temperature);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

ClassVector forward_diffuse_at(const ClassVector& y0, const ClassVector& prior, double alpha_bar,
                               std::span<const double> eps)
{
    require_prior(prior);
    require_same_length(y0.size(), prior.size(), "forward_diffuse");
    require_same_length(y0.size(), eps.size(), "forward_diffuse");
    const double signal = std::sqrt(alpha_bar);
    const double noise = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(static_cast<std::size_t>(y0.size()));
    for (int i = 0; i < y0.size(); ++i) {
        out[i] = signal * y0[i] + (1.0 - signal) * prior[i] + noise * eps[i];
    }
    return ClassVector::raw(std::move(out));
}

ClassVector forward_diffuse(const ClassVector& y0, const ClassVector& prior, int t,
                            std::span<const double> eps, const NoiseSchedule& sched)
{
    const double ab = sched.alpha_bar(t);
    if (t == 0) {
        require_prior(prior);
        require_same_length(y0.size(), prior.size(), "forward_diffuse");
        require_same_length(y0.size(), eps.size(), "forward_diffuse");
        return y0;
    }
    return forward_diffuse_at(y0, prior, ab, eps);
}

ClassVector forward_diffuse(const ClassVector& y0, const ClassVector& prior, int t,
                            const NoiseSchedule& sched, Rng& rng)
{
    const auto eps = standard_normal(rng, static_cast<std::size_t>(y0.size()));
    return forward_diffuse(y0, prior, t, eps, sched);
}

ClassVector predict_y0_at(const ClassVector& y_t, std::span<const double> eps_hat,
                          const ClassVector& prior, double alpha_bar)
{
    require_prior(prior);
    require_same_length(y_t.size(), prior.size(), "predict_y0");
    require_same_length(y_t.size(), eps_hat.size(), "predict_y0");
    if (!(alpha_bar > 0.0)) {
        throw std::invalid_argument("predict_y0 needs alpha_bar > 0");
    }
    const double signal = std::sqrt(alpha_bar);
    const double noise = std::sqrt(1.0 - alpha_bar);
    std::vector<double> out(static_cast<std::size_t>(y_t.size()));
    for (int i = 0; i < y_t.size(); ++i) {
        out[i] = (y_t[i] - (1.0 - signal) * prior[i] - noise * eps_hat[i]) / signal;
    }
    return ClassVector::raw(std::move(out));
}

ClassVector predict_y0(const ClassVector& y_t, std::span<const double> eps_hat,
                       const ClassVector& prior, int t, const NoiseSchedule& sched)
{
    if (t < 1 || t > sched.steps()) {
        throw std::invalid_argument("predict_y0: timestep " + std::to_string(t) + " outside 1.." +
                                    std::to_string(sched.steps()));
    }
    return predict_y0_at(y_t, eps_hat, prior, sched.alpha_bar(t));
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& sched, int t, int s)
{
    if (t < 1 || t > sched.steps() || s < 0 || s >= t) {
        throw std::invalid_argument("posterior step must satisfy 0 <= s < t <= T (t=" +
                                    std::to_string(t) + ", s=" + std::to_string(s) + ")");
    }
    const double ab_t = sched.alpha_bar(t);
    const double ab_s = sched.alpha_bar(s);
    // Transition s -> t of the marginal chain; equals alpha_t / beta_t when s = t-1.
    const double alpha_ts = s == t - 1 ? sched.alpha(t) : ab_t / ab_s;
    const double beta_ts = s == t - 1 ? sched.beta(t) : 1.0 - alpha_ts;
    const double denom = 1.0 - ab_t;

    PosteriorCoefficients c{};
    c.gamma0 = std::sqrt(ab_s) * beta_ts / denom;
    c.gamma1 = std::sqrt(alpha_ts) * (1.0 - ab_s) / denom;
    c.gamma2 = 1.0 + (std::sqrt(ab_t) - 1.0) * (std::sqrt(alpha_ts) + std::sqrt(ab_s)) / denom;
    c.variance = (1.0 - ab_s) * beta_ts / denom;
    return c;
}

ClassVector reverse_step_to(const ClassVector& y_t, std::span<const double> eps_hat,
                            const ClassVector& prior, int t, int s, std::span<const double> z,
                            const NoiseSchedule& sched)
{
    const auto coef = posterior_coefficients(sched, t, s);
    const ClassVector y0_hat = predict_y0(y_t, eps_hat, prior, t, sched);
    const bool terminal = s == 0;
    if (!terminal) {
        require_same_length(y_t.size(), z.size(), "reverse_step");
    }
    const double sigma = terminal ? 0.0 : std::sqrt(coef.variance);
    std::vector<double> out(static_cast<std::size_t>(y_t.size()));
    for (int i = 0; i < y_t.size(); ++i) {
        out[i] = coef.gamma0 * y0_hat[i] + coef.gamma1 * y_t[i] + coef.gamma2 * prior[i];
        if (!terminal) {
            out[i] += sigma * z[i];
        }
    }
    return ClassVector::raw(std::move(out));
}

ClassVector reverse_step(const ClassVector& y_t, std::span<const double> eps_hat,
                         const ClassVector& prior, int t, std::span<const double> z,
                         const NoiseSchedule& sched)
{
    return reverse_step_to(y_t, eps_hat, prior, t, t - 1, z, sched);
}

}  // namespace diffclass
