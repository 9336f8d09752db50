#pragma once

// Prior-conditioned Gaussian diffusion over class-label vectors.
//
// The forward process shifts the clean label y0 toward a prior mean ŷ:
//
//   y_t = sqrt(ab_t) * y0 + (1 - sqrt(ab_t)) * ŷ + sqrt(1 - ab_t) * eps
//
// where ab_t is the cumulative product of alpha = 1 - beta. Subtracting ŷ turns
// this into an ordinary DDPM chain on (y - ŷ), which is how the posterior
// coefficients below are obtained.

#include "diffclass/rng.hpp"

#include <span>
#include <vector>

namespace diffclass {

class NoiseSchedule {
public:
    // Linear betas: beta[t] = start + (t-1)/(T-1) * (end - start), t in 1..T.
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);
    // Arbitrary betas for t = 1..T (betas[0] is beta_1).
    static NoiseSchedule from_betas(std::vector<double> betas);

    int steps() const { return steps_; }
    double beta(int t) const;       // t in 1..T
    double alpha(int t) const;      // t in 1..T
    double alpha_bar(int t) const;  // t in 0..T, alpha_bar(0) == 1

    double beta_start() const { return beta_[1]; }
    double beta_end() const { return beta_[steps_]; }

private:
    NoiseSchedule() = default;
    void check_step(int t, int lo) const;

    int steps_ = 0;
    // Index 0 is the clean-data boundary; beta_[0] and alpha_[0] are unused.
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end)
{
    return NoiseSchedule::linear(steps, beta_start, beta_end);
}

enum class VectorKind { OneHot, Distribution, Raw };

// Length-C vector over classes. C >= 2 always.
class ClassVector {
public:
    static ClassVector one_hot(int label, int num_classes);
    // Validates nonnegativity and unit sum (1e-6).
    static ClassVector distribution(std::vector<double> probs);
    static ClassVector raw(std::vector<double> values);

    VectorKind kind() const { return kind_; }
    int size() const { return static_cast<int>(values_.size()); }
    std::span<const double> values() const { return values_; }
    double operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }

    // Index of the largest entry; ties go to the lowest index.
    int argmax() const;

private:
    ClassVector(std::vector<double> v, VectorKind k);
    std::vector<double> values_;
    VectorKind kind_;
};

// Mean of two distributions, used as the shared-stream diffusion shift.
ClassVector mean_prior(const ClassVector& global, const ClassVector& local);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// Closed-form forward sample given an explicit cumulative alpha.
ClassVector forward_diffuse_at(const ClassVector& y0, const ClassVector& prior, double alpha_bar,
                               std::span<const double> eps);

ClassVector forward_diffuse(const ClassVector& y0, const ClassVector& prior, int t,
                            std::span<const double> eps, const NoiseSchedule& sched);

// Convenience overload drawing eps ~ N(0, I) from `rng`.
ClassVector forward_diffuse(const ClassVector& y0, const ClassVector& prior, int t,
                            const NoiseSchedule& sched, Rng& rng);

ClassVector predict_y0_at(const ClassVector& y_t, std::span<const double> eps_hat,
                          const ClassVector& prior, double alpha_bar);

// Algebraic inverse of forward_diffuse. t in 1..T.
ClassVector predict_y0(const ClassVector& y_t, std::span<const double> eps_hat,
                       const ClassVector& prior, int t, const NoiseSchedule& sched);

// Posterior q(y_s | y_t, y0) = N(g0*y0 + g1*y_t + g2*ŷ, variance * I).
struct PosteriorCoefficients {
    double gamma0;
    double gamma1;
    double gamma2;
    double variance;
};

// 0 <= s < t <= T. With s = t-1 this is the single-step posterior; larger gaps
// use the marginal transition ab_t / ab_s, which is what strided sampling needs.
PosteriorCoefficients posterior_coefficients(const NoiseSchedule& sched, int t, int s);

// One ancestral step t -> t-1. `z` is ignored (treated as 0) when t == 1.
ClassVector reverse_step(const ClassVector& y_t, std::span<const double> eps_hat,
                         const ClassVector& prior, int t, std::span<const double> z,
                         const NoiseSchedule& sched);

// Ancestral step t -> s for any 0 <= s < t. `z` is ignored when s == 0.
ClassVector reverse_step_to(const ClassVector& y_t, std::span<const double> eps_hat,
                            const ClassVector& prior, int t, int s, std::span<const double> z,
                            const NoiseSchedule& sched);

}  // namespace diffclass
