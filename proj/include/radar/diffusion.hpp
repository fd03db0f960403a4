#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "radar/tape.hpp"

namespace radar::diffusion {

// Embedding-space diffusion. Noise levels follow a linear ramp on the
// cumulative signal loss: 1 - abar_t = shrink * (low + (t-1)/(T-1) (up - low)),
// scaled well below one so even the last step keeps most of the signal. A
// small MLP with a sinusoidal step encoding predicts the clean embedding, and
// reverse steps move through the usual Gaussian posterior.

struct Schedule {
    std::size_t steps = 0;   // T
    double shrink = 0.0;     // overall noise scale; zero collapses to identity
    double alpha_low = 0.0;
    double alpha_up = 0.0;
    std::vector<double> alpha_bar;  // index 0..T, alpha_bar[0] = 1
    std::vector<double> beta;       // index 1..T, beta[0] unused

    static Schedule make(std::size_t T, double shrink, double alpha_low, double alpha_up) {
        require(T >= 1, "schedule: need at least one step");
        require(shrink >= 0.0 && shrink < 1.0, "schedule: shrink must lie in [0, 1)");
        require(alpha_low > 0.0 && alpha_low <= alpha_up && alpha_up < 1.0,
                "schedule: ramp bounds must satisfy 0 < low <= up < 1");
        Schedule s;
        s.steps = T;
        s.shrink = shrink;
        s.alpha_low = alpha_low;
        s.alpha_up = alpha_up;
        s.alpha_bar.assign(T + 1, 1.0);
        s.beta.assign(T + 1, 0.0);
        for (std::size_t t = 1; t <= T; ++t) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
            // convex form rather than low + frac * (up - low): the ends must
            // equal shrink * alpha_low and shrink * alpha_up bitwise
            const double lost = shrink * ((1.0 - frac) * alpha_low + frac * alpha_up);
            s.alpha_bar[t] = 1.0 - lost;
            s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
        }
        return s;
    }

    bool degenerate() const { return shrink == 0.0; }
};

// Reverse-posterior coefficients at step t:
//   mean = c_clean * x0_hat + c_noisy * x_t, variance = beta_tilde.
struct PosteriorCoef {
    double c_clean = 0.0;
    double c_noisy = 0.0;
    double beta_tilde = 0.0;
    bool identity = false;  // signal fully intact; the step is a no-op
};

inline PosteriorCoef posterior(const Schedule& s, std::size_t t) {
    require(t >= 1 && t <= s.steps, "posterior: step out of range");
    PosteriorCoef c;
    const double ab_t = s.alpha_bar[t], ab_p = s.alpha_bar[t - 1];
    const double one_minus = 1.0 - ab_t;
    if (one_minus < 1e-12) {
        c.identity = true;
        return c;
    }
    const double alpha_t = ab_t / ab_p;
    c.c_clean = std::sqrt(ab_p) * s.beta[t] / one_minus;
    c.c_noisy = std::sqrt(alpha_t) * (1.0 - ab_p) / one_minus;
    c.beta_tilde = (1.0 - ab_p) / one_minus * s.beta[t];
    return c;
}

// Sinusoidal step encoding, kTimeDim/2 frequency pairs.
constexpr std::size_t kTimeDim = 8;

inline Tensor time_encoding(std::span<const std::size_t> t_steps) {
    Tensor enc({t_steps.size(), kTimeDim});
    for (std::size_t r = 0; r < t_steps.size(); ++r)
        for (std::size_t p = 0; p < kTimeDim / 2; ++p) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(p) / kTimeDim);
            enc.at(r, 2 * p) = std::sin(static_cast<double>(t_steps[r]) * freq);
            enc.at(r, 2 * p + 1) = std::cos(static_cast<double>(t_steps[r]) * freq);
        }
    return enc;
}

struct Params {
    Tensor w1;  // (d + kTimeDim) x hidden
    Tensor b1;  // 1 x hidden
    Tensor w2;  // hidden x d
    Tensor b2;  // 1 x d

    static Params init(std::size_t d, std::size_t hidden, Rng& rng) {
        Params p;
        p.w1 = Tensor::randn(d + kTimeDim, hidden, 1.0 / std::sqrt(static_cast<double>(d + kTimeDim)), rng);
        p.b1 = Tensor::zeros(1, hidden);
        p.w2 = Tensor::randn(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
        p.b2 = Tensor::zeros(1, d);
        return p;
    }

    std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2}; }
};

struct NetVars {
    Var w1, b1, w2, b2;

    std::vector<Var> all() const { return {w1, b1, w2, b2}; }
};

inline NetVars load_params(Tape& t, Params& p) {
    return NetVars{t.input(p.w1), t.input(p.b1), t.input(p.w2), t.input(p.b2)};
}

// Frozen copy for paths where the net acts as a fixed denoiser and gradients
// should reach only the embeddings.
inline NetVars constant_params(Tape& t, const Params& p) {
    return NetVars{t.constant(p.w1), t.constant(p.b1), t.constant(p.w2), t.constant(p.b2)};
}

// Clean-embedding prediction from a noisy batch and its step encoding.
inline Var predict_clean(Tape& t, const NetVars& nv, Var x_noisy, const Tensor& enc) {
    Var joined = t.concat_cols(x_noisy, t.constant(enc));
    Var hidden = t.tanh_(t.add_rowvec(t.matmul(joined, nv.w1), nv.b1));
    return t.add_rowvec(t.matmul(hidden, nv.w2), nv.b2);
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one step index per row.
inline Var forward_noise(Tape& t, const Schedule& s, Var x0, std::span<const std::size_t> t_steps,
                         Rng& rng) {
    const Tensor& x = t.value(x0);
    require(t_steps.size() == x.rows(), "forward_noise: one step per row");
    std::vector<double> c_sig(t_steps.size()), c_noise(t_steps.size());
    for (std::size_t r = 0; r < t_steps.size(); ++r) {
        require(t_steps[r] >= 1 && t_steps[r] <= s.steps, "forward_noise: step out of range");
        c_sig[r] = std::sqrt(s.alpha_bar[t_steps[r]]);
        c_noise[r] = std::sqrt(1.0 - s.alpha_bar[t_steps[r]]);
    }
    Tensor eps = Tensor::randn(x.rows(), x.cols(), 1.0, rng);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) eps.at(r, c) *= c_noise[r];
    Var signal = t.mul_colvec(x0, t.constant(Tensor::column(c_sig)));
    return t.add(signal, t.constant(std::move(eps)));
}

// Reconstruction objective: mean over rows of the squared distance between
// the predicted and true clean embeddings, with per-row uniform steps.
inline Var reconstruction_loss(Tape& t, const Schedule& s, const NetVars& nv, Var x0, Rng& rng) {
    const std::size_t rows = t.value(x0).rows();
    std::vector<std::size_t> steps(rows);
    for (auto& v : steps) v = 1 + rng.uniform_int(s.steps);
    Var noisy = forward_noise(t, s, x0, steps, rng);
    Var pred = predict_clean(t, nv, noisy, time_encoding(steps));
    return t.mean(t.row_sum(t.square(t.sub(pred, x0))));
}

// Full denoising pass: diffuse to step S, then walk the posterior back to the
// clean state. rng == nullptr keeps the reverse walk deterministic (mean
// steps); the final step never adds noise. A degenerate schedule returns the
// input unchanged.
inline Var denoise(Tape& t, const Schedule& s, const NetVars& nv, Var x0, std::size_t S, Rng* rng) {
    require(S <= s.steps, "denoise: reverse steps exceed schedule");
    if (S == 0 || s.degenerate()) return x0;

    const std::size_t rows = t.value(x0).rows();
    Var x = x0;
    {
        std::vector<std::size_t> steps(rows, S);
        if (rng != nullptr) {
            x = forward_noise(t, s, x0, steps, *rng);
        } else {
            const double c_sig = std::sqrt(s.alpha_bar[S]);
            x = t.scale(x0, c_sig);
        }
    }
    for (std::size_t step = S; step >= 1; --step) {
        std::vector<std::size_t> steps(rows, step);
        Var pred = predict_clean(t, nv, x, time_encoding(steps));
        PosteriorCoef pc = posterior(s, step);
        if (pc.identity) continue;
        if (step == 1) {
            x = pred;  // the t=1 posterior mean is the clean prediction itself
            continue;
        }
        Var mean = t.add(t.scale(pred, pc.c_clean), t.scale(x, pc.c_noisy));
        if (rng != nullptr) {
            Tensor z = Tensor::randn(rows, t.value(x0).cols(), std::sqrt(pc.beta_tilde), *rng);
            x = t.add(mean, t.constant(std::move(z)));
        } else {
            x = mean;
        }
    }
    return x;
}

}  // namespace radar::diffusion
