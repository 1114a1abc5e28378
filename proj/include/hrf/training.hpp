#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"
#include "models.hpp"
#include "paths.hpp"
#include "rng.hpp"

namespace hrf {

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    double clip_norm = 10.0;  // global gradient norm; <= 0 disables clipping
    std::size_t eval_every = 100;
    /// Exponential moving average of the iterates, returned as the final
    /// parameters; warm-up decay min(d, (1 + s) / (10 + s)). 0 disables.
    double ema_decay = 0.0;

    void validate() const {
        detail::require(batch_size >= 1, "batch_size must be positive");
        detail::require(learning_rate > 0.0, "learning_rate must be positive");
        detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "adam betas must lie in [0, 1)");
        detail::require(epsilon > 0.0, "adam epsilon must be positive");
        detail::require(eval_every >= 1, "eval_every must be positive");
        detail::require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must lie in [0, 1)");
    }
};

struct TrainState {
    std::vector<double> params;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    Rng rng;
    std::vector<double> losses;  // one minibatch loss per step

    static TrainState start(const std::vector<double>& params, std::uint64_t seed) {
        return TrainState{params, std::vector<double>(params.size(), 0.0), std::vector<double>(params.size(), 0.0), 0,
                          Rng(seed), {}};
    }
};

/// One minibatch of the objective: aligned endpoints plus a time per element.
struct Batch {
    std::vector<const GridFunction*> x0;
    std::vector<const GridFunction*> x1;
    std::vector<double> t;

    std::size_t size() const { return t.size(); }
};

/// (1/B) sum_j || path_velocity(x0_j, x1_j, t_j) - v(t_j, X_t_j) ||^2 with the quadrature norm.
inline double rf_loss(const VelocityField& model, const Batch& batch, const PathSchedule& schedule) {
    detail::require(batch.size() >= 1 && batch.x0.size() == batch.size() && batch.x1.size() == batch.size(),
                    "batch must be aligned and non-empty");
    double total = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto& x0 = *batch.x0[j];
        const auto& x1 = *batch.x1[j];
        const double t = batch.t[j];
        const auto target = path_velocity(x0, x1, t, schedule);
        total += squared_distance(target, model.evaluate(t, interpolate(x0, x1, t, schedule)));
    }
    return total / static_cast<double>(batch.size());
}

/// Per-element squared errors, for Monte Carlo standard errors.
inline std::vector<double> rf_loss_terms(const VelocityField& model, const Batch& batch, const PathSchedule& schedule) {
    std::vector<double> terms(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto& x0 = *batch.x0[j];
        const auto& x1 = *batch.x1[j];
        const double t = batch.t[j];
        terms[j] = squared_distance(path_velocity(x0, x1, t, schedule), model.evaluate(t, interpolate(x0, x1, t, schedule)));
    }
    return terms;
}

/// Loss and its parameter gradient, accumulated in batch index order.
inline double rf_loss_gradient(const TrainableField& model, const Batch& batch, const PathSchedule& schedule,
                               std::vector<double>& grad) {
    grad.assign(model.parameters().size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto& x0 = *batch.x0[j];
        const auto& x1 = *batch.x1[j];
        const double t = batch.t[j];
        const auto xt = interpolate(x0, x1, t, schedule);
        const auto target = path_velocity(x0, x1, t, schedule);
        const auto out = model.evaluate(t, xt);
        GridFunction upstream(xt.grid);
        const auto& w = xt.grid->weights;
        double err = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double r = out.values[i] - target.values[i];
            err += w[i] * r * r;
            upstream.values[i] = 2.0 * w[i] * r * inv_b;
        }
        total += err;
        model.accumulate_gradient(t, xt, upstream, grad);
    }
    return total * inv_b;
}

/// Bias-corrected Adam with optional global-norm clipping.
inline void adam_step(TrainState& state, std::span<const double> gradient, const TrainConfig& config) {
    detail::require(gradient.size() == state.params.size(), "gradient size does not match parameters");
    double sq = 0.0;
    for (double g : gradient) {
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient at step " + std::to_string(state.step + 1));
        sq += g * g;
    }
    const double gnorm = std::sqrt(sq);
    const double clip = (config.clip_norm > 0.0 && gnorm > config.clip_norm) ? config.clip_norm / gnorm : 1.0;
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < state.params.size(); ++i) {
        const double g = gradient[i] * clip;
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        state.params[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
}

/// Draws a minibatch. Unpaired: X1 and X0 indices are independent uniform
/// draws. Paired: one index selects both endpoints of a coupling.
inline Batch draw_batch(const SampleSet& data0, const SampleSet& data1, bool paired, std::size_t size, Rng& rng) {
    Batch b;
    b.x0.reserve(size);
    b.x1.reserve(size);
    b.t.reserve(size);
    for (std::size_t j = 0; j < size; ++j) {
        const auto i1 = rng.index(data1.size());
        const auto i0 = paired ? i1 : rng.index(data0.size());
        b.x1.push_back(&data1.items[i1]);
        b.x0.push_back(&data0.items[i0]);
        b.t.push_back(rng.uniform());
    }
    return b;
}

struct TrainResult {
    std::vector<double> losses;  // per step
    std::size_t eval_every = 1;
    double final_loss = 0.0;
};

/// Minimises the objective with Adam; the model's parameters are updated in
/// place. On a non-finite loss or gradient the parameters are rolled back to
/// the last finite step and DivergenceError is thrown.
inline TrainResult train(TrainableField& model, const SampleSet& data0, const SampleSet& data1,
                         const PathSchedule& schedule, const TrainConfig& config, bool paired = false) {
    config.validate();
    detail::require(data0.size() >= 1 && data1.size() >= 1, "training sets must be non-empty");
    detail::require(same_grid(data0.grid, data1.grid) && same_grid(data0.grid, model.grid()),
                    "training sets and model must share a grid");
    if (paired) detail::require(data0.size() == data1.size(), "paired training needs aligned sets");

    auto state = TrainState::start(model.parameters(), config.seed);
    std::vector<double> grad;
    std::vector<double> ema;
    if (config.ema_decay > 0.0) ema = state.params;
    TrainResult result;
    result.eval_every = config.eval_every;
    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto batch = draw_batch(data0, data1, paired, config.batch_size, state.rng);
        const double loss = rf_loss_gradient(model, batch, schedule, grad);
        if (!std::isfinite(loss)) {
            model.parameters() = state.params;
            throw DivergenceError("non-finite loss at step " + std::to_string(step + 1));
        }
        try {
            adam_step(state, grad, config);
        } catch (const DivergenceError&) {
            model.parameters() = state.params;
            throw;
        }
        model.parameters() = state.params;
        if (!ema.empty()) {
            const double s = static_cast<double>(step);
            const double d = std::min(config.ema_decay, (1.0 + s) / (10.0 + s));
            for (std::size_t k = 0; k < ema.size(); ++k) ema[k] = d * ema[k] + (1.0 - d) * state.params[k];
        }
        state.losses.push_back(loss);
        if ((step + 1) % config.eval_every == 0)
            log::debug("step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
    }
    if (!ema.empty()) model.parameters() = std::move(ema);
    result.losses = std::move(state.losses);
    result.final_loss = result.losses.empty() ? 0.0 : result.losses.back();
    return result;
}

/// `step,loss` rows every eval_every steps, plus the last step.
inline void write_loss_csv(std::ostream& out, const TrainResult& r) {
    out << "step,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) {
        const std::size_t step = i + 1;
        if (step % r.eval_every == 0 || step == r.losses.size()) out << step << ',' << csv::fmt17(r.losses[i]) << '\n';
    }
}

}  // namespace hrf
