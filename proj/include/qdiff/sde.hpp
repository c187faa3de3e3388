#pragma once

// Controlled diffusions dX = b(X,U) dt + sigma(X) dW with diagonal noise,
// simulated under controls held constant over sampling intervals of length h
// and integrated with a finer substep dt.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"

namespace qdiff {

enum class StateClip { none, reflect_at_zero };

/// How sigma depends on the state. Milstein is only available for
/// `multiplicative`, where g(x) = s * x per coordinate.
enum class DiffusionKind { additive, multiplicative, state_dependent };

enum class Scheme { euler_maruyama, milstein };

/// start_state: c(X_kh, u) * h (the learning contract).
/// integral: left-point sum of c along the substeps.
enum class CostMode { start_state, integral };

struct DiffusionModel {
    using DriftFn = std::function<void(std::span<const double> x, std::span<const double> u, std::span<double> out)>;
    using DiffusionFn = std::function<void(std::span<const double> x, std::span<double> diag)>;
    using CostFn = std::function<double(std::span<const double> x, std::span<const double> u)>;

    std::string name;
    std::size_t state_dim = 1;
    std::size_t action_dim = 1;
    DriftFn drift;
    DiffusionFn diffusion;
    CostFn running_cost;
    DiffusionKind diffusion_kind = DiffusionKind::additive;
    /// The s in g(x) = s * x for multiplicative noise.
    double multiplicative_scale = 0.0;
    std::vector<StateClip> state_clip;
    std::vector<Interval> action_box;
    /// Nominal truncation box used by the experiment presets.
    std::vector<Interval> state_box;
    /// Parameters the model was built with, echoed into run manifests.
    std::map<std::string, double> params;
};

using ModelOverrides = std::map<std::string, double>;

namespace detail {

inline double take(ModelOverrides& ov, const std::string& key, double fallback) {
    auto it = ov.find(key);
    if (it == ov.end()) return fallback;
    const double v = it->second;
    ov.erase(it);
    return v;
}

inline void reject_leftovers(const std::string& model, const ModelOverrides& ov) {
    if (!ov.empty()) throw InvalidConfig("model '" + model + "': unknown parameter '" + ov.begin()->first + "'");
}

}  // namespace detail

/// double_well: dZ = (Z - Z^3 + U) dt + sigma dW, c = Q z^2 + R u^2, sigma = 0.5
///              unless overridden.
/// logistic: dX = (r X (1 - X/K) + U) dt + sigma X dW, c = Q (x - K/2)^2 + R u^2,
///           negative states clamped to zero.
/// linear_ou: dX = (-a X + U) dt + sigma dW, c = Q x^2 + R u^2 (R = 0 by default).
inline DiffusionModel builtin_model(std::string_view name, ModelOverrides overrides = {}) {
    using detail::take;
    DiffusionModel m;
    m.name = std::string(name);
    m.state_dim = 1;
    m.action_dim = 1;
    m.state_clip = {StateClip::none};

    if (name == "double_well") {
        const double sigma = take(overrides, "sigma", 0.5);
        const double q = take(overrides, "Q", 1.0);
        const double r = take(overrides, "R", 0.1);
        const double u_lo = take(overrides, "u_lo", -0.5);
        const double u_hi = take(overrides, "u_hi", 0.5);
        const double box = take(overrides, "box_half_width", 1.4);
        detail::reject_leftovers(m.name, overrides);
        m.drift = [](std::span<const double> x, std::span<const double> u, std::span<double> out) {
            out[0] = x[0] - x[0] * x[0] * x[0] + u[0];
        };
        m.diffusion = [sigma](std::span<const double>, std::span<double> diag) { diag[0] = sigma; };
        m.running_cost = [q, r](std::span<const double> x, std::span<const double> u) {
            return q * x[0] * x[0] + r * u[0] * u[0];
        };
        m.diffusion_kind = DiffusionKind::additive;
        m.action_box = {{u_lo, u_hi}};
        m.state_box = {{-box, box}};
        m.params = {{"sigma", sigma}, {"Q", q}, {"R", r}, {"u_lo", u_lo}, {"u_hi", u_hi}, {"box_half_width", box}};
    } else if (name == "logistic") {
        const double growth = take(overrides, "r", 1.0);
        const double cap = take(overrides, "K", 1.0);
        const double sigma = take(overrides, "sigma", 0.4);
        const double q = take(overrides, "Q", 10.0);
        const double r = take(overrides, "R", 1.0);
        const double u_lo = take(overrides, "u_lo", -5.0);
        const double u_hi = take(overrides, "u_hi", 5.0);
        const double x_hi = take(overrides, "box_high", 2.0);
        detail::reject_leftovers(m.name, overrides);
        if (!(cap > 0.0)) throw InvalidConfig("model 'logistic': K must be positive");
        m.drift = [growth, cap](std::span<const double> x, std::span<const double> u, std::span<double> out) {
            out[0] = growth * x[0] * (1.0 - x[0] / cap) + u[0];
        };
        m.diffusion = [sigma](std::span<const double> x, std::span<double> diag) { diag[0] = sigma * x[0]; };
        m.running_cost = [q, r, cap](std::span<const double> x, std::span<const double> u) {
            const double e = x[0] - 0.5 * cap;
            return q * e * e + r * u[0] * u[0];
        };
        m.diffusion_kind = DiffusionKind::multiplicative;
        m.multiplicative_scale = sigma;
        m.state_clip = {StateClip::reflect_at_zero};
        m.action_box = {{u_lo, u_hi}};
        m.state_box = {{0.0, x_hi}};
        m.params = {{"r", growth}, {"K", cap},   {"sigma", sigma}, {"Q", q},
                    {"R", r},      {"u_lo", u_lo}, {"u_hi", u_hi}, {"box_high", x_hi}};
    } else if (name == "linear_ou") {
        const double a = take(overrides, "a", 1.0);
        const double sigma = take(overrides, "sigma", 0.5);
        const double q = take(overrides, "Q", 1.0);
        const double r = take(overrides, "R", 0.0);
        const double u_lo = take(overrides, "u_lo", -1.0);
        const double u_hi = take(overrides, "u_hi", 1.0);
        const double box = take(overrides, "box_half_width", 2.0);
        detail::reject_leftovers(m.name, overrides);
        m.drift = [a](std::span<const double> x, std::span<const double> u, std::span<double> out) {
            out[0] = -a * x[0] + u[0];
        };
        m.diffusion = [sigma](std::span<const double>, std::span<double> diag) { diag[0] = sigma; };
        m.running_cost = [q, r](std::span<const double> x, std::span<const double> u) {
            return q * x[0] * x[0] + r * u[0] * u[0];
        };
        m.diffusion_kind = DiffusionKind::additive;
        m.action_box = {{u_lo, u_hi}};
        m.state_box = {{-box, box}};
        m.params = {{"a", a}, {"sigma", sigma}, {"Q", q}, {"R", r}, {"u_lo", u_lo}, {"u_hi", u_hi}, {"box_half_width", box}};
    } else {
        throw NotFound("unknown model '" + std::string(name) + "'");
    }
    return m;
}

struct SimConfig {
    double h = 0.1;
    double dt = 0.01;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    Scheme scheme = Scheme::euler_maruyama;
    CostMode cost_mode = CostMode::start_state;

    static constexpr double kRatioTol = 1e-9;

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidConfig("sim.dt must be positive");
        if (!(h > 0.0) || !std::isfinite(h)) throw InvalidConfig("sim.h must be positive");
        if (dt > h * (1.0 + kRatioTol)) throw InvalidConfig("sim.dt must not exceed sim.h");
        const double sub = h / dt;
        if (std::abs(sub - std::round(sub)) > kRatioTol * std::max(1.0, sub))
            throw InvalidConfig("sim.dt must divide sim.h");
        if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw InvalidConfig("sim.horizon must be >= 0");
        const double n = horizon / h;
        if (std::abs(n - std::round(n)) > kRatioTol * std::max(1.0, n))
            throw InvalidConfig("sim.h must divide sim.horizon");
    }

    std::size_t substeps() const noexcept { return static_cast<std::size_t>(std::llround(h / dt)); }
    std::size_t intervals() const noexcept { return static_cast<std::size_t>(std::llround(horizon / h)); }
};

struct Trajectory {
    std::vector<double> times;  ///< k*h, k = 0..n
    std::vector<Vec> states;    ///< X at each sampling instant, n+1 entries
    std::vector<Vec> controls;  ///< control held on [kh, (k+1)h), n entries
    std::vector<double> costs;  ///< realized cost of each interval, n entries

    std::size_t intervals() const noexcept { return controls.size(); }
    double total_cost() const noexcept {
        double s = 0.0;
        for (double c : costs) s += c;
        return s;
    }
};

/// Scratch buffers for one simulation thread.
struct StepWorkspace {
    explicit StepWorkspace(std::size_t d = 1) : drift(d), diag(d), dw(d) {}
    Vec drift;
    Vec diag;
    Vec dw;
};

inline void apply_clip(const DiffusionModel& m, std::span<double> x) noexcept {
    for (std::size_t i = 0; i < m.state_clip.size() && i < x.size(); ++i)
        if (m.state_clip[i] == StateClip::reflect_at_zero && x[i] < 0.0) x[i] = 0.0;
}

namespace detail {

inline void check_finite(const DiffusionModel& m, std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) throw NumericalError("model '" + m.name + "': non-finite state during integration");
}

/// One step without clipping. Milstein adds 0.5 * g(x) * s * (dW^2 - dt).
inline void raw_step(const DiffusionModel& m, Scheme scheme, std::span<double> x, std::span<const double> u, double dt,
                     std::span<const double> dw, StepWorkspace& ws) {
    if (scheme == Scheme::milstein && m.diffusion_kind != DiffusionKind::multiplicative)
        throw UnsupportedScheme("model '" + m.name + "': Milstein requires multiplicative diffusion g(x) = s*x");
    m.drift(x, u, ws.drift);
    m.diffusion(x, ws.diag);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double next = x[i] + ws.drift[i] * dt + ws.diag[i] * dw[i];
        if (scheme == Scheme::milstein) next += 0.5 * ws.diag[i] * m.multiplicative_scale * (dw[i] * dw[i] - dt);
        x[i] = next;
    }
}

}  // namespace detail

/// In-place step including clipping and the finiteness check.
inline void step_inplace(const DiffusionModel& m, Scheme scheme, std::span<double> x, std::span<const double> u,
                         double dt, std::span<const double> dw, StepWorkspace& ws) {
    detail::raw_step(m, scheme, x, u, dt, dw, ws);
    apply_clip(m, x);
    detail::check_finite(m, x);
}

inline Vec em_step(const DiffusionModel& m, std::span<const double> x, std::span<const double> u, double dt,
                   std::span<const double> dw) {
    if (!(dt > 0.0)) throw InvalidConfig("em_step: dt must be positive");
    Vec out(x.begin(), x.end());
    StepWorkspace ws(m.state_dim);
    step_inplace(m, Scheme::euler_maruyama, out, u, dt, dw, ws);
    return out;
}

inline Vec milstein_step(const DiffusionModel& m, std::span<const double> x, std::span<const double> u, double dt,
                         std::span<const double> dw) {
    if (!(dt > 0.0)) throw InvalidConfig("milstein_step: dt must be positive");
    Vec out(x.begin(), x.end());
    StepWorkspace ws(m.state_dim);
    step_inplace(m, Scheme::milstein, out, u, dt, dw, ws);
    return out;
}

struct PairedCost {
    double start_state = 0.0;
    double integral = 0.0;
};

/// Like advance_interval, but realizes both cost modes on the same path.
inline PairedCost advance_interval_paired(const DiffusionModel& m, const SimConfig& sim, std::span<double> x,
                                          std::span<const double> u, CounterRng& noise, StepWorkspace& ws,
                                          double discount_rate = 0.0) {
    const std::size_t n = sim.substeps();
    const double sqrt_dt = std::sqrt(sim.dt);
    PairedCost out;
    out.start_state = m.running_cost(x, u) * sim.h;
    const double sub_discount = std::exp(-discount_rate * sim.dt);
    double weight = 1.0;
    for (std::size_t s = 0; s < n; ++s) {
        out.integral += weight * m.running_cost(x, u) * sim.dt;
        weight *= sub_discount;
        for (auto& w : ws.dw) w = sqrt_dt * noise.normal();
        step_inplace(m, sim.scheme, x, u, sim.dt, ws.dw, ws);
    }
    if (!std::isfinite(out.start_state) || !std::isfinite(out.integral))
        throw NumericalError("model '" + m.name + "': non-finite running cost");
    return out;
}

/// Integrates one control interval in place and returns its cost. In
/// integral mode each substep's cost is weighted by exp(-discount_rate * s),
/// s being the time elapsed since the interval start.
inline double advance_interval(const DiffusionModel& m, const SimConfig& sim, std::span<double> x,
                               std::span<const double> u, CounterRng& noise, StepWorkspace& ws,
                               double discount_rate = 0.0) {
    const std::size_t n = sim.substeps();
    const double sqrt_dt = std::sqrt(sim.dt);
    double cost = 0.0;
    if (sim.cost_mode == CostMode::start_state) cost = m.running_cost(x, u) * sim.h;
    const double sub_discount = std::exp(-discount_rate * sim.dt);
    double weight = 1.0;
    for (std::size_t s = 0; s < n; ++s) {
        if (sim.cost_mode == CostMode::integral) {
            cost += weight * m.running_cost(x, u) * sim.dt;
            weight *= sub_discount;
        }
        for (auto& w : ws.dw) w = sqrt_dt * noise.normal();
        step_inplace(m, sim.scheme, x, u, sim.dt, ws.dw, ws);
    }
    if (!std::isfinite(cost)) throw NumericalError("model '" + m.name + "': non-finite running cost");
    return cost;
}

struct Transition {
    Vec x_next;
    double cost = 0.0;
};

/// One sampled-MDP transition from x under u held constant for h.
inline Transition sample_transition(const DiffusionModel& m, const SimConfig& sim, std::span<const double> x,
                                    std::span<const double> u, CounterRng& rng) {
    sim.validate();
    Transition t{Vec(x.begin(), x.end()), 0.0};
    StepWorkspace ws(m.state_dim);
    t.cost = advance_interval(m, sim, t.x_next, u, rng, ws);
    return t;
}

/// Closed-loop run: the control is recomputed from the state only at
/// sampling instants and held in between.
template <ControlPolicy P>
Trajectory simulate_policy(const DiffusionModel& m, const SimConfig& sim, const P& policy, std::span<const double> x0,
                           std::uint32_t replica = 0) {
    sim.validate();
    if (x0.size() != m.state_dim) throw InvalidConfig("simulate_policy: x0 has wrong dimension");
    const std::size_t n = sim.intervals();
    CounterRng noise(sim.seed, replica, StreamId::noise);
    CounterRng choice(sim.seed, replica, StreamId::policy);
    StepWorkspace ws(m.state_dim);

    Trajectory tr;
    tr.times.reserve(n + 1);
    tr.states.reserve(n + 1);
    tr.controls.reserve(n);
    tr.costs.reserve(n);
    Vec x(x0.begin(), x0.end());
    tr.times.push_back(0.0);
    tr.states.push_back(x);
    for (std::size_t k = 0; k < n; ++k) {
        const auto u = policy.act(x, choice);
        tr.controls.emplace_back(u.begin(), u.end());
        tr.costs.push_back(advance_interval(m, sim, x, u, noise, ws));
        tr.times.push_back(static_cast<double>(k + 1) * sim.h);
        tr.states.push_back(x);
    }
    return tr;
}

}  // namespace qdiff
