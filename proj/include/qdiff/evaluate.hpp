#pragma once

// Monte Carlo evaluation of policies under the discounted and long-run
// average criteria, plus the vanishing-discount sweep and the Lyapunov
// moment check. Replicas use independent counter-based streams keyed by
// (seed, replica) and are reduced in replica order, so estimates do not
// depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/parallel.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/qlearn.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/sde.hpp"

namespace qdiff {

enum class Criterion { discounted, average };

inline constexpr double kCiZ = 1.96;

struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_replicas = 0;
    double horizon = 0.0;
    Criterion criterion = Criterion::discounted;
    /// Discounted only: sup|c| * exp(-alpha T) / alpha, sup|c| being the
    /// largest running-cost rate observed at a sampling instant.
    double truncation_bias_bound = 0.0;

    double ci_low() const noexcept { return mean - kCiZ * std_error; }
    double ci_high() const noexcept { return mean + kCiZ * std_error; }
};

/// True when a's 95% interval lies entirely below b's.
inline bool ci_separated_below(const CostEstimate& a, const CostEstimate& b) noexcept {
    return a.ci_high() < b.ci_low();
}

struct EvalOptions {
    std::size_t n_replicas = 100;
    unsigned threads = 1;
    /// Average criterion: burn-in as a fraction of the horizon...
    double burn_in_fraction = 0.2;
    /// ...unless an explicit burn-in time is given.
    std::optional<double> burn_in;
    /// Discounted criterion: double the horizon until the truncation bound is
    /// at most truncation_rel_tol * |mean| (or max_horizon is reached).
    bool auto_extend = true;
    double truncation_rel_tol = 0.01;
    double max_horizon = 1e4;
};

namespace detail {

inline std::pair<double, double> mean_and_se(std::span<const double> xs) {
    const auto n = static_cast<double>(xs.size());
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

inline void check_eval_inputs(const DiffusionModel& m, const SimConfig& sim, std::span<const double> x0,
                              const EvalOptions& opt) {
    sim.validate();
    if (x0.size() != m.state_dim) throw InvalidConfig("evaluation x0 has wrong dimension");
    if (opt.n_replicas == 0) throw InvalidConfig("evaluation.n_replicas must be >= 1");
}

inline std::size_t burn_in_intervals(const SimConfig& sim, const EvalOptions& opt) {
    const double burn = opt.burn_in.value_or(opt.burn_in_fraction * sim.horizon);
    if (!(burn >= 0.0)) throw InvalidConfig("evaluation burn-in must be >= 0");
    const auto n = static_cast<std::size_t>(std::ceil(burn / sim.h - 1e-9));
    if (n >= sim.intervals()) throw InvalidConfig("evaluation horizon must exceed the burn-in");
    return n;
}

}  // namespace detail

/// Estimates E sum_k e^{-alpha k h} cost_k. In integral cost mode each
/// interval's cost is itself discounted along the substeps, which realizes
/// E int e^{-alpha s} c ds.
template <ControlPolicy P>
CostEstimate eval_discounted(const DiffusionModel& m, SimConfig sim, const P& policy, std::span<const double> x0,
                             double alpha_rate, const EvalOptions& opt) {
    if (!(alpha_rate > 0.0)) throw InvalidConfig("evaluation alpha_rate must be positive");
    if (sim.horizon <= 0.0) sim.horizon = std::ceil(5.0 / alpha_rate / sim.h) * sim.h;
    detail::check_eval_inputs(m, sim, x0, opt);
    const double interval_discount = std::exp(-alpha_rate * sim.h);
    const double within = sim.cost_mode == CostMode::integral ? alpha_rate : 0.0;

    for (;;) {
        std::vector<double> totals(opt.n_replicas);
        std::vector<double> peaks(opt.n_replicas);
        const std::size_t n = sim.intervals();
        parallel_for(opt.n_replicas, opt.threads, [&](std::size_t r) {
            const auto rep = static_cast<std::uint32_t>(r);
            CounterRng noise(sim.seed, rep, StreamId::noise);
            CounterRng choice(sim.seed, rep, StreamId::policy);
            StepWorkspace ws(m.state_dim);
            Vec x(x0.begin(), x0.end());
            double total = 0.0;
            double weight = 1.0;
            double peak = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const auto u = policy.act(x, choice);
                peak = std::max(peak, std::abs(m.running_cost(x, u)));
                total += weight * advance_interval(m, sim, x, u, noise, ws, within);
                weight *= interval_discount;
            }
            totals[r] = total;
            peaks[r] = peak;
        });
        const auto [mean, se] = detail::mean_and_se(totals);
        const double c_sup = *std::max_element(peaks.begin(), peaks.end());
        // Tail beyond the horizon: int_T^inf e^{-alpha s} c ds in integral mode,
        // sum_{k >= n} e^{-alpha k h} c h for interval sums.
        const double tail = sim.cost_mode == CostMode::integral
                                ? std::exp(-alpha_rate * sim.horizon) / alpha_rate
                                : sim.h * std::exp(-alpha_rate * sim.horizon) / -std::expm1(-alpha_rate * sim.h);
        CostEstimate est{mean, se, opt.n_replicas, sim.horizon, Criterion::discounted, c_sup * tail};
        const bool too_biased = est.truncation_bias_bound > opt.truncation_rel_tol * std::abs(mean);
        if (!opt.auto_extend || !too_biased || 2.0 * sim.horizon > opt.max_horizon) return est;
        sim.horizon *= 2.0;
    }
}

/// Long-run average cost per unit time: interval costs after the burn-in,
/// divided by the elapsed time, averaged over replicas.
template <ControlPolicy P>
CostEstimate eval_average(const DiffusionModel& m, const SimConfig& sim, const P& policy,
                          std::span<const double> x0, const EvalOptions& opt) {
    detail::check_eval_inputs(m, sim, x0, opt);
    const std::size_t n = sim.intervals();
    const std::size_t burn = detail::burn_in_intervals(sim, opt);
    std::vector<double> averages(opt.n_replicas);
    parallel_for(opt.n_replicas, opt.threads, [&](std::size_t r) {
        const auto rep = static_cast<std::uint32_t>(r);
        CounterRng noise(sim.seed, rep, StreamId::noise);
        CounterRng choice(sim.seed, rep, StreamId::policy);
        StepWorkspace ws(m.state_dim);
        Vec x(x0.begin(), x0.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double c = advance_interval(m, sim, x, policy.act(x, choice), noise, ws);
            if (k >= burn) sum += c;
        }
        averages[r] = sum / (static_cast<double>(n - burn) * sim.h);
    });
    const auto [mean, se] = detail::mean_and_se(averages);
    return {mean, se, opt.n_replicas, sim.horizon, Criterion::average, 0.0};
}

using StateFunctional = std::function<double(std::span<const double>)>;

/// Time average of f(X_kh) over the sampling instants after the burn-in.
template <ControlPolicy P>
CostEstimate eval_time_average(const DiffusionModel& m, const SimConfig& sim, const P& policy,
                               std::span<const double> x0, const EvalOptions& opt, const StateFunctional& f) {
    detail::check_eval_inputs(m, sim, x0, opt);
    const std::size_t n = sim.intervals();
    const std::size_t burn = detail::burn_in_intervals(sim, opt);
    std::vector<double> averages(opt.n_replicas);
    parallel_for(opt.n_replicas, opt.threads, [&](std::size_t r) {
        const auto rep = static_cast<std::uint32_t>(r);
        CounterRng noise(sim.seed, rep, StreamId::noise);
        CounterRng choice(sim.seed, rep, StreamId::policy);
        StepWorkspace ws(m.state_dim);
        Vec x(x0.begin(), x0.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k >= burn) sum += f(x);
            advance_interval(m, sim, x, policy.act(x, choice), noise, ws);
        }
        averages[r] = sum / static_cast<double>(n - burn);
    });
    const auto [mean, se] = detail::mean_and_se(averages);
    return {mean, se, opt.n_replicas, sim.horizon, Criterion::average, 0.0};
}

struct PathStatistic {
    std::vector<double> times;
    std::vector<double> mean;
    std::vector<double> std_error;
};

/// Cross-replica mean of f(X_kh) at every sampling instant.
template <ControlPolicy P>
PathStatistic mean_path(const DiffusionModel& m, const SimConfig& sim, const P& policy, std::span<const double> x0,
                        const EvalOptions& opt, const StateFunctional& f) {
    detail::check_eval_inputs(m, sim, x0, opt);
    const std::size_t n = sim.intervals();
    std::vector<std::vector<double>> paths(opt.n_replicas);
    parallel_for(opt.n_replicas, opt.threads, [&](std::size_t r) {
        const auto rep = static_cast<std::uint32_t>(r);
        CounterRng noise(sim.seed, rep, StreamId::noise);
        CounterRng choice(sim.seed, rep, StreamId::policy);
        StepWorkspace ws(m.state_dim);
        Vec x(x0.begin(), x0.end());
        auto& path = paths[r];
        path.reserve(n + 1);
        path.push_back(f(x));
        for (std::size_t k = 0; k < n; ++k) {
            advance_interval(m, sim, x, policy.act(x, choice), noise, ws);
            path.push_back(f(x));
        }
    });
    PathStatistic out;
    std::vector<double> column(opt.n_replicas);
    for (std::size_t k = 0; k <= n; ++k) {
        for (std::size_t r = 0; r < opt.n_replicas; ++r) column[r] = paths[r][k];
        const auto [mean, se] = detail::mean_and_se(column);
        out.times.push_back(static_cast<double>(k) * sim.h);
        out.mean.push_back(mean);
        out.std_error.push_back(se);
    }
    return out;
}

struct DiscretizationGap {
    CostEstimate interval;  ///< sum_k e^{-alpha kh} c(X_kh, U_k) h
    CostEstimate integral;  ///< int e^{-alpha s} c(X_s, U_s) ds on the substep grid
    CostEstimate difference;
};

/// Both discounted cost realizations on common paths, so their difference
/// (the time-discretization gap) is estimated with paired variance.
template <ControlPolicy P>
DiscretizationGap discretization_gap(const DiffusionModel& m, const SimConfig& sim, const P& policy,
                                     std::span<const double> x0, double alpha_rate, const EvalOptions& opt) {
    if (!(alpha_rate > 0.0)) throw InvalidConfig("evaluation alpha_rate must be positive");
    detail::check_eval_inputs(m, sim, x0, opt);
    const std::size_t n = sim.intervals();
    const double interval_discount = std::exp(-alpha_rate * sim.h);
    std::vector<double> a(opt.n_replicas), b(opt.n_replicas), d(opt.n_replicas);
    parallel_for(opt.n_replicas, opt.threads, [&](std::size_t r) {
        const auto rep = static_cast<std::uint32_t>(r);
        CounterRng noise(sim.seed, rep, StreamId::noise);
        CounterRng choice(sim.seed, rep, StreamId::policy);
        StepWorkspace ws(m.state_dim);
        Vec x(x0.begin(), x0.end());
        double weight = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto c = advance_interval_paired(m, sim, x, policy.act(x, choice), noise, ws, alpha_rate);
            a[r] += weight * c.start_state;
            b[r] += weight * c.integral;
            weight *= interval_discount;
        }
        d[r] = a[r] - b[r];
    });
    auto pack = [&](const std::vector<double>& xs) {
        const auto [mean, se] = detail::mean_and_se(xs);
        return CostEstimate{mean, se, opt.n_replicas, sim.horizon, Criterion::discounted, 0.0};
    };
    return {pack(a), pack(b), pack(d)};
}

struct SweepRow {
    double factor = 0.0;
    std::optional<CostEstimate> estimate;
    std::optional<Policy> policy;
    std::string error;
};

struct SweepSetup {
    SimConfig learn_sim;
    SimConfig eval_sim;
    LearnConfig learn;
    Vec learn_x0;
    Vec eval_x0;
    EvalOptions eval;
};

/// Learns one discounted policy per per-interval factor e^{-alpha h} on a
/// shared quantizer and evaluates each under the average criterion. A
/// failing factor is recorded in its row and the sweep continues.
inline std::vector<SweepRow> vanishing_discount_sweep(const DiffusionModel& m, const StateQuantizer& q,
                                                      const ActionGrid& grid, std::span<const double> factors,
                                                      const SweepSetup& setup) {
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (!(factors[i] > 0.0 && factors[i] < 1.0)) throw InvalidConfig("sweep factors must lie in (0, 1)");
        if (i > 0 && !(factors[i] > factors[i - 1])) throw InvalidConfig("sweep factors must be strictly increasing");
    }
    std::vector<SweepRow> rows(factors.size());
    EvalOptions inner = setup.eval;
    inner.threads = 1;
    parallel_for(factors.size(), setup.eval.threads, [&](std::size_t i) {
        rows[i].factor = factors[i];
        try {
            LearnConfig cfg = setup.learn;
            cfg.beta_h = factors[i];
            const auto learned = run_q_learning(m, setup.learn_sim, q, grid, cfg, Variant::discounted, setup.learn_x0);
            const QuantizedPolicy policy(q, grid, learned.policy);
            rows[i].policy = learned.policy;
            rows[i].estimate = eval_average(m, setup.eval_sim, policy, setup.eval_x0, inner);
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });
    return rows;
}

struct LyapunovReport {
    std::vector<double> times;
    std::vector<double> moments;  ///< empirical E|X_t|^m
    std::vector<double> std_errors;
    double x0_norm_m = 0.0;
    double C0 = 0.0;
    double C1 = 0.0;
    /// |x0|^m e^{-C1 t} + C0/C1 (1 - e^{-C1 t}), which never exceeds the
    /// looser |x0|^m e^{-C1 t} + C0/C1.
    std::vector<double> envelope;
    double sup_moment = 0.0;
    /// moments <= 1.1 * envelope at every time point
    bool envelope_holds = false;
    /// sup_t moment <= 1.1 * max(|x0|^m, C0/C1)
    bool sup_bound_holds = false;
};

namespace detail {

/// Least-squares fit of y(t) ~ a e^{-c1 t} + b (1 - e^{-c1 t}) with a fixed,
/// c1 > 0, b >= 0: b is solved in closed form for each c1, c1 by a log-grid
/// scan followed by golden-section refinement.
inline std::pair<double, double> fit_decay_envelope(std::span<const double> t, std::span<const double> y, double a) {
    auto b_for = [&](double c1) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double e = std::exp(-c1 * t[i]);
            num += (y[i] - a * e) * (1.0 - e);
            den += (1.0 - e) * (1.0 - e);
        }
        return den > 0.0 ? std::max(0.0, num / den) : 0.0;
    };
    auto loss = [&](double log_c1) {
        const double c1 = std::exp(log_c1);
        const double b = b_for(c1);
        double ss = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double e = std::exp(-c1 * t[i]);
            const double r = y[i] - a * e - b * (1.0 - e);
            ss += r * r;
        }
        return ss;
    };
    const double lo = std::log(1e-3), hi = std::log(1e3);
    constexpr int kGrid = 400;
    int best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
        const double l = loss(lo + (hi - lo) * i / kGrid);
        if (l < best_loss) {
            best_loss = l;
            best = i;
        }
    }
    double left = lo + (hi - lo) * std::max(0, best - 1) / kGrid;
    double right = lo + (hi - lo) * std::min(kGrid, best + 1) / kGrid;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
        const double m1 = right - phi * (right - left);
        const double m2 = left + phi * (right - left);
        if (loss(m1) < loss(m2)) right = m2;
        else left = m1;
    }
    const double c1 = std::exp(0.5 * (left + right));
    return {c1, b_for(c1)};
}

}  // namespace detail

/// Estimates E|X_t|^m at each sampling instant and fits the drift-condition
/// envelope |x0|^m e^{-C1 t} + C0/C1 (1 - e^{-C1 t}) to it. A violated envelope is a
/// reported finding, not an error.
template <ControlPolicy P>
LyapunovReport lyapunov_moment_check(const DiffusionModel& m, const SimConfig& sim, const P& policy,
                                     std::span<const double> x0, double exponent, const EvalOptions& opt) {
    if (!(exponent >= 1.0)) throw InvalidConfig("lyapunov check: exponent m must be >= 1");
    auto norm_m = [exponent](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return std::pow(std::sqrt(s), exponent);
    };
    const auto path = mean_path(m, sim, policy, x0, opt, norm_m);

    LyapunovReport rep;
    rep.times = path.times;
    rep.moments = path.mean;
    rep.std_errors = path.std_error;
    rep.x0_norm_m = norm_m(x0);
    const auto [c1, b] = detail::fit_decay_envelope(rep.times, rep.moments, rep.x0_norm_m);
    rep.C1 = c1;
    rep.C0 = b * c1;
    rep.envelope_holds = true;
    for (std::size_t i = 0; i < rep.times.size(); ++i) {
        const double e = std::exp(-c1 * rep.times[i]);
        const double env = rep.x0_norm_m * e + b * (1.0 - e);
        rep.envelope.push_back(env);
        rep.sup_moment = std::max(rep.sup_moment, rep.moments[i]);
        if (rep.moments[i] > 1.1 * env) rep.envelope_holds = false;
    }
    rep.sup_bound_holds = rep.sup_moment <= 1.1 * std::max(rep.x0_norm_m, b);
    return rep;
}

}  // namespace qdiff
