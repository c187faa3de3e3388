#pragma once

// Asynchronous tabular Q-learning on the quantized sampled process.
//
// Discounted update (one observed transition (x, u) -> x' with cost c):
//   Q(x,u) <- (1 - a) Q(x,u) + a (c + beta_h min_v Q(x', v))
// Average-cost (relative) update:
//   Q(x,u) <- (1 - a) Q(x,u) + a (c + min_v Q(x', v) - delta sum_y min_v Q(y, v))
// where a = a_k(x,u) depends on the visit count of (x,u) only, and delta *
// sum_y V(y) estimates the optimal average cost per stage.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/finite_mdp.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/sde.hpp"

namespace qdiff {

struct QTable {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> values;
    std::vector<std::uint64_t> visits;

    QTable() = default;
    QTable(std::size_t states, std::size_t actions, double init = 0.0)
        : n_states(states), n_actions(actions), values(states * actions, init), visits(states * actions, 0) {}

    double& operator()(std::size_t s, std::size_t a) noexcept { return values[s * n_actions + a]; }
    double operator()(std::size_t s, std::size_t a) const noexcept { return values[s * n_actions + a]; }
    std::uint64_t visit_count(std::size_t s, std::size_t a) const noexcept { return visits[s * n_actions + a]; }
    std::span<const double> row(std::size_t s) const noexcept { return {values.data() + s * n_actions, n_actions}; }

    double min_value(std::size_t s) const noexcept {
        const auto r = row(s);
        return *std::min_element(r.begin(), r.end());
    }

    double sum_of_minima() const noexcept {
        double sum = 0.0;
        for (std::size_t s = 0; s < n_states; ++s) sum += min_value(s);
        return sum;
    }

    friend bool operator==(const QTable&, const QTable&) = default;
};

/// gamma(x) = argmin_u Q(x, u), lowest action index on ties.
inline Policy greedy_policy(const QTable& q) {
    Policy p;
    p.action_index.resize(q.n_states);
    for (std::size_t s = 0; s < q.n_states; ++s) p.action_index[s] = detail::argmin(q.row(s));
    return p;
}

enum class Variant { discounted, average };

/// a_k = ((1 + H) / (1 + H + visits))^w. H = 0, w = 1 is the plain
/// 1/(1 + visits) schedule. Any fixed H >= 0 and w in (1/2, 1] keeps
/// sum a_k = inf and sum a_k^2 < inf.
struct LearningRate {
    double horizon = 0.0;
    double exponent = 1.0;

    double operator()(std::uint64_t visits) const noexcept {
        const double r = (1.0 + horizon) / (1.0 + horizon + static_cast<double>(visits));
        return exponent == 1.0 ? r : std::pow(r, exponent);
    }
};

inline void q_step_discounted(QTable& q, std::size_t bin, std::size_t action, double cost, std::size_t next_bin,
                              double beta_h, double rate) {
    double& cell = q(bin, action);
    const double target = cost + beta_h * q.min_value(next_bin);
    cell = (1.0 - rate) * cell + rate * target;
    ++q.visits[bin * q.n_actions + action];
}

inline void q_step_discounted(QTable& q, std::size_t bin, std::size_t action, double cost, std::size_t next_bin,
                              double beta_h) {
    q_step_discounted(q, bin, action, cost, next_bin, beta_h, LearningRate{}(q.visit_count(bin, action)));
}

inline void q_step_average(QTable& q, std::size_t bin, std::size_t action, double cost, std::size_t next_bin,
                           double delta, double rate) {
    const double normalizer = delta * q.sum_of_minima();
    double& cell = q(bin, action);
    const double target = cost + q.min_value(next_bin) - normalizer;
    cell = (1.0 - rate) * cell + rate * target;
    ++q.visits[bin * q.n_actions + action];
}

inline void q_step_average(QTable& q, std::size_t bin, std::size_t action, double cost, std::size_t next_bin,
                           double delta) {
    q_step_average(q, bin, action, cost, next_bin, delta, LearningRate{}(q.visit_count(bin, action)));
}

struct LearnConfig {
    std::size_t steps = 1'000'000;
    double beta_h = 0.95;
    /// Average variant only; defaults to 1 / (10 * n_states).
    std::optional<double> delta;
    /// H of the learning-rate schedule; unset picks 1 / (1 - beta_h) for the
    /// discounted variant and 1 / (delta * n_states) for the average one.
    std::optional<double> lr_horizon;
    double lr_exponent = 1.0;
    double q_init = 0.0;
    std::size_t eval_window = 100'000;
    /// Stop once a window changes the table by less than this in sup norm;
    /// 0 disables early stopping.
    double early_stop_tol = 1e-4;
    std::uint64_t seed = 0;
    /// Reset the environment to its start state every n steps; 0 = never.
    std::size_t reset_every = 0;

    void validate() const {
        if (steps == 0) throw InvalidConfig("learning.steps must be > 0");
        if (!(beta_h >= 0.0 && beta_h < 1.0)) throw InvalidConfig("learning.beta_h must lie in [0, 1)");
        if (delta && !(*delta > 0.0)) throw InvalidConfig("learning.delta must be > 0");
        if (lr_horizon && !(*lr_horizon >= 0.0)) throw InvalidConfig("learning.lr_horizon must be >= 0");
        if (!(lr_exponent > 0.5 && lr_exponent <= 1.0)) throw InvalidConfig("learning.lr_exponent must lie in (0.5, 1]");
        if (eval_window == 0) throw InvalidConfig("learning.eval_window must be > 0");
        if (!std::isfinite(q_init)) throw InvalidConfig("learning.q_init must be finite");
    }

    double effective_delta(std::size_t n_states) const noexcept {
        return delta.value_or(1.0 / (10.0 * static_cast<double>(n_states)));
    }

    LearningRate effective_rate(Variant variant, std::size_t n_states) const noexcept {
        if (lr_horizon) return {*lr_horizon, lr_exponent};
        const double h = variant == Variant::discounted
                             ? 1.0 / (1.0 - beta_h)
                             : 1.0 / (effective_delta(n_states) * static_cast<double>(n_states));
        return {h, lr_exponent};
    }
};

struct StepOutcome {
    double cost = 0.0;
    std::size_t next_bin = 0;
};

/// A sampled process observed through a quantizer.
template <class E>
concept LearningEnvironment = requires(E& env, std::size_t action) {
    { env.n_states() } -> std::convertible_to<std::size_t>;
    { env.n_actions() } -> std::convertible_to<std::size_t>;
    { env.reset() } -> std::convertible_to<std::size_t>;
    { env.step(action) } -> std::same_as<StepOutcome>;
};

/// Diffusion simulated with held controls, observed through a quantizer.
class DiffusionEnvironment {
public:
    DiffusionEnvironment(const DiffusionModel& model, SimConfig sim, StateQuantizer q, ActionGrid grid, Vec x0,
                         std::uint64_t seed)
        : model_(&model), sim_(sim), q_(std::move(q)), grid_(std::move(grid)), x0_(std::move(x0)),
          x_(x0_), noise_(seed, 0, StreamId::noise), ws_(model.state_dim) {
        sim_.validate();
        if (x0_.size() != model.state_dim) throw InvalidConfig("learning.x0 has wrong dimension");
        if (q_.dim() != model.state_dim) throw InvalidConfig("quantizer dimension does not match model");
        if (grid_.dim() != model.action_dim) throw InvalidConfig("action grid dimension does not match model");
    }

    std::size_t n_states() const noexcept { return q_.size(); }
    std::size_t n_actions() const noexcept { return grid_.size(); }
    double interval() const noexcept { return sim_.h; }

    std::size_t reset() {
        x_ = x0_;
        return q_.bin_of(x_);
    }

    StepOutcome step(std::size_t action) {
        const double cost = advance_interval(*model_, sim_, x_, grid_[action], noise_, ws_);
        return {cost, q_.bin_of(x_)};
    }

    std::span<const double> state() const noexcept { return x_; }

private:
    const DiffusionModel* model_;
    SimConfig sim_;
    StateQuantizer q_;
    ActionGrid grid_;
    Vec x0_;
    Vec x_;
    CounterRng noise_;
    StepWorkspace ws_;
};

/// Samples a known finite MDP; used to check learning against exact solvers.
class FiniteMdpEnvironment {
public:
    FiniteMdpEnvironment(const FiniteMdp& mdp, std::size_t start, std::uint64_t seed)
        : mdp_(&mdp), start_(start), s_(start), rng_(seed, 0, StreamId::noise) {
        if (start >= mdp.n_states) throw InvalidConfig("finite environment: start state out of range");
    }

    std::size_t n_states() const noexcept { return mdp_->n_states; }
    std::size_t n_actions() const noexcept { return mdp_->n_actions; }
    double interval() const noexcept { return mdp_->h; }

    std::size_t reset() noexcept { return s_ = start_; }

    StepOutcome step(std::size_t action) noexcept {
        const double cost = mdp_->c(s_, action);
        const auto row = mdp_->row(s_, action);
        const double u = rng_.uniform();
        double acc = 0.0;
        std::size_t next = row.size() - 1;
        for (std::size_t j = 0; j < row.size(); ++j) {
            acc += row[j];
            if (u < acc) {
                next = j;
                break;
            }
        }
        s_ = next;
        return {cost, next};
    }

private:
    const FiniteMdp* mdp_;
    std::size_t start_;
    std::size_t s_;
    CounterRng rng_;
};

struct LearnDiagnostics {
    std::size_t steps_run = 0;
    bool converged = false;
    /// Sup-norm change of the table over each completed window.
    std::vector<double> window_deltas;
    /// delta * sum_y V(y) at the end of each window (average variant).
    std::vector<double> rho_series;
    double residual = std::numeric_limits<double>::infinity();
    /// Discounted runs: iterates outside [0, max_cost / (1 - beta_h)].
    std::size_t bound_violations = 0;
    double max_cost_seen = 0.0;
    double delta = 0.0;
    double lr_horizon = 0.0;
    std::vector<std::uint64_t> transition_counts;  ///< [(s * n_actions + a) * n_states + j]
    std::vector<double> cost_sums;                 ///< [s * n_actions + a]

    std::uint64_t min_visits(const QTable& q) const noexcept {
        return q.visits.empty() ? 0 : *std::min_element(q.visits.begin(), q.visits.end());
    }
};

struct LearnResult {
    QTable table;
    Policy policy;
    LearnDiagnostics diagnostics;

    /// Empirical finite MDP seen by this run: the model whose Q* the learned
    /// table approaches.
    FiniteMdp empirical_mdp(double h) const {
        return mdp_from_counts(table.n_states, table.n_actions, h, diagnostics.transition_counts,
                               diagnostics.cost_sums);
    }
};

/// Runs one continuous exploration trajectory with uniformly random actions,
/// applying the variant's update at every sampled transition.
template <LearningEnvironment Env>
LearnResult run_q_learning(Env& env, const LearnConfig& cfg, Variant variant) {
    cfg.validate();
    const std::size_t ns = env.n_states();
    const std::size_t na = env.n_actions();

    LearnResult out;
    out.table = QTable(ns, na, cfg.q_init);
    auto& q = out.table;
    auto& diag = out.diagnostics;
    diag.delta = cfg.effective_delta(ns);
    const LearningRate learning_rate = cfg.effective_rate(variant, ns);
    diag.lr_horizon = learning_rate.horizon;
    diag.transition_counts.assign(ns * na * ns, 0);
    diag.cost_sums.assign(ns * na, 0.0);

    // Row minima, kept current so each update is O(n_actions).
    std::vector<double> v(ns, cfg.q_init);
    double sum_v = cfg.q_init * static_cast<double>(ns);
    std::vector<double> snapshot = q.values;

    CounterRng explore(cfg.seed, 0, StreamId::policy);
    std::size_t s = env.reset();
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        if (cfg.reset_every > 0 && k > 0 && k % cfg.reset_every == 0) s = env.reset();
        const std::size_t a = explore.index(na);
        const StepOutcome o = env.step(a);
        const std::size_t pr = s * na + a;
        ++diag.transition_counts[pr * ns + o.next_bin];
        diag.cost_sums[pr] += o.cost;
        diag.max_cost_seen = std::max(diag.max_cost_seen, o.cost);

        const double rate = learning_rate(q.visits[pr]);
        const double target = variant == Variant::discounted ? o.cost + cfg.beta_h * v[o.next_bin]
                                                             : o.cost + v[o.next_bin] - diag.delta * sum_v;
        double& cell = q.values[pr];
        cell = (1.0 - rate) * cell + rate * target;
        ++q.visits[pr];

        if (variant == Variant::discounted) {
            const double upper = diag.max_cost_seen / (1.0 - cfg.beta_h);
            if (cell < 0.0 || cell > upper * (1.0 + 1e-12)) ++diag.bound_violations;
        }
        const double old_v = v[s];
        v[s] = q.min_value(s);
        // Re-summed rather than updated incrementally so rounding never drifts.
        if (v[s] != old_v) {
            sum_v = 0.0;
            for (double vi : v) sum_v += vi;
        }
        s = o.next_bin;
        diag.steps_run = k + 1;

        if ((k + 1) % cfg.eval_window == 0) {
            double change = 0.0;
            for (std::size_t i = 0; i < q.values.size(); ++i)
                change = std::max(change, std::abs(q.values[i] - snapshot[i]));
            snapshot = q.values;
            diag.window_deltas.push_back(change);
            diag.residual = change;
            if (variant == Variant::average) diag.rho_series.push_back(diag.delta * sum_v);
            if (cfg.early_stop_tol > 0.0 && change < cfg.early_stop_tol) {
                diag.converged = true;
                break;
            }
        }
    }
    if (variant == Variant::average && (diag.rho_series.empty() || diag.steps_run % cfg.eval_window != 0))
        diag.rho_series.push_back(diag.delta * sum_v);
    out.policy = greedy_policy(q);
    return out;
}

/// Convenience overload for a diffusion observed through (q, grid).
inline LearnResult run_q_learning(const DiffusionModel& model, const SimConfig& sim, const StateQuantizer& q,
                                  const ActionGrid& grid, const LearnConfig& cfg, Variant variant,
                                  std::span<const double> x0) {
    DiffusionEnvironment env(model, sim, q, grid, Vec(x0.begin(), x0.end()), cfg.seed);
    return run_q_learning(env, cfg, variant);
}

/// rho_hat = delta * sum_y min_v Q(y, v): the average-cost estimate per stage.
inline double average_cost_estimate(const QTable& q, double delta) noexcept { return delta * q.sum_of_minima(); }

}  // namespace qdiff
