#pragma once

// Finite MDP on quantizer bins: estimation from simulated transitions and
// exact dynamic-programming solvers used as oracles for Q-learning limits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/parallel.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/sde.hpp"

namespace qdiff {

struct FiniteMdp {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    double h = 1.0;
    /// P[(s * n_actions + a) * n_states + j]
    std::vector<double> P;
    /// C[s * n_actions + a], cost x time units
    std::vector<double> C;
    std::vector<std::uint64_t> visit_counts;
    /// Bins whose start states fell back to the uniform-in-bin measure.
    std::vector<std::size_t> fallback_bins;

    FiniteMdp() = default;
    FiniteMdp(std::size_t states, std::size_t actions, double interval)
        : n_states(states), n_actions(actions), h(interval), P(states * actions * states, 0.0),
          C(states * actions, 0.0), visit_counts(states * actions, 0) {}

    std::size_t pair(std::size_t s, std::size_t a) const noexcept { return s * n_actions + a; }
    double& p(std::size_t s, std::size_t a, std::size_t j) noexcept { return P[pair(s, a) * n_states + j]; }
    double p(std::size_t s, std::size_t a, std::size_t j) const noexcept { return P[pair(s, a) * n_states + j]; }
    double& c(std::size_t s, std::size_t a) noexcept { return C[pair(s, a)]; }
    double c(std::size_t s, std::size_t a) const noexcept { return C[pair(s, a)]; }
    std::span<const double> row(std::size_t s, std::size_t a) const noexcept {
        return {P.data() + pair(s, a) * n_states, n_states};
    }

    /// Throws InvalidConfig unless rows are stochastic to 1e-9, entries lie
    /// in [0,1], costs are non-negative and every pair has `min_visits`.
    void validate(std::uint64_t min_visits = 0) const {
        if (n_states == 0 || n_actions == 0) throw InvalidConfig("mdp: empty state or action set");
        if (P.size() != n_states * n_actions * n_states || C.size() != n_states * n_actions)
            throw InvalidConfig("mdp: table sizes do not match shape");
        for (std::size_t s = 0; s < n_states; ++s)
            for (std::size_t a = 0; a < n_actions; ++a) {
                double sum = 0.0;
                for (double v : row(s, a)) {
                    if (!(v >= 0.0 && v <= 1.0)) throw InvalidConfig("mdp: transition probability outside [0,1]");
                    sum += v;
                }
                if (std::abs(sum - 1.0) > 1e-9) throw InvalidConfig("mdp: transition row does not sum to 1");
                if (!(c(s, a) >= 0.0)) throw InvalidConfig("mdp: negative stage cost");
                if (!visit_counts.empty() && visit_counts[pair(s, a)] < min_visits)
                    throw InvalidConfig("mdp: pair below minimum visit count");
            }
    }
};

struct MdpSolution {
    Vec V;
    Vec Q;
    Policy policy;
    std::optional<double> gain;  ///< average cost per stage
    std::optional<double> rho;   ///< average cost per unit time, gain / h
    double residual = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

/// Lowest-index argmin.
inline std::size_t argmin(std::span<const double> row) noexcept {
    std::size_t best = 0;
    for (std::size_t a = 1; a < row.size(); ++a)
        if (row[a] < row[best]) best = a;
    return best;
}

inline void greedy_from_q(const FiniteMdp& mdp, std::span<const double> q, Vec& v, Policy& pol) {
    v.assign(mdp.n_states, 0.0);
    pol.action_index.assign(mdp.n_states, 0);
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        const auto r = q.subspan(s * mdp.n_actions, mdp.n_actions);
        const auto a = argmin(r);
        pol.action_index[s] = a;
        v[s] = r[a];
    }
}

}  // namespace detail

/// Q(s,a) = C(s,a) + beta * sum_j P(j|s,a) V(j).
inline Vec q_from_values(const FiniteMdp& mdp, double beta, std::span<const double> v) {
    Vec q(mdp.n_states * mdp.n_actions);
    for (std::size_t s = 0; s < mdp.n_states; ++s)
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            double acc = 0.0;
            const auto r = mdp.row(s, a);
            for (std::size_t j = 0; j < mdp.n_states; ++j) acc += r[j] * v[j];
            q[mdp.pair(s, a)] = mdp.c(s, a) + beta * acc;
        }
    return q;
}

/// Discounted Bellman operator (TV)(s) = min_a Q(s,a).
inline Vec bellman(const FiniteMdp& mdp, double beta, std::span<const double> v) {
    const auto q = q_from_values(mdp, beta, v);
    Vec out;
    Policy unused;
    detail::greedy_from_q(mdp, q, out, unused);
    return out;
}

inline Policy greedy_policy(const FiniteMdp& mdp, std::span<const double> q) {
    Vec v;
    Policy p;
    detail::greedy_from_q(mdp, q, v, p);
    return p;
}

/// Discounted value iteration. Stops once the sup-norm change of successive
/// Q iterates drops below tol * (1 - beta) / (2 beta), which puts the final
/// iterate within tol/2 of the fixed point.
inline MdpSolution value_iteration(const FiniteMdp& mdp, double beta, double tol = 1e-10,
                                   std::size_t max_iter = 1'000'000) {
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidConfig("value_iteration: beta must lie in [0, 1)");
    if (!(tol > 0.0)) throw InvalidConfig("value_iteration: tol must be positive");
    const double threshold = beta > 0.0 ? tol * (1.0 - beta) / (2.0 * beta) : std::numeric_limits<double>::infinity();

    MdpSolution sol;
    sol.Q.assign(mdp.n_states * mdp.n_actions, 0.0);
    sol.V.assign(mdp.n_states, 0.0);
    for (std::size_t it = 1; it <= max_iter; ++it) {
        Vec next = q_from_values(mdp, beta, sol.V);
        double change = 0.0;
        for (std::size_t i = 0; i < next.size(); ++i) change = std::max(change, std::abs(next[i] - sol.Q[i]));
        sol.Q = std::move(next);
        detail::greedy_from_q(mdp, sol.Q, sol.V, sol.policy);
        sol.residual = change;
        sol.iterations = it;
        if (change < threshold) return sol;
    }
    throw NotConverged("value_iteration: iteration cap reached", sol.Q, sol.residual);
}

/// Relative value iteration against reference state `ref`. `aperiodicity`
/// (tau in (0,1]) iterates on tau P + (1 - tau) I, which leaves the gain and
/// the optimal policies unchanged and makes periodic chains converge.
/// Stops when the span of T V - V falls below tol; the gain then lies within
/// tol of the optimum. The returned Q is relative: Q = C + P' V - gain.
inline MdpSolution relative_value_iteration(const FiniteMdp& mdp, double tol = 1e-10,
                                            std::size_t max_iter = 1'000'000, std::size_t ref = 0,
                                            double aperiodicity = 1.0) {
    if (!(tol > 0.0)) throw InvalidConfig("relative_value_iteration: tol must be positive");
    if (ref >= mdp.n_states) throw InvalidConfig("relative_value_iteration: reference state out of range");
    if (!(aperiodicity > 0.0 && aperiodicity <= 1.0))
        throw InvalidConfig("relative_value_iteration: aperiodicity must lie in (0, 1]");

    MdpSolution sol;
    sol.V.assign(mdp.n_states, 0.0);
    Vec q(mdp.n_states * mdp.n_actions, 0.0);
    Vec w(mdp.n_states, 0.0);
    for (std::size_t it = 1; it <= max_iter; ++it) {
        q = q_from_values(mdp, aperiodicity, sol.V);
        for (std::size_t s = 0; s < mdp.n_states; ++s)
            for (std::size_t a = 0; a < mdp.n_actions; ++a) q[mdp.pair(s, a)] += (1.0 - aperiodicity) * sol.V[s];
        detail::greedy_from_q(mdp, q, w, sol.policy);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t s = 0; s < mdp.n_states; ++s) {
            const double d = w[s] - sol.V[s];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        const double g = w[ref];
        for (std::size_t s = 0; s < mdp.n_states; ++s) sol.V[s] = w[s] - g;
        for (auto& v : q) v -= g;
        sol.Q = q;
        sol.gain = g;
        sol.rho = g / mdp.h;
        sol.residual = hi - lo;
        sol.iterations = it;
        if (hi - lo < tol) return sol;
    }
    throw NotConverged("relative_value_iteration: iteration cap reached", sol.Q, sol.residual);
}

/// How start states inside a bin are drawn when estimating the model.
enum class WeightMode { synthetic, empirical };

/// States visited by an exploration run, grouped by bin.
struct Occupation {
    std::vector<std::vector<Vec>> states_per_bin;
};

/// Records up to `cap_per_bin` visited states per bin (reservoir sampling)
/// along one uniformly exploring run of `steps` intervals.
inline Occupation collect_occupation(const DiffusionModel& m, const SimConfig& sim, const StateQuantizer& q,
                                     const ActionGrid& grid, std::size_t steps, std::span<const double> x0,
                                     std::uint64_t seed, std::size_t cap_per_bin = 4096) {
    sim.validate();
    Occupation occ;
    occ.states_per_bin.resize(q.size());
    std::vector<std::uint64_t> seen(q.size(), 0);
    CounterRng noise(seed, 0, StreamId::noise);
    CounterRng choice(seed, 0, StreamId::policy);
    CounterRng reservoir(seed, 0, StreamId::misc);
    StepWorkspace ws(m.state_dim);
    Vec x(x0.begin(), x0.end());
    for (std::size_t k = 0; k < steps; ++k) {
        const auto b = q.bin_of(x);
        auto& bucket = occ.states_per_bin[b];
        const auto n = ++seen[b];
        if (bucket.size() < cap_per_bin) {
            bucket.push_back(x);
        } else {
            const auto slot = static_cast<std::uint64_t>(reservoir.uniform() * static_cast<double>(n));
            if (slot < cap_per_bin) bucket[slot] = x;
        }
        advance_interval(m, sim, x, grid[choice.index(grid.size())], noise, ws);
    }
    return occ;
}

struct EstimateOptions {
    std::size_t samples_per_pair = 1000;
    WeightMode mode = WeightMode::synthetic;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    /// Required in empirical mode.
    const Occupation* occupation = nullptr;
    /// Overflow start states come from the shell N/2 < |x - center|_inf <= N/2 (1 + overflow_shell).
    double overflow_shell = 0.1;
};

namespace detail {

inline void uniform_in_cell(const StateQuantizer& q, std::size_t bin, CounterRng& rng, Vec& x) {
    const auto box = q.cell(bin);
    for (std::size_t a = 0; a < box.size(); ++a) x[a] = box[a].lo + box[a].width() * rng.uniform();
}

inline void uniform_in_shell(const StateQuantizer& q, double shell, CounterRng& rng, Vec& x) {
    const double half = 0.5 * q.side();
    const double outer = half * (1.0 + shell);
    for (;;) {
        for (std::size_t a = 0; a < q.dim(); ++a) x[a] = q.center()[a] + outer * (2.0 * rng.uniform_open_low() - 1.0);
        if (!q.in_cube(x)) return;
    }
}

}  // namespace detail

/// Builds (P_h, C_h) by averaging simulated transitions over start states
/// drawn from each bin's weight measure: uniform in the cell (synthetic) or
/// the recorded exploration visits (empirical). Overflow starts are drawn
/// from a thin shell around the cube. Empirical bins without visits fall
/// back to the synthetic measure and are listed in `fallback_bins`.
inline FiniteMdp estimate_mdp(const DiffusionModel& m, const SimConfig& sim, const StateQuantizer& q,
                              const ActionGrid& grid, const EstimateOptions& opt) {
    sim.validate();
    if (opt.samples_per_pair == 0) throw InvalidConfig("estimate_mdp: samples_per_pair must be >= 1");
    if (opt.mode == WeightMode::empirical && opt.occupation == nullptr)
        throw InvalidConfig("estimate_mdp: empirical mode requires an occupation record");
    if (opt.occupation && opt.occupation->states_per_bin.size() != q.size())
        throw InvalidConfig("estimate_mdp: occupation record does not match quantizer");

    FiniteMdp mdp(q.size(), grid.size(), sim.h);
    const std::size_t pairs = q.size() * grid.size();
    std::vector<char> fell_back(pairs, 0);
    parallel_for(pairs, opt.threads, [&](std::size_t pr) {
        const std::size_t s = pr / grid.size();
        const std::size_t a = pr % grid.size();
        CounterRng noise(opt.seed, static_cast<std::uint32_t>(pr), StreamId::noise);
        CounterRng start(opt.seed, static_cast<std::uint32_t>(pr), StreamId::start_state);
        StepWorkspace ws(m.state_dim);
        const std::vector<Vec>* visits = nullptr;
        if (opt.mode == WeightMode::empirical && !opt.occupation->states_per_bin[s].empty())
            visits = &opt.occupation->states_per_bin[s];
        else if (opt.mode == WeightMode::empirical)
            fell_back[pr] = 1;

        Vec x(m.state_dim);
        double cost_sum = 0.0;
        for (std::size_t n = 0; n < opt.samples_per_pair; ++n) {
            if (visits) {
                x = (*visits)[start.index(visits->size())];
            } else if (s == q.overflow_index()) {
                detail::uniform_in_shell(q, opt.overflow_shell, start, x);
                apply_clip(m, x);
            } else {
                detail::uniform_in_cell(q, s, start, x);
            }
            cost_sum += advance_interval(m, sim, x, grid[a], noise, ws);
            mdp.p(s, a, q.bin_of(x)) += 1.0;
        }
        const double inv = 1.0 / static_cast<double>(opt.samples_per_pair);
        for (std::size_t j = 0; j < mdp.n_states; ++j) mdp.p(s, a, j) *= inv;
        mdp.c(s, a) = cost_sum * inv;
        mdp.visit_counts[pr] = opt.samples_per_pair;
    });
    for (std::size_t pr = 0; pr < pairs; pr += grid.size())
        if (fell_back[pr]) mdp.fallback_bins.push_back(pr / grid.size());
    return mdp;
}

/// Empirical model from tallied transitions: P = normalized counts,
/// C = mean realized cost. Pairs never visited get a self-loop with zero
/// cost and are listed in `fallback_bins` by state.
inline FiniteMdp mdp_from_counts(std::size_t n_states, std::size_t n_actions, double h,
                                 std::span<const std::uint64_t> transition_counts,
                                 std::span<const double> cost_sums) {
    if (transition_counts.size() != n_states * n_actions * n_states || cost_sums.size() != n_states * n_actions)
        throw InvalidConfig("mdp_from_counts: table sizes do not match shape");
    FiniteMdp mdp(n_states, n_actions, h);
    for (std::size_t s = 0; s < n_states; ++s) {
        bool flagged = false;
        for (std::size_t a = 0; a < n_actions; ++a) {
            const std::size_t pr = mdp.pair(s, a);
            std::uint64_t total = 0;
            for (std::size_t j = 0; j < n_states; ++j) total += transition_counts[pr * n_states + j];
            mdp.visit_counts[pr] = total;
            if (total == 0) {
                mdp.p(s, a, s) = 1.0;
                flagged = true;
                continue;
            }
            for (std::size_t j = 0; j < n_states; ++j)
                mdp.p(s, a, j) = static_cast<double>(transition_counts[pr * n_states + j]) / static_cast<double>(total);
            mdp.c(s, a) = cost_sums[pr] / static_cast<double>(total);
        }
        if (flagged) mdp.fallback_bins.push_back(s);
    }
    return mdp;
}

// CSV layout:
//   #qdiff-mdp,1
//   M,n_actions,h          (M interior bins; the tables have M+1 states)
//   <M>,<n_actions>,<h>
//   P                      then one row per (state, action), n_states values
//   C                      then one row per state, n_actions values
//   visits                 then one row per state, n_actions counts
inline constexpr const char* kMdpMagic = "#qdiff-mdp,1";

inline void write_mdp_csv(std::ostream& out, const FiniteMdp& mdp) {
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    out << kMdpMagic << '\n' << "M,n_actions,h\n";
    out << (mdp.n_states - 1) << ',' << mdp.n_actions << ',' << num(mdp.h) << '\n';
    out << "P\n";
    for (std::size_t pr = 0; pr < mdp.n_states * mdp.n_actions; ++pr) {
        for (std::size_t j = 0; j < mdp.n_states; ++j) out << (j ? "," : "") << num(mdp.P[pr * mdp.n_states + j]);
        out << '\n';
    }
    out << "C\n";
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) out << (a ? "," : "") << num(mdp.c(s, a));
        out << '\n';
    }
    out << "visits\n";
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        for (std::size_t a = 0; a < mdp.n_actions; ++a) out << (a ? "," : "") << mdp.visit_counts[mdp.pair(s, a)];
        out << '\n';
    }
}

inline FiniteMdp read_mdp_csv(std::istream& in) {
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line)) throw FormatError(std::string("mdp csv: truncated before ") + what);
    };
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    auto parse_row = [&](std::size_t expected, const char* what) {
        auto cells = split(line);
        if (cells.size() != expected) throw FormatError(std::string("mdp csv: wrong column count in ") + what);
        std::vector<double> v;
        v.reserve(expected);
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(c, &used));
                if (used != c.size()) throw FormatError("");
            } catch (...) {
                throw FormatError(std::string("mdp csv: bad number in ") + what);
            }
        }
        return v;
    };
    next_line("magic");
    if (line != kMdpMagic) throw FormatError("mdp csv: bad magic or version");
    next_line("header");
    if (line != "M,n_actions,h") throw FormatError("mdp csv: bad header");
    next_line("shape");
    const auto shape = parse_row(3, "shape");
    if (shape[0] < 0 || shape[1] < 1) throw FormatError("mdp csv: bad shape");
    FiniteMdp mdp(static_cast<std::size_t>(shape[0]) + 1, static_cast<std::size_t>(shape[1]), shape[2]);
    next_line("P");
    if (line != "P") throw FormatError("mdp csv: missing P section");
    for (std::size_t pr = 0; pr < mdp.n_states * mdp.n_actions; ++pr) {
        next_line("P rows");
        const auto r = parse_row(mdp.n_states, "P");
        std::copy(r.begin(), r.end(), mdp.P.begin() + static_cast<std::ptrdiff_t>(pr * mdp.n_states));
    }
    next_line("C");
    if (line != "C") throw FormatError("mdp csv: missing C section");
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        next_line("C rows");
        const auto r = parse_row(mdp.n_actions, "C");
        std::copy(r.begin(), r.end(), mdp.C.begin() + static_cast<std::ptrdiff_t>(s * mdp.n_actions));
    }
    next_line("visits");
    if (line != "visits") throw FormatError("mdp csv: missing visits section");
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
        next_line("visit rows");
        const auto r = parse_row(mdp.n_actions, "visits");
        for (std::size_t a = 0; a < mdp.n_actions; ++a)
            mdp.visit_counts[mdp.pair(s, a)] = static_cast<std::uint64_t>(r[a]);
    }
    return mdp;
}

}  // namespace qdiff
