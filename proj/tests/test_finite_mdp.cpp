#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qdiff/errors.hpp"
#include "qdiff/finite_mdp.hpp"

using namespace qdiff;

namespace {

double sup_diff(const Vec& a, const Vec& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// A 2-state, 2-action chain with distinct optimal actions per state.
FiniteMdp hand_mdp() {
    return oracle::make_mdp({{{0.9, 0.1}, {0.2, 0.8}}, {{0.7, 0.3}, {0.05, 0.95}}}, {{1.0, 0.6}, {0.2, 0.5}});
}

}  // namespace

TEST(ValueIteration, ZeroCost) {
    std::mt19937_64 gen(1);
    auto m = oracle::random_mdp(gen, 3, 2);
    std::fill(m.C.begin(), m.C.end(), 0.0);
    const auto sol = value_iteration(m, 0.9);
    for (double v : sol.V) EXPECT_EQ(v, 0.0);
    for (auto a : sol.policy.action_index) EXPECT_EQ(a, 0u);
}

TEST(ValueIteration, SingleStateGeometricSeries) {
    const double c = 2.5, h = 0.1, beta = 0.95;
    const auto m = oracle::make_mdp({{{1.0}}}, {{c * h}}, h);
    const auto sol = value_iteration(m, beta, 1e-12);
    EXPECT_NEAR(sol.V[0], c * h / (1.0 - beta), 1e-11);
}

TEST(ValueIteration, HandMdpMatchesEnumeration) {
    const auto m = hand_mdp();
    for (double beta : {0.0, 0.5, 0.9, 0.99}) {
        const auto sol = value_iteration(m, beta, 1e-10);
        const auto best = oracle::enumerate_discounted(m, beta);
        EXPECT_LT(sup_diff(sol.V, best.V), 1e-9) << beta;
        EXPECT_EQ(sol.policy.action_index, best.policy) << beta;
    }
}

TEST(ValueIteration, RandomSmallMdpsMatchEnumeration) {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t ns = 1 + gen() % 4, na = 1 + gen() % 3;
        const auto m = oracle::random_mdp(gen, ns, na);
        const double beta = std::uniform_real_distribution<double>(0.1, 0.97)(gen);
        const auto sol = value_iteration(m, beta, 1e-10);
        const auto best = oracle::enumerate_discounted(m, beta);
        EXPECT_LT(sup_diff(sol.V, best.V), 1e-9);
        double cmax = *std::max_element(m.C.begin(), m.C.end());
        for (std::size_t s = 0; s < ns; ++s) {
            EXPECT_GE(sol.V[s], 0.0);
            EXPECT_LE(sol.V[s], cmax / (1.0 - beta) + 1e-9);
            const auto row = std::span<const double>(sol.Q).subspan(s * na, na);
            EXPECT_EQ(sol.V[s], *std::min_element(row.begin(), row.end()));
        }
    }
}

TEST(ValueIteration, GreedyConsistency) {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 30; ++trial) {
        const auto m = oracle::random_mdp(gen, 6, 4);
        const auto sol = value_iteration(m, 0.9);
        const auto recomputed = q_from_values(m, 0.9, sol.V);
        EXPECT_EQ(greedy_policy(m, recomputed), sol.policy);
    }
}

TEST(ValueIteration, LowestIndexTieBreak) {
    const auto m = oracle::make_mdp({{{1.0}, {1.0}, {1.0}}}, {{0.5, 0.2, 0.2}});
    EXPECT_EQ(value_iteration(m, 0.5).policy.action_index, std::vector<std::size_t>{1});
}

TEST(ValueIteration, IterationCapThrowsWithLastIterate) {
    const auto m = hand_mdp();
    try {
        value_iteration(m, 0.99, 1e-12, 3);
        FAIL() << "expected NotConverged";
    } catch (const NotConverged& e) {
        EXPECT_EQ(e.last_iterate().size(), 4u);
        EXPECT_GT(e.residual(), 0.0);
    }
}

TEST(ValueIteration, RejectsBadArguments) {
    const auto m = hand_mdp();
    EXPECT_THROW(value_iteration(m, 1.0), InvalidConfig);
    EXPECT_THROW(value_iteration(m, -0.1), InvalidConfig);
    EXPECT_THROW(value_iteration(m, 0.5, 0.0), InvalidConfig);
}

TEST(BellmanProperty, ContractionOverRandomPairs) {
    std::mt19937_64 gen(4);
    int pairs = 0;
    for (int k = 0; k < 50; ++k) {
        const auto m = oracle::random_mdp(gen, 2 + gen() % 8, 1 + gen() % 4);
        const double beta = std::uniform_real_distribution<double>(0.0, 0.999)(gen);
        for (int j = 0; j < 20; ++j, ++pairs) {
            const auto v = oracle::random_vector(gen, m.n_states, 10.0);
            const auto w = oracle::random_vector(gen, m.n_states, 10.0);
            EXPECT_LE(sup_diff(bellman(m, beta, v), bellman(m, beta, w)), beta * sup_diff(v, w));
        }
    }
    EXPECT_GE(pairs, 1000);
}

TEST(RelativeValueIteration, ConstantCost) {
    std::mt19937_64 gen(5);
    auto m = oracle::random_mdp(gen, 4, 3, 0.1);
    std::fill(m.C.begin(), m.C.end(), 0.7 * 0.1);
    const auto sol = relative_value_iteration(m);
    EXPECT_NEAR(*sol.gain, 0.07, 1e-12);
    EXPECT_NEAR(*sol.rho, 0.7, 1e-11);
}

TEST(RelativeValueIteration, SingleStateGainIsMinimumCost) {
    const auto m = oracle::make_mdp({{{1.0}, {1.0}, {1.0}}}, {{0.4, 0.25, 0.3}});
    const auto sol = relative_value_iteration(m);
    EXPECT_DOUBLE_EQ(*sol.gain, 0.25);
    EXPECT_EQ(sol.policy.action_index[0], 1u);
}

TEST(RelativeValueIteration, HandMdpMatchesStationaryOracle) {
    const auto m = hand_mdp();
    const auto sol = relative_value_iteration(m, 1e-12);
    EXPECT_NEAR(*sol.gain, oracle::enumerate_average(m), 1e-10);
}

TEST(RelativeValueIteration, RandomMdpsMatchEnumeration) {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 40; ++trial) {
        const auto m = oracle::random_mdp(gen, 2 + gen() % 3, 1 + gen() % 3);
        const auto sol = relative_value_iteration(m, 1e-11);
        EXPECT_NEAR(*sol.gain, oracle::enumerate_average(m), 1e-9);
    }
}

TEST(RelativeValueIteration, PeriodicChainNeedsAperiodicity) {
    // Deterministic swap: period 2; the unmodified iteration never settles.
    const auto m = oracle::make_mdp({{{0.0, 1.0}}, {{1.0, 0.0}}}, {{1.0}, {0.0}});
    EXPECT_THROW(relative_value_iteration(m, 1e-10, 200), NotConverged);
    const auto sol = relative_value_iteration(m, 1e-12, 100000, 0, 0.5);
    EXPECT_NEAR(*sol.gain, 0.5, 1e-10);
}

TEST(RelativeValueIteration, GainShiftsWithConstantCost) {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = oracle::random_mdp(gen, 5, 3);
        const auto base = relative_value_iteration(m, 1e-12);
        const double kappa = std::uniform_real_distribution<double>(0.0, 3.0)(gen);
        for (auto& c : m.C) c += kappa;
        const auto shifted = relative_value_iteration(m, 1e-12);
        EXPECT_NEAR(*shifted.gain - *base.gain, kappa, 1e-9);
        EXPECT_EQ(shifted.policy, base.policy);
    }
}

TEST(RelativeValueIteration, RejectsBadArguments) {
    const auto m = hand_mdp();
    EXPECT_THROW(relative_value_iteration(m, 0.0), InvalidConfig);
    EXPECT_THROW(relative_value_iteration(m, 1e-9, 10, 2), InvalidConfig);
    EXPECT_THROW(relative_value_iteration(m, 1e-9, 10, 0, 0.0), InvalidConfig);
}

TEST(EstimateMdp, DeterministicDynamicsGiveOneHotRows) {
    const auto model = builtin_model("double_well", {{"sigma", 0.0}});
    const auto q = quantizer_for_box(model.state_box, 12);
    const auto grid = build_action_grid(model.action_box, 5);
    const SimConfig sim{0.1, 0.01};
    Occupation occ;
    occ.states_per_bin.resize(q.size());
    for (std::size_t b = 0; b < q.size(); ++b) occ.states_per_bin[b] = {q.representative(b)};
    EstimateOptions opt;
    opt.samples_per_pair = 5;
    opt.mode = WeightMode::empirical;
    opt.occupation = &occ;
    const auto mdp = estimate_mdp(model, sim, q, grid, opt);
    for (std::size_t s = 0; s < q.size(); ++s)
        for (std::size_t a = 0; a < grid.size(); ++a) {
            Vec x = q.representative(s);
            for (int i = 0; i < 10; ++i) x = em_step(model, x, grid[a], 0.01, Vec{0.0});
            const auto target = q.bin_of(x);
            for (std::size_t j = 0; j < q.size(); ++j) EXPECT_EQ(mdp.p(s, a, j), j == target ? 1.0 : 0.0);
        }
    EXPECT_TRUE(mdp.fallback_bins.empty());
}

TEST(EstimateMdp, ZeroCostModel) {
    const auto model = builtin_model("linear_ou", {{"Q", 0.0}});
    const auto q = quantizer_for_box(model.state_box, 4);
    const auto mdp = estimate_mdp(model, SimConfig{0.1, 0.01}, q, build_action_grid(model.action_box, 3),
                                  EstimateOptions{50});
    for (double c : mdp.C) EXPECT_EQ(c, 0.0);
    EXPECT_NO_THROW(mdp.validate(50));
}

TEST(EstimateMdp, RowsAreStochastic) {
    const auto model = builtin_model("double_well");
    const auto q = quantizer_for_box(model.state_box, 6);
    EstimateOptions opt{200};
    opt.seed = 9;
    opt.threads = 3;
    const auto mdp = estimate_mdp(model, SimConfig{0.2, 0.01}, q, build_action_grid(model.action_box, 3), opt);
    EXPECT_NO_THROW(mdp.validate(200));
    for (std::size_t s = 0; s < mdp.n_states; ++s)
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
            double sum = 0.0;
            for (double v : mdp.row(s, a)) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
}

TEST(EstimateMdp, ThreadCountDoesNotChangeResult) {
    const auto model = builtin_model("double_well");
    const auto q = quantizer_for_box(model.state_box, 5);
    const auto grid = build_action_grid(model.action_box, 3);
    EstimateOptions opt{100};
    opt.seed = 3;
    const auto a = estimate_mdp(model, SimConfig{0.1, 0.01}, q, grid, opt);
    opt.threads = 4;
    const auto b = estimate_mdp(model, SimConfig{0.1, 0.01}, q, grid, opt);
    EXPECT_EQ(a.P, b.P);
    EXPECT_EQ(a.C, b.C);
}

TEST(EstimateMdp, OuCellMassMatchesGaussianOracle) {
    // Euler-Maruyama on OU is an exact AR(1) per substep, so the h-step law
    // from x is Gaussian with mean rho^n x and variance s2 (1 - rho^2n)/(1 - rho^2).
    const double a = 1.0, sigma = 0.5, h = 0.5, dt = 0.01;
    const auto model = builtin_model("linear_ou", {{"a", a}, {"sigma", sigma}});
    const auto q = quantizer_for_box(model.state_box, 4);
    const auto grid = build_action_grid({{0.0, 0.0}}, 1);
    const std::size_t n_samples = 20000;
    EstimateOptions opt{n_samples};
    opt.seed = 17;
    const auto mdp = estimate_mdp(model, SimConfig{h, dt}, q, grid, opt);

    const double rho = 1.0 - a * dt;
    const double n = h / dt;
    const double gain = std::pow(rho, n);
    const double sd = std::sqrt(sigma * sigma * dt * (1.0 - std::pow(rho, 2 * n)) / (1.0 - rho * rho));
    for (std::size_t i = 0; i < q.interior_count(); ++i) {
        const auto cell = q.cell(i)[0];
        for (std::size_t j = 0; j < q.size(); ++j) {
            auto mass_from = [&](double x) {
                const double m = gain * x;
                if (j == q.overflow_index())
                    return normal_cdf((q.lower(0) - m) / sd) + 1.0 - normal_cdf((q.upper(0) - m) / sd);
                const auto target = q.cell(j)[0];
                return normal_cdf((target.hi - m) / sd) - normal_cdf((target.lo - m) / sd);
            };
            const double exact = oracle::simpson(mass_from, cell.lo, cell.hi, 200) / cell.width();
            const double se = std::sqrt(exact * (1.0 - exact) / static_cast<double>(n_samples));
            EXPECT_NEAR(mdp.p(i, 0, j), exact, 3.0 * se + 1e-12) << "i=" << i << " j=" << j;
        }
    }
}

TEST(EstimateMdp, EmpiricalModeFlagsUnvisitedBins) {
    const auto model = builtin_model("double_well");
    const auto q = quantizer_for_box(model.state_box, 6);
    const auto grid = build_action_grid(model.action_box, 2);
    Occupation occ;
    occ.states_per_bin.resize(q.size());
    occ.states_per_bin[2] = {q.representative(2)};
    EstimateOptions opt{10};
    opt.mode = WeightMode::empirical;
    opt.occupation = &occ;
    opt.threads = 2;
    const auto mdp = estimate_mdp(model, SimConfig{0.1, 0.01}, q, grid, opt);
    EXPECT_EQ(mdp.fallback_bins, (std::vector<std::size_t>{0, 1, 3, 4, 5, 6}));
    EstimateOptions missing{10};
    missing.mode = WeightMode::empirical;
    EXPECT_THROW(estimate_mdp(model, SimConfig{0.1, 0.01}, q, grid, missing), InvalidConfig);
    EXPECT_THROW(estimate_mdp(model, SimConfig{0.1, 0.01}, q, grid, EstimateOptions{0}), InvalidConfig);
}

TEST(EstimateMdp, CollectOccupationRecordsVisitedStates) {
    const auto model = builtin_model("double_well");
    const auto q = quantizer_for_box(model.state_box, 6);
    const auto occ =
        collect_occupation(model, SimConfig{0.1, 0.01}, q, build_action_grid(model.action_box, 3), 5000, Vec{1.0}, 4, 64);
    std::size_t total = 0;
    for (std::size_t b = 0; b < q.size(); ++b) {
        EXPECT_LE(occ.states_per_bin[b].size(), 64u);
        for (const auto& x : occ.states_per_bin[b]) EXPECT_EQ(q.bin_of(x), b);
        total += occ.states_per_bin[b].size();
    }
    EXPECT_GT(total, 0u);
}

TEST(MdpFromCounts, NormalizesAndFlagsUnvisited) {
    const std::vector<std::uint64_t> counts{3, 1, 0, 0, 2, 2, 0, 0};
    const std::vector<double> costs{0.8, 0.0, 1.0, 0.0};
    const auto m = mdp_from_counts(2, 2, 0.1, counts, costs);
    EXPECT_DOUBLE_EQ(m.p(0, 0, 0), 0.75);
    EXPECT_DOUBLE_EQ(m.c(0, 0), 0.2);
    EXPECT_DOUBLE_EQ(m.p(0, 1, 0), 1.0);
    EXPECT_DOUBLE_EQ(m.c(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(m.p(1, 0, 1), 0.5);
    EXPECT_DOUBLE_EQ(m.p(1, 1, 1), 1.0);
    EXPECT_EQ(m.fallback_bins, (std::vector<std::size_t>{0, 1}));
    EXPECT_THROW(mdp_from_counts(2, 2, 0.1, std::span(counts).first(4), costs), InvalidConfig);
}

TEST(FiniteMdpValidate, DetectsViolations) {
    auto m = hand_mdp();
    EXPECT_NO_THROW(m.validate());
    m.p(0, 0, 0) = 0.95;
    EXPECT_THROW(m.validate(), InvalidConfig);
    m = hand_mdp();
    m.c(1, 1) = -0.1;
    EXPECT_THROW(m.validate(), InvalidConfig);
    m = hand_mdp();
    EXPECT_THROW(m.validate(1), InvalidConfig);
}

TEST(MdpCsv, RoundTripIsExact) {
    std::mt19937_64 gen(8);
    auto m = oracle::random_mdp(gen, 4, 3, 0.41);
    for (std::size_t i = 0; i < m.visit_counts.size(); ++i) m.visit_counts[i] = 100 + i;
    std::stringstream ss;
    write_mdp_csv(ss, m);
    const auto text = ss.str();
    EXPECT_EQ(text.rfind("#qdiff-mdp,1\nM,n_actions,h\n3,3,0.40999999999999998\n", 0), 0u);
    std::istringstream in(text);
    const auto back = read_mdp_csv(in);
    EXPECT_EQ(back.n_states, 4u);
    EXPECT_EQ(back.P, m.P);
    EXPECT_EQ(back.C, m.C);
    EXPECT_EQ(back.visit_counts, m.visit_counts);
    EXPECT_EQ(back.h, m.h);
}

TEST(MdpCsv, RejectsMalformedInput) {
    std::stringstream ss;
    write_mdp_csv(ss, hand_mdp());
    const auto text = ss.str();
    {
        std::istringstream in("#qdiff-mdp,2\n" + text.substr(text.find('\n') + 1));
        EXPECT_THROW(read_mdp_csv(in), FormatError);
    }
    {
        std::istringstream in(text.substr(0, text.size() / 2));
        EXPECT_THROW(read_mdp_csv(in), FormatError);
    }
    {
        auto bad = text;
        bad.replace(bad.find("P\n") + 2, 3, "x.y");
        std::istringstream in(bad);
        EXPECT_THROW(read_mdp_csv(in), FormatError);
    }
}
