#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"

using namespace qdiff;

namespace {

DiffusionModel constant_cost(double c) {
    auto m = builtin_model("linear_ou");
    m.running_cost = [c](std::span<const double>, std::span<const double>) { return c; };
    return m;
}

EvalOptions replicas(std::size_t n, unsigned threads = 1) {
    EvalOptions o;
    o.n_replicas = n;
    o.threads = threads;
    return o;
}

const ConstantPolicy kZero{Vec{0.0}};

}  // namespace

TEST(EvalDiscounted, ZeroCostIsExactlyZero) {
    const auto m = builtin_model("linear_ou", {{"Q", 0.0}});
    const auto est = eval_discounted(m, SimConfig{0.1, 0.01, 5.0, 1}, kZero, Vec{1.0}, 1.0, replicas(50));
    EXPECT_EQ(est.mean, 0.0);
    EXPECT_EQ(est.std_error, 0.0);
    EXPECT_EQ(est.criterion, Criterion::discounted);
}

TEST(EvalDiscounted, UnitCostGeometricSeries) {
    const double h = 0.1, alpha = 0.5, T = 8.0;
    const auto m = constant_cost(1.0);
    auto opt = replicas(3);
    opt.auto_extend = false;
    const auto est = eval_discounted(m, SimConfig{h, 0.01, T, 1}, kZero, Vec{0.0}, alpha, opt);
    const double q = std::exp(-alpha * h);
    EXPECT_NEAR(est.mean, h * (1.0 - std::pow(q, T / h)) / (1.0 - q), 1e-12);
    EXPECT_NEAR(est.truncation_bias_bound, h * std::pow(q, T / h) / (1.0 - q), 1e-14);

    const auto auto_est = eval_discounted(m, SimConfig{h, 0.01, 0.0, 1}, kZero, Vec{0.0}, alpha, replicas(3));
    const double full = h / (1.0 - q);
    EXPECT_LE(std::abs(auto_est.mean - full), auto_est.truncation_bias_bound + 1e-12);
    EXPECT_LE(auto_est.truncation_bias_bound, 0.01 * auto_est.mean);
}

TEST(EvalDiscounted, UnitCostApproachesInverseRate) {
    const double alpha = 0.7;
    double prev = std::numeric_limits<double>::infinity();
    for (double h : {0.4, 0.1, 0.02}) {
        const double q = std::exp(-alpha * h);
        const double gap = std::abs(h / (1.0 - q) - 1.0 / alpha);
        EXPECT_LT(gap, prev);
        prev = gap;
    }
}

TEST(EvalDiscounted, OuSecondMomentIntervalSum) {
    const double h = 0.1, alpha = 1.0;
    const auto m = builtin_model("linear_ou");
    const auto est = eval_discounted(m, SimConfig{h, 0.001, 0.0, 11}, kZero, Vec{1.0}, alpha, replicas(4000, 4));
    const auto n = static_cast<std::size_t>(std::llround(est.horizon / h));
    double exact = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * h;
        exact += std::exp(-alpha * t) * oracle::ou_second_moment(1.0, 1.0, 0.5, t) * h;
    }
    EXPECT_NEAR(est.mean, exact, 3.0 * est.std_error);
}

TEST(EvalDiscounted, OuSecondMomentIntegralMode) {
    const double alpha = 1.0;
    const auto m = builtin_model("linear_ou");
    SimConfig sim{0.1, 0.001, 0.0, 12, Scheme::euler_maruyama, CostMode::integral};
    const auto est = eval_discounted(m, sim, kZero, Vec{1.0}, alpha, replicas(4000, 4));
    const double exact = oracle::simpson(
        [&](double t) { return std::exp(-alpha * t) * oracle::ou_second_moment(1.0, 1.0, 0.5, t); }, 0.0,
        est.horizon, 4000);
    EXPECT_NEAR(est.mean, exact, 3.0 * est.std_error);
}

TEST(EvalDiscounted, TruncationHonesty) {
    const auto m = builtin_model("linear_ou");
    auto opt = replicas(500);
    opt.auto_extend = false;
    const auto shorter = eval_discounted(m, SimConfig{0.1, 0.01, 4.0, 3}, kZero, Vec{1.0}, 1.0, opt);
    const auto longer = eval_discounted(m, SimConfig{0.1, 0.01, 8.0, 3}, kZero, Vec{1.0}, 1.0, opt);
    EXPECT_GE(longer.mean, shorter.mean);
    EXPECT_LE(longer.mean - shorter.mean, shorter.truncation_bias_bound);
}

TEST(EvalDiscounted, ThreadCountInvariant) {
    const auto m = builtin_model("double_well");
    const auto grid = build_action_grid(m.action_box, 5);
    const UniformRandomPolicy pol(grid);
    const SimConfig sim{0.1, 0.01, 5.0, 8};
    const auto a = eval_discounted(m, sim, pol, Vec{1.0}, 1.0, replicas(64, 1));
    const auto b = eval_discounted(m, sim, pol, Vec{1.0}, 1.0, replicas(64, 5));
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.std_error, b.std_error);
}

TEST(EvalDiscounted, RejectsBadInputs) {
    const auto m = builtin_model("linear_ou");
    EXPECT_THROW(eval_discounted(m, SimConfig{0.1, 0.01, 1.0}, kZero, Vec{1.0}, 0.0, replicas(2)), InvalidConfig);
    EXPECT_THROW(eval_discounted(m, SimConfig{0.1, 0.01, 1.0}, kZero, Vec{1.0}, 1.0, replicas(0)), InvalidConfig);
    EXPECT_THROW(eval_discounted(m, SimConfig{0.1, 0.01, 1.0}, kZero, Vec{1.0, 2.0}, 1.0, replicas(2)), InvalidConfig);
}

TEST(EvalAverage, UnitCost) {
    const auto est = eval_average(constant_cost(1.0), SimConfig{0.1, 0.01, 10.0, 1}, kZero, Vec{0.0}, replicas(20));
    EXPECT_NEAR(est.mean, 1.0, 1e-12);
    EXPECT_NEAR(est.std_error, 0.0, 1e-12);
    EXPECT_EQ(est.criterion, Criterion::average);
}

TEST(EvalAverage, OuStationarySecondMoment) {
    const auto m = builtin_model("linear_ou");
    auto opt = replicas(20000, 4);
    opt.burn_in = 1.0;
    const auto est = eval_average(m, SimConfig{0.1, 0.001, 5.0, 21}, kZero, Vec{std::sqrt(0.125)}, opt);
    EXPECT_NEAR(est.mean, 0.125, 3.0 * est.std_error);
}

TEST(EvalAverage, LogisticZeroControlSettlesNearCapacity) {
    const auto m = builtin_model("logistic");
    auto opt = replicas(200, 4);
    const SimConfig sim{0.1, 0.001, 50.0, 5, Scheme::milstein};
    const auto mean_state =
        eval_time_average(m, sim, kZero, Vec{1.0}, opt, [](std::span<const double> x) { return x[0]; });
    EXPECT_GE(mean_state.mean, 0.8);
    EXPECT_LE(mean_state.mean, 1.1);
}

TEST(EvalAverage, BurnInMustLeaveSamples) {
    const auto m = builtin_model("linear_ou");
    auto opt = replicas(2);
    opt.burn_in = 1.0;
    EXPECT_THROW(eval_average(m, SimConfig{0.1, 0.01, 1.0}, kZero, Vec{0.0}, opt), InvalidConfig);
    opt.burn_in = -1.0;
    EXPECT_THROW(eval_average(m, SimConfig{0.1, 0.01, 2.0}, kZero, Vec{0.0}, opt), InvalidConfig);
}

TEST(EvalAverage, StandardErrorScalesWithReplicas) {
    const auto m = builtin_model("linear_ou");
    const SimConfig sim{0.1, 0.01, 4.0, 31};
    const auto a = eval_average(m, sim, kZero, Vec{1.0}, replicas(1000, 4));
    const auto b = eval_average(m, sim, kZero, Vec{1.0}, replicas(4000, 4));
    EXPECT_NEAR(a.std_error / b.std_error, 2.0, 0.4);
}

TEST(CriterionConsistency, ScaledDiscountedTendsToAverage) {
    const double c = 0.8, h = 0.1;
    const auto m = constant_cost(c);
    const auto avg = eval_average(m, SimConfig{h, 0.01, 10.0, 1}, kZero, Vec{0.0}, replicas(4));
    double prev = std::numeric_limits<double>::infinity();
    for (double alpha : {1.0, 0.1, 0.01}) {
        auto opt = replicas(2);
        opt.max_horizon = 1e5;
        opt.truncation_rel_tol = 1e-4;
        const auto disc = eval_discounted(m, SimConfig{h, 0.1, 0.0, 1}, kZero, Vec{0.0}, alpha, opt);
        const double gap = std::abs(alpha * disc.mean - avg.mean);
        EXPECT_LT(gap, prev);
        prev = gap;
    }
    EXPECT_LT(prev, 0.01 * c);
}

TEST(MeanPath, OuMeanDecaysExponentially) {
    const auto m = builtin_model("linear_ou");
    const auto path = mean_path(m, SimConfig{0.5, 0.005, 3.0, 41}, kZero, Vec{1.0}, replicas(4000, 4),
                                [](std::span<const double> x) { return x[0]; });
    ASSERT_EQ(path.times.size(), 7u);
    EXPECT_EQ(path.mean[0], 1.0);
    const double z = oracle::bonferroni_z(6);
    for (std::size_t k = 1; k < path.times.size(); ++k)
        EXPECT_NEAR(path.mean[k], std::exp(-path.times[k]), z * path.std_error[k] + 2e-3) << k;
}

TEST(DiscretizationGap, DifferenceIsPaired) {
    const auto m = builtin_model("linear_ou");
    const auto gap = discretization_gap(m, SimConfig{0.2, 0.01, 6.0, 2}, kZero, Vec{1.0}, 1.0, replicas(500));
    EXPECT_NEAR(gap.difference.mean, gap.interval.mean - gap.integral.mean, 1e-12);
    EXPECT_LT(gap.difference.std_error, gap.interval.std_error);
    EXPECT_GT(gap.difference.mean, 0.0);
}

TEST(DiscretizationGap, ConstantCostGapClosedForm) {
    const double h = 0.25, alpha = 1.0, dt = 0.01, T = 5.0;
    const auto gap =
        discretization_gap(constant_cost(1.0), SimConfig{h, dt, T, 2}, kZero, Vec{0.0}, alpha, replicas(2));
    const double q = std::exp(-alpha * h);
    const double n = T / h;
    const double outer = (1.0 - std::pow(q, n)) / (1.0 - q);
    const double inner = dt * (1.0 - q) / (1.0 - std::exp(-alpha * dt));
    EXPECT_NEAR(gap.interval.mean, h * outer, 1e-12);
    EXPECT_NEAR(gap.integral.mean, inner * outer, 1e-12);
}

TEST(VanishingDiscountSweep, SingleFactorAndValidation) {
    const auto m = builtin_model("double_well");
    const auto q = quantizer_for_box(m.state_box, 4);
    const auto grid = build_action_grid(m.action_box, 3);
    SweepSetup setup;
    setup.learn_sim = SimConfig{0.1, 0.01};
    setup.eval_sim = SimConfig{0.1, 0.01, 5.0, 3};
    setup.learn.steps = 5000;
    setup.learn_x0 = {1.0};
    setup.eval_x0 = {1.0};
    setup.eval = replicas(10);
    const std::vector<double> one{0.9};
    const auto rows = vanishing_discount_sweep(m, q, grid, one, setup);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_TRUE(rows[0].estimate.has_value());
    EXPECT_EQ(rows[0].factor, 0.9);
    const std::vector<double> unsorted{0.9, 0.5};
    EXPECT_THROW(vanishing_discount_sweep(m, q, grid, unsorted, setup), InvalidConfig);
    const std::vector<double> out_of_range{0.5, 1.0};
    EXPECT_THROW(vanishing_discount_sweep(m, q, grid, out_of_range, setup), InvalidConfig);
}

TEST(VanishingDiscountSweep, ConstantCostIsFlat) {
    const auto m = constant_cost(0.5);
    const auto q = quantizer_for_box(m.state_box, 4);
    const auto grid = build_action_grid(m.action_box, 3);
    SweepSetup setup;
    setup.learn_sim = SimConfig{0.1, 0.01};
    setup.eval_sim = SimConfig{0.1, 0.01, 5.0, 3};
    setup.learn.steps = 5000;
    setup.learn_x0 = {0.0};
    setup.eval_x0 = {0.0};
    setup.eval = replicas(10, 3);
    const std::vector<double> factors{0.5, 0.7, 0.9};
    const auto rows = vanishing_discount_sweep(m, q, grid, factors, setup);
    for (const auto& r : rows) EXPECT_NEAR(r.estimate->mean, 0.5, 1e-12);
}

TEST(VanishingDiscountSweep, FailingFactorIsRecorded) {
    const auto m = builtin_model("double_well");
    const auto q = quantizer_for_box(m.state_box, 4);
    const auto grid = build_action_grid(m.action_box, 3);
    SweepSetup setup;
    setup.learn_sim = SimConfig{0.1, 0.01};
    setup.eval_sim = SimConfig{0.1, 0.01, 1.0, 3};  // burn-in consumes the whole horizon below
    setup.learn.steps = 1000;
    setup.learn_x0 = {1.0};
    setup.eval_x0 = {1.0};
    setup.eval = replicas(4);
    setup.eval.burn_in = 2.0;
    const std::vector<double> factors{0.5, 0.9};
    const auto rows = vanishing_discount_sweep(m, q, grid, factors, setup);
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) {
        EXPECT_FALSE(r.estimate.has_value());
        EXPECT_FALSE(r.error.empty());
    }
}

TEST(LyapunovCheck, NoiseFreeStableOriginStaysZero) {
    const auto m = builtin_model("linear_ou", {{"sigma", 0.0}});
    const auto rep = lyapunov_moment_check(m, SimConfig{0.1, 0.01, 5.0, 1}, kZero, Vec{0.0}, 2.0, replicas(5));
    for (double v : rep.moments) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(rep.envelope_holds);
    EXPECT_EQ(rep.sup_moment, 0.0);
}

TEST(LyapunovCheck, OuSecondMomentEnvelope) {
    const auto m = builtin_model("linear_ou");
    const auto rep =
        lyapunov_moment_check(m, SimConfig{0.1, 0.001, 5.0, 2}, kZero, Vec{1.0}, 2.0, replicas(4000, 4));
    EXPECT_TRUE(rep.envelope_holds);
    EXPECT_TRUE(rep.sup_bound_holds);
    EXPECT_NEAR(rep.C1, 2.0, 0.3);
    EXPECT_NEAR(rep.C0 / rep.C1, 0.125, 0.01);
    for (std::size_t i = 0; i < rep.times.size(); ++i)
        EXPECT_LE(rep.moments[i], 1.1 * (std::exp(-2.0 * rep.times[i]) + 0.125 * (1.0 - std::exp(-2.0 * rep.times[i]))) +
                                      4.0 * rep.std_errors[i]);
}

TEST(LyapunovCheck, DoubleWellSupBound) {
    const auto m = builtin_model("double_well", {{"sigma", 0.25}});
    const auto grid = build_action_grid(m.action_box, 5);
    const auto rep = lyapunov_moment_check(m, SimConfig{0.1, 0.01, 20.0, 3}, UniformRandomPolicy(grid), Vec{1.0}, 2.0,
                                           replicas(2000, 4));
    EXPECT_TRUE(rep.sup_bound_holds);
    EXPECT_THROW(lyapunov_moment_check(m, SimConfig{0.1, 0.01, 1.0}, kZero, Vec{1.0}, 0.5, replicas(2)),
                 InvalidConfig);
}

TEST(CostEstimate, ConfidenceInterval) {
    const CostEstimate a{1.0, 0.1}, b{1.5, 0.1}, c{1.3, 0.1};
    EXPECT_DOUBLE_EQ(a.ci_low(), 1.0 - 0.196);
    EXPECT_DOUBLE_EQ(a.ci_high(), 1.196);
    EXPECT_TRUE(ci_separated_below(a, b));
    EXPECT_FALSE(ci_separated_below(a, c));
    EXPECT_FALSE(ci_separated_below(b, a));
}
