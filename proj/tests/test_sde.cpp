#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "qdiff/errors.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/sde.hpp"

using namespace qdiff;

namespace {

double drift_at(const DiffusionModel& m, double x, double u) {
    Vec xs{x}, us{u}, out(1);
    m.drift(xs, us, out);
    return out[0];
}

}  // namespace

TEST(BuiltinModel, DoubleWellEquilibria) {
    const auto m = builtin_model("double_well");
    EXPECT_DOUBLE_EQ(drift_at(m, 1.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(drift_at(m, -1.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(drift_at(m, 0.0, 0.0), 0.0);
}

TEST(BuiltinModel, LogisticCarryingCapacity) {
    const auto m = builtin_model("logistic");
    EXPECT_DOUBLE_EQ(drift_at(m, 1.0, 0.0), 0.0);
    EXPECT_EQ(m.state_clip.front(), StateClip::reflect_at_zero);
    EXPECT_EQ(m.diffusion_kind, DiffusionKind::multiplicative);
}

TEST(BuiltinModel, CostsMatchDefinitions) {
    const auto dw = builtin_model("double_well");
    const auto lg = builtin_model("logistic");
    const auto ou = builtin_model("linear_ou");
    Vec x{0.7}, u{0.3};
    EXPECT_DOUBLE_EQ(dw.running_cost(x, u), 0.49 + 0.1 * 0.09);
    EXPECT_DOUBLE_EQ(lg.running_cost(x, u), 10.0 * 0.2 * 0.2 + 0.09);
    EXPECT_DOUBLE_EQ(ou.running_cost(x, u), 0.49);
}

TEST(BuiltinModel, CostIsNonNegativeOnBoxes) {
    for (const char* name : {"double_well", "logistic", "linear_ou"}) {
        const auto m = builtin_model(name);
        const auto& sb = m.state_box.front();
        const auto& ab = m.action_box.front();
        for (int i = 0; i <= 20; ++i)
            for (int j = 0; j <= 20; ++j) {
                Vec x{sb.lo + sb.width() * i / 20.0}, u{ab.lo + ab.width() * j / 20.0};
                EXPECT_GE(m.running_cost(x, u), 0.0) << name;
            }
    }
}

TEST(BuiltinModel, UnknownNameThrowsNotFound) {
    EXPECT_THROW(builtin_model("van_der_pol"), NotFound);
}

TEST(BuiltinModel, UnknownOverrideThrowsInvalidConfig) {
    EXPECT_THROW(builtin_model("double_well", {{"gamma", 1.0}}), InvalidConfig);
}

TEST(BuiltinModel, OverridesApply) {
    const auto m = builtin_model("linear_ou", {{"a", 2.0}, {"sigma", 0.0}});
    EXPECT_DOUBLE_EQ(drift_at(m, 1.0, 0.0), -2.0);
    EXPECT_DOUBLE_EQ(m.params.at("a"), 2.0);
}

TEST(EmStep, DeterministicSubstitution) {
    const auto m = builtin_model("double_well", {{"sigma", 0.0}});
    const auto x = em_step(m, Vec{0.5}, Vec{0.0}, 0.1, Vec{0.0});
    EXPECT_DOUBLE_EQ(x[0], 0.5 + 0.1 * (0.5 - 0.125));
    EXPECT_NEAR(x[0], 0.5375, 1e-15);
}

TEST(EmStep, FixedPointWhenDriftAndNoiseVanish) {
    const auto m = builtin_model("linear_ou");
    EXPECT_DOUBLE_EQ(em_step(m, Vec{0.0}, Vec{0.0}, 0.37, Vec{0.0})[0], 0.0);
}

TEST(EmStep, OuSubstitution) {
    const auto m = builtin_model("linear_ou", {{"sigma", 1.0}});
    EXPECT_NEAR(em_step(m, Vec{1.0}, Vec{0.0}, 0.01, Vec{0.1})[0], 1.09, 1e-15);
}

TEST(EmStep, NonFiniteStateThrows) {
    const auto m = builtin_model("double_well");
    EXPECT_THROW(em_step(m, Vec{1e200}, Vec{0.0}, 0.01, Vec{0.0}), NumericalError);
}

TEST(EmStep, NonPositiveDtRejected) {
    const auto m = builtin_model("linear_ou");
    EXPECT_THROW(em_step(m, Vec{1.0}, Vec{0.0}, 0.0, Vec{0.0}), InvalidConfig);
}

TEST(MilsteinStep, VanishingCorrectionEqualsEm) {
    const auto m = builtin_model("logistic");
    const double dt = 0.01;
    const Vec dw{std::sqrt(dt)};
    for (double x : {0.1, 0.5, 1.3}) {
        EXPECT_EQ(milstein_step(m, Vec{x}, Vec{0.7}, dt, dw)[0], em_step(m, Vec{x}, Vec{0.7}, dt, dw)[0]);
    }
}

TEST(MilsteinStep, CorrectionTermValue) {
    const auto m = builtin_model("logistic");
    const double x = 0.5, dt = 0.001, dw = 0.05, s = 0.4;
    const double expected = x + x * (1 - x) * dt + s * x * dw + 0.5 * (s * x) * s * (dw * dw - dt);
    EXPECT_NEAR(milstein_step(m, Vec{x}, Vec{0.0}, dt, Vec{dw})[0], expected, 1e-15);
    EXPECT_NEAR(milstein_step(m, Vec{x}, Vec{0.0}, dt, Vec{dw})[0] - em_step(m, Vec{x}, Vec{0.0}, dt, Vec{dw})[0],
                0.5 * (s * x) * s * (dw * dw - dt), 1e-15);
}

TEST(MilsteinStep, OriginIsAbsorbingUnderZeroControl) {
    const auto m = builtin_model("logistic");
    EXPECT_EQ(milstein_step(m, Vec{0.0}, Vec{0.0}, 0.001, Vec{-2.0})[0], 0.0);
    EXPECT_EQ(milstein_step(m, Vec{0.0}, Vec{0.0}, 0.001, Vec{0.3})[0], 0.0);
}

TEST(MilsteinStep, NegativeStateReflectedToZero) {
    const auto m = builtin_model("logistic");
    // 0.002 + (0.002 * 0.998 - 5) * 0.001 < 0 before the clip.
    const double pre = 0.002 + (0.002 * (1 - 0.002) - 5.0) * 0.001 + 0.5 * (0.4 * 0.002) * 0.4 * (0.0 - 0.001);
    ASSERT_LT(pre, 0.0);
    EXPECT_EQ(milstein_step(m, Vec{0.002}, Vec{-5.0}, 0.001, Vec{0.0})[0], 0.0);
    EXPECT_EQ(em_step(m, Vec{0.002}, Vec{-5.0}, 0.001, Vec{0.0})[0], 0.0);
}

TEST(MilsteinStep, LargeNegativeIncrementFromHalf) {
    // The multiplicative correction dominates for |dW| >> sqrt(dt): the
    // update stays positive and no clipping occurs.
    const auto m = builtin_model("logistic");
    const double x = 0.5, dt = 0.001, dw = -2.0, s = 0.4;
    const double expected = x + x * (1 - x) * dt + s * x * dw + 0.5 * s * x * s * (dw * dw - dt);
    const double got = milstein_step(m, Vec{x}, Vec{0.0}, dt, Vec{dw})[0];
    EXPECT_NEAR(got, expected, 1e-15);
    EXPECT_GT(got, 0.0);
}

TEST(MilsteinStep, RejectsNonMultiplicativeModels) {
    const auto m = builtin_model("double_well");
    EXPECT_THROW(milstein_step(m, Vec{0.5}, Vec{0.0}, 0.01, Vec{0.1}), UnsupportedScheme);
    SimConfig sim{0.1, 0.01, 1.0, 1, Scheme::milstein};
    EXPECT_THROW(simulate_policy(m, sim, ConstantPolicy({0.0}), Vec{0.5}), UnsupportedScheme);
}

TEST(SimConfig, ValidatesDivisibility) {
    EXPECT_NO_THROW((SimConfig{0.41, 0.01, 4.1}.validate()));
    EXPECT_NO_THROW((SimConfig{0.1, 0.001, 0.0}.validate()));
    EXPECT_THROW((SimConfig{0.1, 0.03, 1.0}.validate()), InvalidConfig);
    EXPECT_THROW((SimConfig{0.1, 0.2, 1.0}.validate()), InvalidConfig);
    EXPECT_THROW((SimConfig{0.3, 0.1, 1.0}.validate()), InvalidConfig);
    EXPECT_THROW((SimConfig{0.1, 0.0, 1.0}.validate()), InvalidConfig);
    EXPECT_THROW((SimConfig{-0.1, 0.01, 1.0}.validate()), InvalidConfig);
    EXPECT_EQ((SimConfig{0.41, 0.01}.substeps()), 41u);
    EXPECT_EQ((SimConfig{0.1, 0.01, 2.5}.intervals()), 25u);
}

TEST(SampleTransition, EquilibriumWithoutNoise) {
    const auto m = builtin_model("double_well", {{"sigma", 0.0}});
    CounterRng rng(1, 0);
    const auto t = sample_transition(m, SimConfig{0.1, 0.01}, Vec{0.0}, Vec{0.0}, rng);
    EXPECT_EQ(t.x_next[0], 0.0);
    EXPECT_EQ(t.cost, 0.0);
}

TEST(SampleTransition, CostUsesIntervalStartState) {
    const auto m = builtin_model("double_well");
    CounterRng rng(3, 0);
    const auto t = sample_transition(m, SimConfig{0.25, 0.01}, Vec{0.8}, Vec{0.5}, rng);
    EXPECT_DOUBLE_EQ(t.cost, (0.64 + 0.1 * 0.25) * 0.25);
}

class OuTransition : public ::testing::TestWithParam<double> {};

TEST_P(OuTransition, ConditionalMomentsMatchClosedForm) {
    const double h = GetParam();
    const auto m = builtin_model("linear_ou");
    const SimConfig sim{h, 0.001};
    const int n = 100000;
    std::vector<double> xs(n);
    for (int r = 0; r < n; ++r) {
        CounterRng rng(2024, static_cast<std::uint32_t>(r));
        xs[r] = sample_transition(m, sim, Vec{1.0}, Vec{0.0}, rng).x_next[0];
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0, m4 = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
        m4 += std::pow(x - mean, 4);
    }
    var /= (n - 1);
    m4 /= n;
    const double exact_mean = oracle::ou_mean(1.0, 1.0, h);
    const double exact_var = oracle::ou_variance(1.0, 0.5, h);
    EXPECT_NEAR(mean, exact_mean, 3.0 * std::sqrt(var / n));
    EXPECT_NEAR(var, exact_var, 3.0 * std::sqrt((m4 - var * var) / n));
}

INSTANTIATE_TEST_SUITE_P(Intervals, OuTransition, ::testing::Values(0.1, 0.5));

TEST(SimulatePolicy, EquilibriumStaysPut) {
    const auto m = builtin_model("double_well", {{"sigma", 0.0}});
    const auto tr = simulate_policy(m, SimConfig{0.1, 0.01, 5.0, 1}, ConstantPolicy({0.0}), Vec{1.0});
    ASSERT_EQ(tr.states.size(), 51u);
    for (const auto& s : tr.states) EXPECT_DOUBLE_EQ(s[0], 1.0);
}

TEST(SimulatePolicy, ZeroHorizon) {
    const auto m = builtin_model("double_well");
    const auto tr = simulate_policy(m, SimConfig{0.1, 0.01, 0.0, 1}, ConstantPolicy({0.0}), Vec{0.3});
    ASSERT_EQ(tr.states.size(), 1u);
    EXPECT_EQ(tr.states[0][0], 0.3);
    EXPECT_TRUE(tr.controls.empty());
    EXPECT_EQ(tr.total_cost(), 0.0);
}

TEST(SimulatePolicy, SeededRunsAreBitwiseIdentical) {
    const auto m = builtin_model("double_well");
    const auto grid = build_action_grid(m.action_box, 5);
    const UniformRandomPolicy pol(grid);
    const SimConfig sim{0.1, 0.01, 20.0, 99};
    const auto a = simulate_policy(m, sim, pol, Vec{1.0}, 3);
    const auto b = simulate_policy(m, sim, pol, Vec{1.0}, 3);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.controls, b.controls);
    EXPECT_EQ(a.costs, b.costs);
    const auto c = simulate_policy(m, sim, pol, Vec{1.0}, 4);
    EXPECT_NE(a.states, c.states);
}

TEST(SimulatePolicy, ControlsHeldAndRecomputedFromQuantizedState) {
    const auto m = builtin_model("double_well");
    const StateQuantizer q(1, 2.8, 2);
    const auto grid = build_action_grid(m.action_box, 2);
    const QuantizedPolicy pol(q, grid, Policy{{1, 0, 0}});  // +0.5 left of 0, -0.5 right of 0 and outside
    const auto tr = simulate_policy(m, SimConfig{0.2, 0.01, 10.0, 5}, pol, Vec{1.0});
    ASSERT_EQ(tr.controls.size(), 50u);
    ASSERT_EQ(tr.costs.size(), 50u);
    ASSERT_EQ(tr.times.size(), 51u);
    for (std::size_t k = 0; k < tr.controls.size(); ++k) {
        const double expected = tr.states[k][0] < 0.0 && tr.states[k][0] >= -1.4 ? 0.5 : -0.5;
        EXPECT_EQ(tr.controls[k][0], expected);
        EXPECT_NEAR(tr.times[k + 1] - tr.times[k], 0.2, 1e-12);
    }
}

TEST(SimulatePolicy, LogisticStatesStayNonNegative) {
    const auto m = builtin_model("logistic");
    const auto grid = build_action_grid(m.action_box, 15);
    const auto tr =
        simulate_policy(m, SimConfig{0.1, 0.001, 50.0, 8, Scheme::milstein}, UniformRandomPolicy(grid), Vec{0.2});
    bool touched_zero = false;
    for (const auto& s : tr.states) {
        ASSERT_GE(s[0], 0.0);
        touched_zero = touched_zero || s[0] == 0.0;
    }
    EXPECT_TRUE(touched_zero);
}

TEST(AdvanceInterval, IntegralModeDiscountsWithinInterval) {
    // Noise-free double well parked at z = 1: running cost is identically 1.
    auto m = builtin_model("double_well", {{"sigma", 0.0}, {"R", 0.0}});
    const SimConfig start{0.5, 0.01, 0.0, 1, Scheme::euler_maruyama, CostMode::start_state};
    SimConfig integral = start;
    integral.cost_mode = CostMode::integral;
    CounterRng rng(1, 0);
    StepWorkspace ws(1);
    Vec x{1.0};
    EXPECT_DOUBLE_EQ(advance_interval(m, start, x, Vec{0.0}, rng, ws), 0.5);
    x = {1.0};
    EXPECT_NEAR(advance_interval(m, integral, x, Vec{0.0}, rng, ws), 0.5, 1e-12);
    x = {1.0};
    const double rate = 2.0;
    double expected = 0.0;
    for (int s = 0; s < 50; ++s) expected += std::exp(-rate * 0.01 * s) * 0.01;
    EXPECT_NEAR(advance_interval(m, integral, x, Vec{0.0}, rng, ws, rate), expected, 1e-12);
}
