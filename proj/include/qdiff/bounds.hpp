#pragma once

// Closed-form error bounds for the time- and space-discretized problem.
// The constants (K, C, lambda, alpha_c, K_T, C0, C1) are user supplied: the
// bounds are rate instruments, and reports always print them next to the
// value.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>

#include "qdiff/errors.hpp"
#include "qdiff/quantize.hpp"

namespace qdiff {

struct BoundParams {
    double K = 1.0;           ///< time-discretization constant (depends on sup|b|, sup|sigma|)
    double alpha_rate = 1.0;  ///< continuous discount rate
    double h = 0.1;
    double beta = std::exp(-0.1);  ///< must equal exp(-alpha_rate * h)
    std::size_t d = 1;
    double m = 2.0;       ///< Lyapunov exponent, V(x) = |x|^m
    double c_inf = 1.0;   ///< sup |c|
    double alpha_c = 1.0; ///< state-Lipschitz constant of c
    double K_T = 1.0;     ///< TV-Lipschitz constant without its h^{-1/2} factor
    double C_gauss = 1.0;
    double lambda_gauss = 1.0;
    double C0_lyap = 1.0;
    double C1_lyap = 1.0;
    double x0_norm_m = 1.0;  ///< |x0|^m
    double N = 1.0;          ///< cube side
    double M = 1.0;          ///< interior bin count

    /// Recomputes beta from alpha_rate and h.
    void sync_beta() noexcept { beta = std::exp(-alpha_rate * h); }

    void validate() const {
        if (!(h > 0.0)) throw InvalidConfig("bounds: h must be positive");
        if (!(alpha_rate > 0.0)) throw InvalidConfig("bounds: alpha_rate must be positive");
        const double expected = std::exp(-alpha_rate * h);
        if (std::abs(beta - expected) > 1e-12 * expected)
            throw InvalidConfig("bounds: beta must equal exp(-alpha_rate * h)");
        if (!(beta < 1.0)) throw InvalidConfig("bounds: beta must be < 1");
        if (d == 0) throw InvalidConfig("bounds: d must be >= 1");
        if (!(m >= 1.0)) throw InvalidConfig("bounds: m must be >= 1");
        if (!(N > 0.0)) throw InvalidConfig("bounds: N must be positive");
        if (!(M >= 1.0)) throw InvalidConfig("bounds: M must be >= 1");
        if (!(C_gauss >= 1.0)) throw InvalidConfig("bounds: C_gauss must be >= 1");
        if (!(lambda_gauss > 0.0 && lambda_gauss <= 1.0)) throw InvalidConfig("bounds: lambda_gauss must lie in (0, 1]");
        if (!(C1_lyap > 0.0)) throw InvalidConfig("bounds: C1_lyap must be positive");
    }
};

/// K h / (1 - e^{-alpha h}) * (h + sqrt(2h/pi)): gap between the diffusion
/// under a piecewise-constant control and its sampled chain.
inline double time_disc_bound(const BoundParams& p) {
    if (!(p.h > 0.0) || !(p.alpha_rate > 0.0) || !(p.K > 0.0))
        throw InvalidConfig("time_disc_bound: h, alpha_rate and K must be positive");
    const double denom = -std::expm1(-p.alpha_rate * p.h);
    return p.K * p.h / denom * (p.h + std::sqrt(2.0 * p.h / std::numbers::pi));
}

/// C sqrt(d) h^{-1/2} (pi / lambda)^{d/2}: Lipschitz constant of the
/// h-step kernel in total variation.
inline double tv_lipschitz_constant(const BoundParams& p) {
    if (!(p.h > 0.0)) throw InvalidConfig("tv_lipschitz_constant: h must be positive");
    const double dd = static_cast<double>(p.d);
    return p.C_gauss * std::sqrt(dd) / std::sqrt(p.h) * std::pow(std::numbers::pi / p.lambda_gauss, 0.5 * dd);
}

enum class DistanceMode {
    /// Mean in-cell distance bounded by the cell diameter delta sqrt(d).
    diameter_bound,
    /// Exact mean |x - y| for y uniform on the cell (d = 1 only).
    exact_1d,
};

struct LossProfile {
    double L_c = 0.0;
    double L_T = 0.0;
    double L = 0.0;
};

/// State-dependent losses: interior cells use alpha_c h D(x) for the cost
/// and K_T h^{-1/2} D(x) for the kernel, D(x) being the mean distance to
/// the cell; the overflow bin uses 2 c_inf h and 2. L = L_c + beta c_inf /
/// (1 - beta) L_T.
inline LossProfile loss_profile(const BoundParams& p, std::span<const double> x, const StateQuantizer& q,
                                DistanceMode mode = DistanceMode::diameter_bound) {
    if (x.size() != q.dim()) throw InvalidConfig("loss_profile: state has wrong dimension");
    if (!(p.beta < 1.0)) throw InvalidConfig("loss_profile: beta must be < 1");
    LossProfile out;
    const std::size_t bin = q.bin_of(x);
    if (bin == q.overflow_index()) {
        out.L_c = 2.0 * p.c_inf * p.h;
        out.L_T = 2.0;
    } else {
        double dist = q.uniform_loss();
        if (mode == DistanceMode::exact_1d) {
            if (q.dim() != 1) throw InvalidConfig("loss_profile: exact distance mode needs d = 1");
            const auto cell = q.cell(bin).front();
            const double l = x[0] - cell.lo;
            const double r = cell.hi - x[0];
            dist = (l * l + r * r) / (2.0 * cell.width());
        }
        out.L_c = p.alpha_c * p.h * dist;
        out.L_T = p.K_T / std::sqrt(p.h) * dist;
    }
    out.L = out.L_c + p.beta * p.c_inf / (1.0 - p.beta) * out.L_T;
    return out;
}

/// C_1(h, beta) = alpha_c h + beta c_inf / (1 - beta) K_T h^{-1/2}.
inline double interior_loss_constant(const BoundParams& p) {
    return p.alpha_c * p.h + p.beta * p.c_inf / (1.0 - p.beta) * p.K_T / std::sqrt(p.h);
}

/// C_2 = (2 c_inf h + 2 beta c_inf / (1 - beta)) max(|x0|^m, C0/C1).
inline double overflow_loss_constant(const BoundParams& p) {
    return (2.0 * p.c_inf * p.h + 2.0 * p.beta * p.c_inf / (1.0 - p.beta)) *
           std::max(p.x0_norm_m, p.C0_lyap / p.C1_lyap);
}

struct QuantizationBound {
    /// [C_1 N^d / M + C_2 (N/2)^{-m}] / (1 - beta)
    double general = 0.0;
    /// (C_1 + 2^m C_2) M^{-m/(d+m)} / (1 - beta), the value of `general` at N = M^{1/(d+m)}
    double collapsed = 0.0;
    double exponent = 0.0;  ///< -m / (d + m)
};

inline QuantizationBound quantization_bound(const BoundParams& p) {
    if (!(p.beta < 1.0)) throw InvalidConfig("quantization_bound: beta must be < 1");
    if (!(p.M >= 1.0)) throw InvalidConfig("quantization_bound: M must be >= 1");
    if (!(p.N > 0.0)) throw InvalidConfig("quantization_bound: N must be positive");
    const double dd = static_cast<double>(p.d);
    const double c1 = interior_loss_constant(p);
    const double c2 = overflow_loss_constant(p);
    QuantizationBound out;
    out.exponent = -p.m / (dd + p.m);
    out.general = (c1 * std::pow(p.N, dd) / p.M + c2 * std::pow(0.5 * p.N, -p.m)) / (1.0 - p.beta);
    out.collapsed = (c1 + std::pow(2.0, p.m) * c2) * std::pow(p.M, out.exponent) / (1.0 - p.beta);
    return out;
}

/// Cube side that balances the interior and overflow terms: N = M^{1/(d+m)}.
inline double balanced_side(double M, std::size_t d, double m) {
    return std::pow(M, 1.0 / (static_cast<double>(d) + m));
}

}  // namespace qdiff
