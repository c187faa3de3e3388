#pragma once

// Uniform hypercube quantizer with a single overflow bin, and finite action
// grids.
//
// The truncation cube K = center + [-N/2, N/2]^d is split into k bins per
// axis, giving M = k^d interior cells of width delta = N/k. Interior cells
// carry indices 0..M-1 (axis 0 varies fastest); index M is the overflow bin
// holding everything outside K. Cells are lower-closed/upper-open except the
// last cell on each axis, which is closed, so the interior cells tile K
// exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qdiff/errors.hpp"

namespace qdiff {

using Vec = std::vector<double>;

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const noexcept { return hi - lo; }
    double mid() const noexcept { return 0.5 * (lo + hi); }
    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

class StateQuantizer {
public:
    /// `center` defaults to the origin. `overflow_rep` defaults to the center
    /// of the upper face of K along axis 0, i.e. center + (N/2) e_0.
    StateQuantizer(std::size_t d, double side, std::size_t bins_per_axis, Vec center = {},
                   std::optional<Vec> overflow_rep = std::nullopt)
        : d_(d), side_(side), k_(bins_per_axis), center_(std::move(center)) {
        if (d_ == 0) throw InvalidConfig("quantizer: dimension must be >= 1");
        if (!(side_ > 0.0) || !std::isfinite(side_)) throw InvalidConfig("quantizer: N must be positive");
        if (k_ == 0) throw InvalidConfig("quantizer: k must be >= 1");
        if (center_.empty()) center_.assign(d_, 0.0);
        if (center_.size() != d_) throw InvalidConfig("quantizer: center has wrong dimension");
        delta_ = side_ / static_cast<double>(k_);
        m_ = 1;
        for (std::size_t i = 0; i < d_; ++i) m_ *= k_;
        if (overflow_rep) {
            if (overflow_rep->size() != d_) throw InvalidConfig("quantizer: overflow representative has wrong dimension");
            overflow_rep_ = std::move(*overflow_rep);
        } else {
            overflow_rep_ = center_;
            overflow_rep_[0] += 0.5 * side_;
        }
    }

    std::size_t dim() const noexcept { return d_; }
    double side() const noexcept { return side_; }
    std::size_t bins_per_axis() const noexcept { return k_; }
    /// Number of interior cells M.
    std::size_t interior_count() const noexcept { return m_; }
    /// M + 1, counting the overflow bin.
    std::size_t size() const noexcept { return m_ + 1; }
    std::size_t overflow_index() const noexcept { return m_; }
    double width() const noexcept { return delta_; }
    const Vec& center() const noexcept { return center_; }
    const Vec& overflow_representative() const noexcept { return overflow_rep_; }

    double lower(std::size_t axis) const noexcept { return center_[axis] - 0.5 * side_; }
    double upper(std::size_t axis) const noexcept { return center_[axis] + 0.5 * side_; }

    /// Left edge of cell `i` along `axis`; edge(axis, k) is the upper face.
    double edge(std::size_t axis, std::size_t i) const noexcept {
        return i == k_ ? upper(axis) : lower(axis) + static_cast<double>(i) * delta_;
    }

    bool in_cube(std::span<const double> x) const noexcept {
        for (std::size_t a = 0; a < d_; ++a)
            if (!(x[a] >= lower(a) && x[a] <= upper(a))) return false;
        return true;
    }

    std::size_t bin_of(std::span<const double> x) const noexcept {
        std::size_t bin = 0;
        std::size_t stride = 1;
        for (std::size_t a = 0; a < d_; ++a) {
            const double xa = x[a];
            if (!(xa >= lower(a) && xa <= upper(a))) return m_;
            auto i = static_cast<std::size_t>(std::floor((xa - lower(a)) / delta_));
            i = std::min(i, k_ - 1);
            // Keep membership consistent with edge() under rounding.
            if (i > 0 && xa < edge(a, i)) --i;
            if (i + 1 < k_ && xa >= edge(a, i + 1)) ++i;
            bin += i * stride;
            stride *= k_;
        }
        return bin;
    }

    /// Per-axis cell coordinates of an interior bin.
    std::vector<std::size_t> cell_coords(std::size_t bin) const {
        if (bin >= m_) throw InvalidConfig("quantizer: bin is not an interior cell");
        std::vector<std::size_t> c(d_);
        for (std::size_t a = 0; a < d_; ++a) {
            c[a] = bin % k_;
            bin /= k_;
        }
        return c;
    }

    std::vector<Interval> cell(std::size_t bin) const {
        const auto c = cell_coords(bin);
        std::vector<Interval> box(d_);
        for (std::size_t a = 0; a < d_; ++a) box[a] = {edge(a, c[a]), edge(a, c[a] + 1)};
        return box;
    }

    Vec representative(std::size_t bin) const {
        if (bin == m_) return overflow_rep_;
        const auto box = cell(bin);
        Vec r(d_);
        for (std::size_t a = 0; a < d_; ++a) r[a] = box[a].mid();
        return r;
    }

    std::pair<std::size_t, Vec> quantize(std::span<const double> x) const {
        const auto b = bin_of(x);
        return {b, representative(b)};
    }

    /// Diameter of an interior cell, delta * sqrt(d).
    double uniform_loss() const noexcept { return delta_ * std::sqrt(static_cast<double>(d_)); }

    friend bool operator==(const StateQuantizer&, const StateQuantizer&) = default;

private:
    std::size_t d_;
    double side_;
    std::size_t k_;
    Vec center_;
    double delta_ = 0.0;
    std::size_t m_ = 0;
    Vec overflow_rep_;
};

inline StateQuantizer build_quantizer(std::size_t d, double side, std::size_t k,
                                      std::optional<Vec> overflow_rep = std::nullopt) {
    return StateQuantizer(d, side, k, {}, std::move(overflow_rep));
}

/// Quantizer whose cube is exactly `box` (same side on every axis).
inline StateQuantizer quantizer_for_box(const std::vector<Interval>& box, std::size_t k) {
    if (box.empty()) throw InvalidConfig("quantizer: empty box");
    const double side = box.front().width();
    Vec center(box.size());
    for (std::size_t a = 0; a < box.size(); ++a) {
        if (std::abs(box[a].width() - side) > 1e-12 * std::max(1.0, side))
            throw InvalidConfig("quantizer: box must be a cube");
        center[a] = box[a].mid();
    }
    return StateQuantizer(box.size(), side, k, std::move(center));
}

/// Finite action set U_h: a tensor grid over the action box.
struct ActionGrid {
    std::vector<Vec> points;
    std::vector<Interval> box;

    std::size_t size() const noexcept { return points.size(); }
    std::size_t dim() const noexcept { return box.size(); }
    std::span<const double> operator[](std::size_t i) const noexcept { return points[i]; }
    friend bool operator==(const ActionGrid&, const ActionGrid&) = default;
};

/// `n_u` evenly spaced points per axis, endpoints included when n_u >= 2;
/// a single point sits at the box midpoint.
inline ActionGrid build_action_grid(const std::vector<Interval>& box, std::size_t n_u) {
    if (n_u == 0) throw InvalidConfig("action grid: n_u must be >= 1");
    if (box.empty()) throw InvalidConfig("action grid: empty action box");
    for (const auto& iv : box)
        if (!(iv.hi >= iv.lo)) throw InvalidConfig("action grid: box interval with hi < lo");
    if (n_u >= 2)
        for (const auto& iv : box)
            if (!(iv.hi > iv.lo)) throw InvalidConfig("action grid: degenerate interval cannot hold distinct points");

    auto axis_point = [&](const Interval& iv, std::size_t i) {
        if (n_u == 1) return iv.mid();
        if (i + 1 == n_u) return iv.hi;
        return iv.lo + iv.width() * static_cast<double>(i) / static_cast<double>(n_u - 1);
    };

    ActionGrid grid;
    grid.box = box;
    std::size_t total = 1;
    for (std::size_t a = 0; a < box.size(); ++a) total *= n_u;
    grid.points.reserve(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vec p(box.size());
        std::size_t rem = flat;
        for (std::size_t a = 0; a < box.size(); ++a) {
            p[a] = axis_point(box[a], rem % n_u);
            rem /= n_u;
        }
        grid.points.push_back(std::move(p));
    }
    return grid;
}

}  // namespace qdiff
