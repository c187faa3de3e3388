#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/rng.hpp"

namespace qdiff {

/// Anything that maps an observed state to an action. The rng is the
/// caller's policy stream; deterministic policies ignore it.
template <class P>
concept ControlPolicy = requires(const P& p, std::span<const double> x, CounterRng& rng) {
    { p.act(x, rng) } -> std::convertible_to<std::span<const double>>;
};

/// Action index per quantizer bin.
struct Policy {
    std::vector<std::size_t> action_index;

    std::size_t size() const noexcept { return action_index.size(); }
    std::size_t operator[](std::size_t bin) const noexcept { return action_index[bin]; }
    friend bool operator==(const Policy&, const Policy&) = default;
};

/// gamma(phi(x)): quantize the state, then look up the bin's action.
class QuantizedPolicy {
public:
    QuantizedPolicy(StateQuantizer q, ActionGrid grid, Policy policy)
        : q_(std::move(q)), grid_(std::move(grid)), policy_(std::move(policy)) {
        if (policy_.size() != q_.size()) throw InvalidConfig("policy size does not match quantizer bin count");
        for (auto a : policy_.action_index)
            if (a >= grid_.size()) throw InvalidConfig("policy action index out of range");
    }

    std::span<const double> act(std::span<const double> x, CounterRng&) const noexcept {
        return grid_[policy_[q_.bin_of(x)]];
    }

    const StateQuantizer& quantizer() const noexcept { return q_; }
    const ActionGrid& grid() const noexcept { return grid_; }
    const Policy& table() const noexcept { return policy_; }

private:
    StateQuantizer q_;
    ActionGrid grid_;
    Policy policy_;
};

class ConstantPolicy {
public:
    explicit ConstantPolicy(Vec u) : u_(std::move(u)) {}
    std::span<const double> act(std::span<const double>, CounterRng&) const noexcept { return u_; }

private:
    Vec u_;
};

/// Pure random exploration: a uniformly drawn grid action per call.
class UniformRandomPolicy {
public:
    explicit UniformRandomPolicy(ActionGrid grid) : grid_(std::move(grid)) {}
    std::span<const double> act(std::span<const double>, CounterRng& rng) const noexcept {
        return grid_[rng.index(grid_.size())];
    }

private:
    ActionGrid grid_;
};

}  // namespace qdiff
