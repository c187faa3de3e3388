#pragma once

// Experiment configuration: JSON schema, validation and canonical echo.
//
//   {
//     "experiment_id": "dw-h0.1",
//     "model":      {"name": "double_well", "overrides": {"sigma": 0.5}},
//     "sim":        {"h": 0.1, "dt": 0.01, "seed": 7, "scheme": "euler_maruyama"},
//     "quantizer":  {"k": 12},
//     "actions":    {"n_u": 5},
//     "criterion":  "discounted",
//     "learning":   {"steps": 1000000, "beta_h": 0.95, "x0": [1.0]},
//     "evaluation": {"n_replicas": 100, "horizon": 0, "x0": [1.0]},
//     "sweep":      {"factors": [0.5, 0.9, 0.95]},
//     "output_dir": "out/dw"
//   }
//
// Unknown keys are rejected. Quantizer side and center default to the
// model's nominal state box, the action box to the model's action box.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"
#include "qdiff/io.hpp"
#include "qdiff/qlearn.hpp"
#include "qdiff/quantize.hpp"
#include "qdiff/sde.hpp"

namespace qdiff::harness {

using json = nlohmann::ordered_json;

inline constexpr const char* kOutputRootEnv = "QDIFF_OUTPUT_ROOT";
inline constexpr const char* kDefaultOutputRoot = "qdiff_out";

inline std::filesystem::path output_root() {
    if (const char* v = std::getenv(kOutputRootEnv); v && *v) return v;
    return kDefaultOutputRoot;
}

struct ModelSpec {
    std::string name;
    ModelOverrides overrides;
};

struct QuantizerSpec {
    std::size_t k = 0;
    std::optional<double> N;
    std::optional<Vec> center;
    std::optional<Vec> overflow_representative;
};

struct ActionSpec {
    std::size_t n_u = 0;
    std::optional<std::vector<Interval>> box;
};

struct LearningSpec {
    LearnConfig config;
    /// Defaults to the variant matching the evaluation criterion.
    std::optional<Variant> variant;
    Vec x0;
};

struct EvaluationSpec {
    std::size_t n_replicas = 0;
    double horizon = 0.0;
    std::optional<double> alpha_rate;
    double burn_in_fraction = 0.2;
    CostMode cost_mode = CostMode::start_state;
    Vec x0;
};

struct ExperimentConfig {
    std::string experiment_id;
    ModelSpec model;
    SimConfig sim;
    QuantizerSpec quantizer;
    ActionSpec actions;
    Criterion criterion = Criterion::discounted;
    LearningSpec learning;
    EvaluationSpec evaluation;
    std::vector<double> sweep_factors;
    std::string output_dir;
    unsigned threads = 1;

    Variant variant() const noexcept {
        if (learning.variant) return *learning.variant;
        return criterion == Criterion::discounted ? Variant::discounted : Variant::average;
    }

    /// Continuous discount rate used for discounted evaluation; defaults to
    /// the rate whose per-interval factor is learning.beta_h.
    double alpha_rate() const {
        if (evaluation.alpha_rate) return *evaluation.alpha_rate;
        return -std::log(learning.config.beta_h) / sim.h;
    }

    std::filesystem::path output_path() const {
        return output_dir.empty() ? output_root() / experiment_id : std::filesystem::path(output_dir);
    }
};

namespace detail {

inline std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw InvalidConfig("config: '" + (path_.empty() ? "<root>" : path_) + "' must be an object");
    }

    const json& require(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw InvalidConfig("config: missing required field '" + join(path_, key) + "'");
        return j_.at(key);
    }

    const json* optional(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string field(const std::string& key) const { return join(path_, key); }

    void reject_unknown() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw InvalidConfig("config: unknown field '" + join(path_, k) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline double as_number(const json& v, const std::string& field) {
    if (!v.is_number()) throw InvalidConfig("config: field '" + field + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t as_count(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    throw InvalidConfig("config: field '" + field + "' must be a non-negative integer");
}

inline std::string as_string(const json& v, const std::string& field) {
    if (!v.is_string()) throw InvalidConfig("config: field '" + field + "' must be a string");
    return v.get<std::string>();
}

inline Vec as_vec(const json& v, const std::string& field) {
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw InvalidConfig("config: field '" + field + "' must be a number array");
    Vec out;
    for (const auto& e : v) out.push_back(as_number(e, field));
    return out;
}

inline std::vector<Interval> as_box(const json& v, const std::string& field) {
    if (!v.is_array() || v.empty()) throw InvalidConfig("config: field '" + field + "' must be a list of [lo, hi] pairs");
    if (v.size() == 2 && v[0].is_number()) return {{as_number(v[0], field), as_number(v[1], field)}};
    std::vector<Interval> out;
    for (const auto& e : v) {
        if (!e.is_array() || e.size() != 2) throw InvalidConfig("config: field '" + field + "' must hold [lo, hi] pairs");
        out.push_back({as_number(e[0], field), as_number(e[1], field)});
    }
    return out;
}

inline json box_json(const std::vector<Interval>& box) {
    json out = json::array();
    for (const auto& iv : box) out.push_back({iv.lo, iv.hi});
    return out;
}

inline Scheme parse_scheme(const std::string& s, const std::string& field) {
    if (s == "euler_maruyama") return Scheme::euler_maruyama;
    if (s == "milstein") return Scheme::milstein;
    throw InvalidConfig("config: field '" + field + "' must be 'euler_maruyama' or 'milstein'");
}

inline CostMode parse_cost_mode(const std::string& s, const std::string& field) {
    if (s == "start_state") return CostMode::start_state;
    if (s == "integral") return CostMode::integral;
    throw InvalidConfig("config: field '" + field + "' must be 'start_state' or 'integral'");
}

}  // namespace detail

inline const char* to_string(Scheme s) noexcept { return s == Scheme::milstein ? "milstein" : "euler_maruyama"; }
inline const char* to_string(CostMode c) noexcept { return c == CostMode::integral ? "integral" : "start_state"; }
inline const char* to_string(Criterion c) noexcept { return c == Criterion::average ? "average" : "discounted"; }

inline ExperimentConfig parse_config(const json& root) {
    using namespace detail;
    ExperimentConfig cfg;
    Reader top(root, "");
    cfg.experiment_id = as_string(top.require("experiment_id"), "experiment_id");
    if (cfg.experiment_id.empty()) throw InvalidConfig("config: field 'experiment_id' must not be empty");

    {
        Reader r(top.require("model"), "model");
        cfg.model.name = as_string(r.require("name"), r.field("name"));
        if (const auto* ov = r.optional("overrides")) {
            if (!ov->is_object()) throw InvalidConfig("config: field 'model.overrides' must be an object");
            for (const auto& [k, v] : ov->items()) cfg.model.overrides[k] = as_number(v, "model.overrides." + k);
        }
        r.reject_unknown();
    }
    {
        Reader r(top.require("sim"), "sim");
        cfg.sim.h = as_number(r.require("h"), r.field("h"));
        cfg.sim.dt = as_number(r.require("dt"), r.field("dt"));
        cfg.sim.seed = as_count(r.require("seed"), r.field("seed"));
        if (const auto* v = r.optional("horizon")) cfg.sim.horizon = as_number(*v, r.field("horizon"));
        if (const auto* v = r.optional("scheme")) cfg.sim.scheme = parse_scheme(as_string(*v, r.field("scheme")), r.field("scheme"));
        r.reject_unknown();
    }
    {
        Reader r(top.require("quantizer"), "quantizer");
        cfg.quantizer.k = as_count(r.require("k"), r.field("k"));
        if (const auto* v = r.optional("N")) cfg.quantizer.N = as_number(*v, r.field("N"));
        if (const auto* v = r.optional("center")) cfg.quantizer.center = as_vec(*v, r.field("center"));
        if (const auto* v = r.optional("overflow_representative"))
            cfg.quantizer.overflow_representative = as_vec(*v, r.field("overflow_representative"));
        r.reject_unknown();
    }
    {
        Reader r(top.require("actions"), "actions");
        cfg.actions.n_u = as_count(r.require("n_u"), r.field("n_u"));
        if (const auto* v = r.optional("box")) cfg.actions.box = as_box(*v, r.field("box"));
        r.reject_unknown();
    }
    {
        const auto c = as_string(top.require("criterion"), "criterion");
        if (c == "discounted") cfg.criterion = Criterion::discounted;
        else if (c == "average") cfg.criterion = Criterion::average;
        else throw InvalidConfig("config: field 'criterion' must be 'discounted' or 'average'");
    }
    {
        Reader r(top.require("learning"), "learning");
        auto& l = cfg.learning.config;
        l.steps = as_count(r.require("steps"), r.field("steps"));
        if (const auto* v = r.optional("beta_h")) l.beta_h = as_number(*v, r.field("beta_h"));
        if (const auto* v = r.optional("delta")) l.delta = as_number(*v, r.field("delta"));
        if (const auto* v = r.optional("lr_horizon")) l.lr_horizon = as_number(*v, r.field("lr_horizon"));
        if (const auto* v = r.optional("lr_exponent")) l.lr_exponent = as_number(*v, r.field("lr_exponent"));
        if (const auto* v = r.optional("q_init")) l.q_init = as_number(*v, r.field("q_init"));
        if (const auto* v = r.optional("eval_window")) l.eval_window = as_count(*v, r.field("eval_window"));
        if (const auto* v = r.optional("early_stop_tol")) l.early_stop_tol = as_number(*v, r.field("early_stop_tol"));
        if (const auto* v = r.optional("reset_every")) l.reset_every = as_count(*v, r.field("reset_every"));
        if (const auto* v = r.optional("variant")) {
            const auto name = as_string(*v, r.field("variant"));
            if (name == "discounted") cfg.learning.variant = Variant::discounted;
            else if (name == "average") cfg.learning.variant = Variant::average;
            else throw InvalidConfig("config: field 'learning.variant' must be 'discounted' or 'average'");
        }
        if (const auto* v = r.optional("x0")) cfg.learning.x0 = as_vec(*v, r.field("x0"));
        r.reject_unknown();
    }
    {
        Reader r(top.require("evaluation"), "evaluation");
        auto& e = cfg.evaluation;
        e.n_replicas = as_count(r.require("n_replicas"), r.field("n_replicas"));
        e.horizon = as_number(r.require("horizon"), r.field("horizon"));
        if (const auto* v = r.optional("alpha_rate")) e.alpha_rate = as_number(*v, r.field("alpha_rate"));
        if (const auto* v = r.optional("burn_in_fraction")) e.burn_in_fraction = as_number(*v, r.field("burn_in_fraction"));
        if (const auto* v = r.optional("cost_mode"))
            e.cost_mode = parse_cost_mode(as_string(*v, r.field("cost_mode")), r.field("cost_mode"));
        if (const auto* v = r.optional("x0")) e.x0 = as_vec(*v, r.field("x0"));
        r.reject_unknown();
    }
    if (const auto* s = top.optional("sweep")) {
        Reader r(*s, "sweep");
        cfg.sweep_factors = as_vec(r.require("factors"), r.field("factors"));
        r.reject_unknown();
    }
    if (const auto* v = top.optional("output_dir")) cfg.output_dir = as_string(*v, "output_dir");
    if (const auto* v = top.optional("threads")) cfg.threads = static_cast<unsigned>(as_count(*v, "threads"));
    top.reject_unknown();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidConfig(std::string("config: not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFound("config file '" + path.string() + "' does not exist");
    return parse_config_text(read_file(path));
}

/// Everything a run needs, resolved from a config and checked for
/// consistency.
struct ResolvedExperiment {
    DiffusionModel model;
    StateQuantizer quantizer;
    ActionGrid grid;
    Vec learn_x0;
    Vec eval_x0;
};

inline ResolvedExperiment resolve(const ExperimentConfig& cfg) {
    auto model = builtin_model(cfg.model.name, cfg.model.overrides);
    SimConfig sim = cfg.sim;
    sim.horizon = 0.0;
    sim.validate();
    if (cfg.sim.scheme == Scheme::milstein && model.diffusion_kind != DiffusionKind::multiplicative)
        throw UnsupportedScheme("config: sim.scheme 'milstein' requires a multiplicative-noise model");
    cfg.learning.config.validate();
    if (cfg.quantizer.k == 0) throw InvalidConfig("config: field 'quantizer.k' must be >= 1");
    if (cfg.evaluation.n_replicas == 0) throw InvalidConfig("config: field 'evaluation.n_replicas' must be >= 1");
    if (!(cfg.evaluation.horizon >= 0.0)) throw InvalidConfig("config: field 'evaluation.horizon' must be >= 0");
    if (cfg.criterion == Criterion::average && !(cfg.evaluation.horizon > 0.0))
        throw InvalidConfig("config: field 'evaluation.horizon' must be > 0 for the average criterion");
    if (!(cfg.evaluation.burn_in_fraction >= 0.0 && cfg.evaluation.burn_in_fraction < 1.0))
        throw InvalidConfig("config: field 'evaluation.burn_in_fraction' must lie in [0, 1)");
    if (cfg.criterion == Criterion::discounted && !(cfg.alpha_rate() > 0.0))
        throw InvalidConfig("config: discounted evaluation needs a positive discount rate");

    const auto& box = model.state_box;
    const double side = cfg.quantizer.N.value_or(box.front().width());
    Vec center = cfg.quantizer.center.value_or(Vec{});
    if (!cfg.quantizer.center && !cfg.quantizer.N)
        for (const auto& iv : box) center.push_back(iv.mid());
    StateQuantizer q(model.state_dim, side, cfg.quantizer.k, center, cfg.quantizer.overflow_representative);
    auto grid = build_action_grid(cfg.actions.box.value_or(model.action_box), cfg.actions.n_u);
    if (grid.dim() != model.action_dim) throw InvalidConfig("config: field 'actions.box' has wrong dimension");

    auto default_x0 = [&] {
        Vec x;
        for (const auto& iv : box) x.push_back(iv.mid());
        return x;
    };
    Vec lx = cfg.learning.x0.empty() ? default_x0() : cfg.learning.x0;
    Vec ex = cfg.evaluation.x0.empty() ? lx : cfg.evaluation.x0;
    if (lx.size() != model.state_dim) throw InvalidConfig("config: field 'learning.x0' has wrong dimension");
    if (ex.size() != model.state_dim) throw InvalidConfig("config: field 'evaluation.x0' has wrong dimension");
    for (double f : cfg.sweep_factors)
        if (!(f > 0.0 && f < 1.0)) throw InvalidConfig("config: field 'sweep.factors' entries must lie in (0, 1)");
    return {std::move(model), std::move(q), std::move(grid), std::move(lx), std::move(ex)};
}

/// Canonical echo with every default filled in.
inline json to_json(const ExperimentConfig& cfg) {
    using detail::box_json;
    json j;
    j["experiment_id"] = cfg.experiment_id;
    json ov = json::object();
    for (const auto& [k, v] : cfg.model.overrides) ov[k] = v;
    j["model"] = {{"name", cfg.model.name}, {"overrides", ov}};
    j["sim"] = {{"h", cfg.sim.h},
                {"dt", cfg.sim.dt},
                {"horizon", cfg.sim.horizon},
                {"seed", cfg.sim.seed},
                {"scheme", to_string(cfg.sim.scheme)}};
    json q = {{"k", cfg.quantizer.k}};
    if (cfg.quantizer.N) q["N"] = *cfg.quantizer.N;
    if (cfg.quantizer.center) q["center"] = *cfg.quantizer.center;
    if (cfg.quantizer.overflow_representative) q["overflow_representative"] = *cfg.quantizer.overflow_representative;
    j["quantizer"] = q;
    json a = {{"n_u", cfg.actions.n_u}};
    if (cfg.actions.box) a["box"] = box_json(*cfg.actions.box);
    j["actions"] = a;
    j["criterion"] = to_string(cfg.criterion);
    const auto& l = cfg.learning.config;
    json lj = {{"steps", l.steps},
               {"variant", cfg.variant() == Variant::discounted ? "discounted" : "average"},
               {"beta_h", l.beta_h},
               {"lr_exponent", l.lr_exponent},
               {"q_init", l.q_init},
               {"eval_window", l.eval_window},
               {"early_stop_tol", l.early_stop_tol},
               {"reset_every", l.reset_every}};
    if (l.delta) lj["delta"] = *l.delta;
    if (l.lr_horizon) lj["lr_horizon"] = *l.lr_horizon;
    if (!cfg.learning.x0.empty()) lj["x0"] = cfg.learning.x0;
    j["learning"] = lj;
    const auto& e = cfg.evaluation;
    json ej = {{"n_replicas", e.n_replicas},
               {"horizon", e.horizon},
               {"burn_in_fraction", e.burn_in_fraction},
               {"cost_mode", to_string(e.cost_mode)}};
    if (e.alpha_rate) ej["alpha_rate"] = *e.alpha_rate;
    if (!e.x0.empty()) ej["x0"] = e.x0;
    j["evaluation"] = ej;
    if (!cfg.sweep_factors.empty()) j["sweep"] = {{"factors", cfg.sweep_factors}};
    if (!cfg.output_dir.empty()) j["output_dir"] = cfg.output_dir;
    return j;
}

/// Hash of the canonical echo minus output_dir, so the same experiment
/// written to different places shares a hash.
inline std::string config_hash(const ExperimentConfig& cfg) {
    auto j = to_json(cfg);
    j.erase("output_dir");
    return hex64(fnv1a(j.dump()));
}

}  // namespace qdiff::harness
