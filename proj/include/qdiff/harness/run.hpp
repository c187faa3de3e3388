#pragma once

// Run orchestration: learn -> persist Q-table -> evaluate -> CSV, with a
// JSON manifest describing what was produced. Stage failures are recorded
// in the manifest rather than thrown.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"
#include "qdiff/harness/config.hpp"
#include "qdiff/io.hpp"
#include "qdiff/policy.hpp"
#include "qdiff/qlearn.hpp"
#include "qdiff/rng.hpp"

#ifndef QDIFF_VERSION
#define QDIFF_VERSION "0.1.0"
#endif
#ifndef QDIFF_GIT_DESCRIBE
#define QDIFF_GIT_DESCRIBE "unknown"
#endif

namespace qdiff::harness {

inline std::string artifact_version() { return std::string(QDIFF_VERSION) + "+" + QDIFF_GIT_DESCRIBE; }

/// Stage labels fed to derive_seed.
enum class StageSeed : std::uint64_t { learn = 1, evaluate = 2, sweep = 3, paths = 4 };

inline std::uint64_t stage_seed(std::uint64_t seed, StageSeed stage) {
    return derive_seed(seed, static_cast<std::uint64_t>(stage));
}

struct StageRecord {
    std::string name;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    double seconds = 0.0;
};

struct FileRecord {
    std::string name;
    std::uint64_t bytes = 0;
    std::string fnv1a;
};

struct TrendCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct RunManifest {
    std::string experiment_id;
    std::string config_hash;
    std::string version = artifact_version();
    json config = json::object();
    std::string source;
    double wall_clock_seconds = 0.0;
    std::vector<StageRecord> stages;
    std::vector<FileRecord> files;
    std::vector<TrendCheck> trends;

    bool ok() const noexcept {
        for (const auto& s : stages)
            if (!s.ok) return false;
        return true;
    }

    bool trends_hold() const noexcept {
        for (const auto& t : trends)
            if (!t.passed) return false;
        return true;
    }

    json to_json() const {
        json j;
        j["experiment_id"] = experiment_id;
        j["config_hash"] = config_hash;
        j["version"] = version;
        if (!source.empty()) j["source"] = source;
        j["wall_clock_seconds"] = wall_clock_seconds;
        j["ok"] = ok();
        json st = json::array();
        for (const auto& s : stages) {
            json e = {{"name", s.name}, {"seed", s.seed}, {"ok", s.ok}, {"seconds", s.seconds}};
            if (!s.ok) e["error"] = s.error;
            st.push_back(e);
        }
        j["stages"] = st;
        json fs = json::array();
        for (const auto& f : files) fs.push_back({{"name", f.name}, {"bytes", f.bytes}, {"fnv1a", f.fnv1a}});
        j["files"] = fs;
        if (!trends.empty()) {
            json ts = json::array();
            for (const auto& t : trends) ts.push_back({{"name", t.name}, {"passed", t.passed}, {"detail", t.detail}});
            j["trends"] = ts;
        }
        j["config"] = config;
        return j;
    }
};

/// Writes `bytes` under `dir` and records it in the manifest inventory.
inline void emit_file(RunManifest& man, const std::filesystem::path& dir, const std::string& name,
                      const std::string& bytes) {
    write_file(dir / name, bytes);
    man.files.push_back({name, bytes.size(), hex64(fnv1a(bytes))});
}

inline void write_manifest(const RunManifest& man, const std::filesystem::path& dir) {
    write_file(dir / "manifest.json", man.to_json().dump(2) + "\n");
}

/// Runs `body` as a named stage; returns false (and records the error) if
/// it throws.
template <class F>
bool run_stage(RunManifest& man, const std::string& name, std::uint64_t seed, F&& body) {
    StageRecord rec{name, seed, true, {}, 0.0};
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body();
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man.stages.push_back(std::move(rec));
    return man.stages.back().ok;
}

inline constexpr const char* kLearnCsvMagic = "#qdiff-learn,1";

inline std::string learn_csv(const LearnDiagnostics& d, std::size_t window) {
    std::ostringstream out;
    out << kLearnCsvMagic << "\nwindow,steps,sup_change,rho_hat\n";
    for (std::size_t i = 0; i < d.window_deltas.size(); ++i) {
        out << i << ',' << (i + 1) * window << ',' << format_number(d.window_deltas[i]) << ',';
        if (i < d.rho_series.size()) out << format_number(d.rho_series[i]);
        out << '\n';
    }
    return out.str();
}

inline LearnResult learn(const ExperimentConfig& cfg, const ResolvedExperiment& r) {
    LearnConfig lc = cfg.learning.config;
    lc.seed = stage_seed(cfg.sim.seed, StageSeed::learn);
    SimConfig sim = cfg.sim;
    sim.horizon = 0.0;
    sim.cost_mode = CostMode::start_state;
    return run_q_learning(r.model, sim, r.quantizer, r.grid, lc, cfg.variant(), r.learn_x0);
}

inline SimConfig evaluation_sim(const ExperimentConfig& cfg) {
    SimConfig sim = cfg.sim;
    sim.horizon = cfg.evaluation.horizon;
    sim.seed = stage_seed(cfg.sim.seed, StageSeed::evaluate);
    sim.cost_mode = cfg.evaluation.cost_mode;
    return sim;
}

inline EvalOptions evaluation_options(const ExperimentConfig& cfg, unsigned threads) {
    EvalOptions opt;
    opt.n_replicas = cfg.evaluation.n_replicas;
    opt.threads = threads;
    opt.burn_in_fraction = cfg.evaluation.burn_in_fraction;
    return opt;
}

inline CostEstimate evaluate_policy(const ExperimentConfig& cfg, const ResolvedExperiment& r, const Policy& policy,
                                    unsigned threads) {
    const QuantizedPolicy qp(r.quantizer, r.grid, policy);
    const auto sim = evaluation_sim(cfg);
    const auto opt = evaluation_options(cfg, threads);
    if (cfg.criterion == Criterion::discounted) return eval_discounted(r.model, sim, qp, r.eval_x0, cfg.alpha_rate(), opt);
    return eval_average(r.model, sim, qp, r.eval_x0, opt);
}

inline EvalRow make_row(const ExperimentConfig& cfg, const ResolvedExperiment& r, const CostEstimate& est,
                        double factor) {
    return {cfg.experiment_id, est.criterion, cfg.sim.h, r.quantizer.interior_count(), r.grid.size(), factor, est,
            cfg.sim.seed};
}

inline RunManifest begin_manifest(const ExperimentConfig& cfg) {
    RunManifest man;
    man.experiment_id = cfg.experiment_id;
    man.config = to_json(cfg);
    man.config_hash = config_hash(cfg);
    return man;
}

enum class Stages { learn_only, full };

/// learn -> qtable.bin (+ learn.csv), then, for Stages::full, evaluate the
/// greedy policy -> eval.csv. Writes manifest.json into the output dir.
inline RunManifest run(const ExperimentConfig& cfg, unsigned threads = 1, Stages stages = Stages::full) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest man = begin_manifest(cfg);
    const auto dir = cfg.output_path();
    std::optional<ResolvedExperiment> r;
    std::optional<LearnResult> learned;
    bool ok = run_stage(man, "resolve", cfg.sim.seed, [&] { r = resolve(cfg); });
    ok = ok && run_stage(man, "learn", stage_seed(cfg.sim.seed, StageSeed::learn), [&] {
        learned = learn(cfg, *r);
        emit_file(man, dir, "qtable.bin", encode_qtable(learned->table, r->quantizer, r->grid));
        emit_file(man, dir, "learn.csv", learn_csv(learned->diagnostics, cfg.learning.config.eval_window));
    });
    if (ok && stages == Stages::full) {
        run_stage(man, "evaluate", stage_seed(cfg.sim.seed, StageSeed::evaluate), [&] {
            const auto est = evaluate_policy(cfg, *r, learned->policy, threads);
            emit_file(man, dir, "eval.csv", eval_csv({make_row(cfg, *r, est, cfg.learning.config.beta_h)}));
        });
    }
    man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(man, dir);
    return man;
}

/// Evaluates a persisted Q-table's greedy policy under the config's
/// criterion. The table's descriptors must match the config.
inline RunManifest evaluate_saved(const ExperimentConfig& cfg, const std::filesystem::path& qtable_path,
                                  unsigned threads = 1) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest man = begin_manifest(cfg);
    const auto dir = cfg.output_path();
    run_stage(man, "evaluate", stage_seed(cfg.sim.seed, StageSeed::evaluate), [&] {
        const auto r = resolve(cfg);
        const auto saved = load_qtable(qtable_path, r.quantizer, r.grid);
        const auto est = evaluate_policy(cfg, r, greedy_policy(saved.table), threads);
        emit_file(man, dir, "eval.csv", eval_csv({make_row(cfg, r, est, cfg.learning.config.beta_h)}));
    });
    man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(man, dir);
    return man;
}

/// Vanishing-discount sweep over cfg.sweep_factors -> sweep.csv. Failing
/// factors are recorded as failed stages and omitted from the CSV.
inline RunManifest sweep(const ExperimentConfig& cfg, unsigned threads = 1) {
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest man = begin_manifest(cfg);
    const auto dir = cfg.output_path();
    std::optional<ResolvedExperiment> r;
    if (run_stage(man, "resolve", cfg.sim.seed, [&] {
            r = resolve(cfg);
            if (cfg.sweep_factors.empty()) throw InvalidConfig("config: missing required field 'sweep.factors'");
            if (!(cfg.evaluation.horizon > 0.0))
                throw InvalidConfig("config: field 'evaluation.horizon' must be > 0 for a sweep (average-cost evaluation)");
        })) {
        std::vector<SweepRow> rows;
        run_stage(man, "sweep", stage_seed(cfg.sim.seed, StageSeed::sweep), [&] {
            SweepSetup setup;
            setup.learn_sim = cfg.sim;
            setup.learn_sim.horizon = 0.0;
            setup.learn_sim.cost_mode = CostMode::start_state;
            setup.eval_sim = evaluation_sim(cfg);
            setup.learn = cfg.learning.config;
            setup.learn.seed = stage_seed(cfg.sim.seed, StageSeed::learn);
            setup.learn_x0 = r->learn_x0;
            setup.eval_x0 = r->eval_x0;
            setup.eval = evaluation_options(cfg, threads);
            rows = vanishing_discount_sweep(r->model, r->quantizer, r->grid, cfg.sweep_factors, setup);
        });
        std::vector<EvalRow> out;
        for (const auto& row : rows) {
            if (row.estimate) {
                out.push_back(make_row(cfg, *r, *row.estimate, row.factor));
            } else {
                man.stages.push_back({"sweep factor " + format_number(row.factor),
                                      stage_seed(cfg.sim.seed, StageSeed::sweep), false, row.error, 0.0});
            }
        }
        if (!rows.empty()) emit_file(man, dir, "sweep.csv", eval_csv(out));
    }
    man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(man, dir);
    return man;
}

}  // namespace qdiff::harness
