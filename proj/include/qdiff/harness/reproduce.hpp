#pragma once

// Preset sweeps for the double-well and logistic studies. Each preset
// writes one CSV per curve, a trends.json report and a manifest into its
// output directory.
//
//   fig1         double-well, average cost of the learned policy per (h, n_x, n_u)
//   fig2         double-well, vanishing-discount sweep at h = 0.1
//   fig3         logistic, discounted cost of the learned policy per (h, n_x, n_u)
//   fig4         logistic, mean state paths per h plus the zero-control baseline
//   fig5         logistic, vanishing-discount sweep at h = 0.1
//   table1_sweep the (h, n_x, n_u) table and the resolved grid geometry

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qdiff/errors.hpp"
#include "qdiff/evaluate.hpp"
#include "qdiff/harness/config.hpp"
#include "qdiff/harness/run.hpp"
#include "qdiff/io.hpp"
#include "qdiff/parallel.hpp"
#include "qdiff/policy.hpp"

namespace qdiff::harness {

struct GridPair {
    double h;
    std::size_t n_x;
    std::size_t n_u;
};

inline constexpr std::array<GridPair, 5> kBinTable{{
    {0.41, 2, 5},
    {0.33, 4, 7},
    {0.25, 6, 9},
    {0.18, 9, 12},
    {0.10, 12, 15},
}};

inline constexpr std::array<double, 6> kDiscountFactors{0.5, 0.6, 0.7, 0.8, 0.9, 0.95};

/// The quoted discount 0.95 read as the per-interval factor at h = 0.1.
inline constexpr double kReferenceFactor = 0.95;
inline constexpr double kReferenceH = 0.1;

inline double reference_rate() { return -std::log(kReferenceFactor) / kReferenceH; }

/// Per-interval factor exp(-alpha h) for the shared reference rate.
inline double reference_factor(double h) { return std::exp(-reference_rate() * h); }

/// Smallest whole number of h-intervals covering T.
inline double whole_intervals(double T, double h) { return std::ceil(T / h - 1e-9) * h; }

inline constexpr std::array<std::string_view, 6> kFigureIds{"fig1", "fig2", "fig3", "fig4", "fig5", "table1_sweep"};

struct PresetOptions {
    std::uint64_t seed = 1;
    unsigned threads = 1;
    /// Ten times fewer learning steps and fewer replicas; for smoke runs.
    bool quick = false;
    /// Defaults to <output root>/<figure id>.
    std::filesystem::path output_dir;
};

struct ReproduceResult {
    RunManifest manifest;
    std::vector<EvalRow> rows;
    std::vector<std::pair<std::string, PathStatistic>> paths;
};

inline ExperimentConfig double_well_preset(const std::string& id, const GridPair& g, std::uint64_t seed,
                                           const PresetOptions& opt) {
    ExperimentConfig cfg;
    cfg.experiment_id = id;
    cfg.model.name = "double_well";
    cfg.sim.h = g.h;
    cfg.sim.dt = 0.01;
    cfg.sim.seed = seed;
    cfg.quantizer.k = g.n_x;
    cfg.actions.n_u = g.n_u;
    cfg.criterion = Criterion::average;
    cfg.learning.variant = Variant::discounted;
    cfg.learning.config.steps = opt.quick ? 200'000 : 2'000'000;
    cfg.learning.config.beta_h = reference_factor(g.h);
    cfg.learning.config.early_stop_tol = 0.0;
    cfg.learning.x0 = {1.0};
    cfg.evaluation.n_replicas = opt.quick ? 40 : 400;
    cfg.evaluation.horizon = whole_intervals(opt.quick ? 50.0 : 200.0, g.h);
    cfg.evaluation.x0 = {1.0};
    return cfg;
}

inline ExperimentConfig logistic_preset(const std::string& id, const GridPair& g, Criterion criterion,
                                        std::uint64_t seed, const PresetOptions& opt) {
    ExperimentConfig cfg;
    cfg.experiment_id = id;
    cfg.model.name = "logistic";
    cfg.sim.h = g.h;
    cfg.sim.dt = 0.001;
    cfg.sim.scheme = Scheme::milstein;
    cfg.sim.seed = seed;
    cfg.quantizer.k = g.n_x;
    cfg.actions.n_u = g.n_u;
    cfg.criterion = criterion;
    cfg.learning.variant = Variant::discounted;
    cfg.learning.config.steps = opt.quick ? 100'000 : 1'000'000;
    cfg.learning.config.beta_h = reference_factor(g.h);
    cfg.learning.config.early_stop_tol = 0.0;
    cfg.learning.x0 = {1.0};
    cfg.evaluation.n_replicas = opt.quick ? 40 : 400;
    cfg.evaluation.horizon = criterion == Criterion::average ? whole_intervals(opt.quick ? 20.0 : 50.0, g.h) : 0.0;
    cfg.evaluation.alpha_rate = reference_rate();
    cfg.evaluation.x0 = {1.0};
    return cfg;
}

namespace detail {

inline std::string h_label(double h) {
    std::ostringstream s;
    s << "h" << h;
    return s.str();
}

inline constexpr const char* kPathCsvMagic = "#qdiff-path,1";

inline std::string path_csv(const PathStatistic& p) {
    std::ostringstream out;
    out << kPathCsvMagic << "\nt,mean,std_error\n";
    for (std::size_t i = 0; i < p.times.size(); ++i)
        out << format_number(p.times[i]) << ',' << format_number(p.mean[i]) << ',' << format_number(p.std_error[i])
            << '\n';
    return out.str();
}

inline std::string describe(const CostEstimate& e) {
    std::ostringstream s;
    s.precision(6);
    s << e.mean << " [" << e.ci_low() << ", " << e.ci_high() << "]";
    return s.str();
}

inline TrendCheck separated(const std::string& name, const std::string& lo_label, const CostEstimate& lo,
                            const std::string& hi_label, const CostEstimate& hi) {
    return {name, ci_separated_below(lo, hi), lo_label + " " + describe(lo) + " vs " + hi_label + " " + describe(hi)};
}

inline std::string trends_json(const std::vector<TrendCheck>& trends) {
    json ts = json::array();
    for (const auto& t : trends) ts.push_back({{"name", t.name}, {"passed", t.passed}, {"detail", t.detail}});
    return ts.dump(2) + "\n";
}

struct PointOutcome {
    StageRecord stage;
    std::optional<EvalRow> row;
    std::string qtable;
};

/// Learns and evaluates one preset config per grid point, in parallel.
inline std::vector<PointOutcome> run_points(const std::vector<ExperimentConfig>& cfgs, unsigned threads) {
    std::vector<PointOutcome> out(cfgs.size());
    parallel_for(cfgs.size(), threads, [&](std::size_t i) {
        const auto& cfg = cfgs[i];
        auto& o = out[i];
        o.stage = {cfg.experiment_id, cfg.sim.seed, true, {}, 0.0};
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const auto r = resolve(cfg);
            const auto learned = learn(cfg, r);
            o.qtable = encode_qtable(learned.table, r.quantizer, r.grid);
            o.row = make_row(cfg, r, evaluate_policy(cfg, r, learned.policy, 1), cfg.learning.config.beta_h);
        } catch (const std::exception& e) {
            o.stage.ok = false;
            o.stage.error = e.what();
        }
        o.stage.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    return out;
}

inline std::uint64_t point_seed(std::uint64_t seed, std::size_t i) { return derive_seed(seed, 100 + i); }

}  // namespace detail

inline ReproduceResult reproduce(std::string_view figure_id, PresetOptions opt = {}) {
    bool known = false;
    for (auto id : kFigureIds) known = known || id == figure_id;
    if (!known) throw NotFound("unknown figure id '" + std::string(figure_id) + "'");
    const std::string fid(figure_id);
    const auto dir = opt.output_dir.empty() ? output_root() / fid : opt.output_dir;
    const auto t0 = std::chrono::steady_clock::now();

    ReproduceResult res;
    auto& man = res.manifest;
    man.experiment_id = fid;
    json cfg_echo = {{"figure_id", fid}, {"seed", opt.seed}, {"quick", opt.quick}, {"points", json::array()}};

    auto collect = [&](const std::vector<ExperimentConfig>& cfgs, const std::string& csv_name) {
        for (const auto& c : cfgs) cfg_echo["points"].push_back(to_json(c));
        auto outcomes = detail::run_points(cfgs, opt.threads);
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            man.stages.push_back(outcomes[i].stage);
            if (outcomes[i].row) res.rows.push_back(*outcomes[i].row);
            if (!outcomes[i].qtable.empty()) emit_file(man, dir, cfgs[i].experiment_id + ".qtable", outcomes[i].qtable);
        }
        emit_file(man, dir, csv_name, eval_csv(res.rows));
        return res.rows.size() == cfgs.size();
    };

    auto sweep_preset = [&](const ExperimentConfig& cfg) {
        cfg_echo["points"].push_back(to_json(cfg));
        const auto r = resolve(cfg);
        SweepSetup setup;
        setup.learn_sim = cfg.sim;
        setup.learn = cfg.learning.config;
        setup.learn.seed = stage_seed(cfg.sim.seed, StageSeed::learn);
        setup.learn_x0 = r.learn_x0;
        setup.eval_sim = evaluation_sim(cfg);
        setup.eval_x0 = r.eval_x0;
        setup.eval = evaluation_options(cfg, opt.threads);
        const auto rows = vanishing_discount_sweep(r.model, r.quantizer, r.grid, kDiscountFactors, setup);
        for (const auto& row : rows) {
            StageRecord st{cfg.experiment_id + "-f" + format_number(row.factor), cfg.sim.seed, row.estimate.has_value(),
                           row.error, 0.0};
            man.stages.push_back(st);
            if (row.estimate) {
                auto er = make_row(cfg, r, *row.estimate, row.factor);
                res.rows.push_back(er);
            }
        }
        emit_file(man, dir, fid + ".csv", eval_csv(res.rows));
        if (res.rows.size() == kDiscountFactors.size())
            man.trends.push_back(detail::separated("factor 0.95 below factor 0.5 (95% CI separated)", "0.95",
                                                   res.rows.back().estimate, "0.5", res.rows.front().estimate));
        else
            man.trends.push_back({"factor 0.95 below factor 0.5 (95% CI separated)", false, "sweep incomplete"});
    };

    if (fid == "fig1" || fid == "fig3") {
        const bool dw = fid == "fig1";
        man.source = dw ? "h grid and (n_x, n_u) pairs from the published bin-count table; state box [-1.4, 1.4], "
                          "action box [-0.5, 0.5], Q = 1, R = 0.1 from the double-well study; sigma = 0.5 and "
                          "dt = 0.01 are artifact defaults; discount 0.95 read as the per-interval factor at h = 0.1"
                        : "h grid and (n_x, n_u) pairs from the published bin-count table; state box [0, 2], action "
                          "box [-5, 5], r = 1, K = 1, sigma = 0.4, Q = 10, R = 1, dt = 0.001, Milstein from the "
                          "logistic study; discount 0.95 read as the per-interval factor at h = 0.1";
        std::vector<ExperimentConfig> cfgs;
        for (std::size_t i = 0; i < kBinTable.size(); ++i) {
            const auto id = fid + "-" + detail::h_label(kBinTable[i].h);
            cfgs.push_back(dw ? double_well_preset(id, kBinTable[i], detail::point_seed(opt.seed, i), opt)
                              : logistic_preset(id, kBinTable[i], Criterion::discounted, detail::point_seed(opt.seed, i),
                                                opt));
        }
        const std::string name = "finest grid below coarsest grid (95% CI separated)";
        if (collect(cfgs, fid + ".csv"))
            man.trends.push_back(detail::separated(name, "h=0.1", res.rows.back().estimate, "h=0.41",
                                                   res.rows.front().estimate));
        else
            man.trends.push_back({name, false, "sweep incomplete"});
    } else if (fid == "fig2") {
        man.source = "factors {0.5, 0.6, 0.7, 0.8, 0.9, 0.95} and h = 0.1 with its (12, 15) grid from the published "
                     "vanishing-discount study; double-well constants as in fig1";
        sweep_preset(double_well_preset("fig2", kBinTable.back(), detail::point_seed(opt.seed, 0), opt));
    } else if (fid == "fig5") {
        man.source = "factors {0.5, 0.6, 0.7, 0.8, 0.9, 0.95} and h = 0.1 with its (12, 15) grid from the published "
                     "vanishing-discount study; logistic constants as in fig3";
        sweep_preset(logistic_preset("fig5", kBinTable.back(), Criterion::average, detail::point_seed(opt.seed, 0), opt));
    } else if (fid == "fig4") {
        man.source = "logistic constants and bin table as in fig3; paths start at the carrying capacity x0 = 1 and "
                     "are compared against the target K/2 = 0.5";
        std::vector<ExperimentConfig> cfgs;
        for (std::size_t i = 0; i < kBinTable.size(); ++i)
            cfgs.push_back(logistic_preset("fig4-" + detail::h_label(kBinTable[i].h), kBinTable[i], Criterion::average,
                                           detail::point_seed(opt.seed, i), opt));
        for (const auto& c : cfgs) cfg_echo["points"].push_back(to_json(c));

        struct Curve {
            StageRecord stage;
            std::optional<PathStatistic> path;
            std::optional<CostEstimate> abs_dev;
            std::optional<CostEstimate> mean_state;
            std::string qtable;
        };
        const std::size_t n = cfgs.size() + 1;
        std::vector<Curve> curves(n);
        const auto abs_dev = [](std::span<const double> x) { return std::abs(x[0] - 0.5); };
        const auto state = [](std::span<const double> x) { return x[0]; };
        parallel_for(n, opt.threads, [&](std::size_t i) {
            const bool zero = i == cfgs.size();
            const auto& cfg = zero ? cfgs.back() : cfgs[i];
            auto& c = curves[i];
            c.stage = {zero ? std::string("fig4-zero") : cfg.experiment_id, cfg.sim.seed, true, {}, 0.0};
            const auto t_start = std::chrono::steady_clock::now();
            try {
                const auto r = resolve(cfg);
                SimConfig sim = evaluation_sim(cfg);
                sim.horizon = whole_intervals(20.0, cfg.sim.h);
                sim.seed = stage_seed(opt.seed, StageSeed::paths);
                EvalOptions eo = evaluation_options(cfg, 1);
                auto run_with = [&](const auto& policy) {
                    c.path = mean_path(r.model, sim, policy, r.eval_x0, eo, state);
                    c.abs_dev = eval_time_average(r.model, sim, policy, r.eval_x0, eo, abs_dev);
                    c.mean_state = eval_time_average(r.model, sim, policy, r.eval_x0, eo, state);
                };
                if (zero) {
                    run_with(ConstantPolicy({0.0}));
                } else {
                    const auto learned = learn(cfg, r);
                    c.qtable = encode_qtable(learned.table, r.quantizer, r.grid);
                    run_with(QuantizedPolicy(r.quantizer, r.grid, learned.policy));
                }
            } catch (const std::exception& e) {
                c.stage.ok = false;
                c.stage.error = e.what();
            }
            c.stage.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        });
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = curves[i];
            man.stages.push_back(c.stage);
            if (!c.path) continue;
            const bool zero = i == cfgs.size();
            const auto& cfg = zero ? cfgs.back() : cfgs[i];
            const std::string label = zero ? "fig4-zero" : cfg.experiment_id;
            if (!c.qtable.empty()) emit_file(man, dir, label + ".qtable", c.qtable);
            emit_file(man, dir, label + ".csv", detail::path_csv(*c.path));
            res.paths.emplace_back(label, *c.path);
            const std::size_t M = zero ? 0 : cfg.quantizer.k;
            const std::size_t nu = zero ? 1 : cfg.actions.n_u;
            res.rows.push_back({label + "-absdev", Criterion::average, cfg.sim.h, M, nu, 0.0, *c.abs_dev, cfg.sim.seed});
            res.rows.push_back({label + "-state", Criterion::average, cfg.sim.h, M, nu, 0.0, *c.mean_state, cfg.sim.seed});
        }
        emit_file(man, dir, "fig4_summary.csv", eval_csv(res.rows));
        const auto& finest = curves[cfgs.size() - 1];
        const auto& zero = curves.back();
        if (finest.abs_dev && zero.abs_dev) {
            man.trends.push_back({"finest policy keeps |X - 0.5| below zero control",
                                  finest.abs_dev->mean < zero.abs_dev->mean,
                                  "learned " + detail::describe(*finest.abs_dev) + " vs zero control " +
                                      detail::describe(*zero.abs_dev)});
            const double ms = zero.mean_state->mean;
            man.trends.push_back({"zero-control mean state in [0.8, 1.1]", ms >= 0.8 && ms <= 1.1,
                                  "mean state " + detail::describe(*zero.mean_state)});
        } else {
            man.trends.push_back({"finest policy keeps |X - 0.5| below zero control", false, "curves incomplete"});
        }
    } else {
        man.source = "(h, n_x, n_u) rows from the published bin-count table; geometry resolved for both study models";
        std::ostringstream csv;
        csv << "#qdiff-table1,1\nh,n_x,n_u,M,n_states,n_actions,double_well_bin_width,logistic_bin_width,"
               "double_well_substeps,logistic_substeps\n";
        std::size_t rows = 0;
        bool monotone = true;
        for (std::size_t i = 0; i < kBinTable.size(); ++i) {
            const auto& g = kBinTable[i];
            if (i > 0) monotone = monotone && g.h < kBinTable[i - 1].h && g.n_x > kBinTable[i - 1].n_x &&
                                  g.n_u > kBinTable[i - 1].n_u;
            const auto dw_cfg = double_well_preset("dw", g, 0, opt);
            const auto lg_cfg = logistic_preset("logistic", g, Criterion::discounted, 0, opt);
            cfg_echo["points"].push_back(to_json(dw_cfg));
            cfg_echo["points"].push_back(to_json(lg_cfg));
            const auto dw = resolve(dw_cfg);
            const auto lg = resolve(lg_cfg);
            csv << format_number(g.h) << ',' << g.n_x << ',' << g.n_u << ',' << dw.quantizer.interior_count() << ','
                << dw.quantizer.size() << ',' << dw.grid.size() << ',' << format_number(dw.quantizer.width()) << ','
                << format_number(lg.quantizer.width()) << ',' << dw_cfg.sim.substeps() << ','
                << lg_cfg.sim.substeps() << '\n';
            ++rows;
        }
        man.stages.push_back({"table1", opt.seed, true, {}, 0.0});
        emit_file(man, dir, "table1.csv", csv.str());
        man.trends.push_back({"five table rows", rows == kBinTable.size(), std::to_string(rows) + " rows"});
        man.trends.push_back({"h decreases while n_x and n_u increase", monotone, ""});
    }

    man.config = cfg_echo;
    man.config_hash = hex64(fnv1a(cfg_echo.dump()));
    emit_file(man, dir, "trends.json", detail::trends_json(man.trends));
    man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(man, dir);
    return res;
}

}  // namespace qdiff::harness
