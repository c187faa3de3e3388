#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qdiff/bounds.hpp"
#include "qdiff/errors.hpp"
#include "qdiff/harness/config.hpp"
#include "qdiff/harness/reproduce.hpp"
#include "qdiff/harness/run.hpp"
#include "qdiff/io.hpp"

namespace fs = std::filesystem;
using namespace qdiff;
using namespace qdiff::harness;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Override the master seed");
    cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", c.out, "Output directory (default: $" + std::string(kOutputRootEnv) + "/<id>)");
}

ExperimentConfig load_with_overrides(const std::string& path, const Common& c) {
    auto cfg = load_config(path);
    if (c.seed) cfg.sim.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

int report(const RunManifest& man, const fs::path& dir) {
    for (const auto& s : man.stages)
        std::cout << (s.ok ? "ok     " : "FAILED ") << s.name << (s.ok ? "" : ": " + s.error) << '\n';
    for (const auto& t : man.trends)
        std::cout << (t.passed ? "trend  ok     " : "trend  FAILED ") << t.name << "  " << t.detail << '\n';
    for (const auto& f : man.files) std::cout << "wrote  " << (dir / f.name).string() << '\n';
    return man.ok() ? 0 : 1;
}

BoundParams bound_params_from(const json& j) {
    BoundParams p;
    auto num = [&](const char* key, double& dst) {
        if (j.contains(key)) dst = harness::detail::as_number(j.at(key), std::string("params.") + key);
    };
    double d = static_cast<double>(p.d);
    num("K", p.K);
    num("alpha_rate", p.alpha_rate);
    num("h", p.h);
    num("d", d);
    num("m", p.m);
    num("c_inf", p.c_inf);
    num("alpha_c", p.alpha_c);
    num("K_T", p.K_T);
    num("C_gauss", p.C_gauss);
    num("lambda_gauss", p.lambda_gauss);
    num("C0_lyap", p.C0_lyap);
    num("C1_lyap", p.C1_lyap);
    num("x0_norm_m", p.x0_norm_m);
    num("N", p.N);
    p.d = static_cast<std::size_t>(d);
    for (const auto& [k, _] : j.items()) {
        static const std::vector<std::string> known{"K",       "alpha_rate",   "h",       "d",       "m",
                                                    "c_inf",   "alpha_c",      "K_T",     "C_gauss", "lambda_gauss",
                                                    "C0_lyap", "C1_lyap",      "x0_norm_m", "N"};
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw InvalidConfig("config: unknown field 'params." + k + "'");
    }
    p.sync_beta();
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized Q-learning for sampled controlled diffusions"};
    app.require_subcommand(1);

    Common learn_opts, eval_opts, run_opts, sweep_opts, repro_opts, save_opts;
    std::string learn_cfg, eval_cfg, eval_qtable, run_cfg, sweep_cfg;

    auto* learn_cmd = app.add_subcommand("learn", "Learn a Q-table and persist it");
    learn_cmd->add_option("--config", learn_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    add_common(learn_cmd, learn_opts);

    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate the greedy policy of a saved Q-table");
    eval_cmd->add_option("--config", eval_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--qtable", eval_qtable, "Saved Q-table")->required()->check(CLI::ExistingFile);
    add_common(eval_cmd, eval_opts);

    auto* run_cmd = app.add_subcommand("run", "Learn, persist and evaluate in one go");
    run_cmd->add_option("--config", run_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    add_common(run_cmd, run_opts);

    auto* sweep_cmd = app.add_subcommand("sweep", "Vanishing-discount sweep over sweep.factors");
    sweep_cmd->add_option("--config", sweep_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    add_common(sweep_cmd, sweep_opts);

    std::string bounds_cfg, bounds_out;
    std::vector<double> bounds_m{10, 100, 1000, 10000};
    bool bounds_balanced = false;
    auto* bounds_cmd = app.add_subcommand("bounds", "Tabulate the discretization error bounds");
    bounds_cmd->add_option("--config", bounds_cfg, "JSON object {\"params\": {...}, \"M\": [...]}")
        ->check(CLI::ExistingFile);
    bounds_cmd->add_option("--M", bounds_m, "Interior bin counts to tabulate");
    bounds_cmd->add_flag("--balanced", bounds_balanced, "Use the balancing cube side N = M^(1/(d+m))");
    bounds_cmd->add_option("--out", bounds_out, "Output CSV (default: stdout)");

    std::string figure;
    bool quick = false;
    auto* repro_cmd = app.add_subcommand("reproduce", "Run a preset figure/table sweep");
    repro_cmd->add_option("figure_id", figure, "fig1|fig2|fig3|fig4|fig5|table1_sweep")
        ->required()
        ->check(CLI::IsMember({"fig1", "fig2", "fig3", "fig4", "fig5", "table1_sweep"}));
    repro_cmd->add_flag("--quick", quick, "Reduced steps and replicas");
    add_common(repro_cmd, repro_opts);

    auto* qt_cmd = app.add_subcommand("qtable", "Save, load or inspect persisted Q-tables");
    qt_cmd->require_subcommand(1);
    std::string save_cfg, save_path, load_path, load_cfg, inspect_path;
    auto* qt_save = qt_cmd->add_subcommand("save", "Learn from a config and write the Q-table");
    qt_save->add_option("--config", save_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    qt_save->add_option("path", save_path, "Destination file")->required();
    qt_save->add_option("--seed", save_opts.seed, "Override the master seed");
    auto* qt_load = qt_cmd->add_subcommand("load", "Load a Q-table, check it against a config, print its policy");
    qt_load->add_option("path", load_path, "Q-table file")->required()->check(CLI::ExistingFile);
    qt_load->add_option("--config", load_cfg, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    auto* qt_inspect = qt_cmd->add_subcommand("inspect", "Print a Q-table's descriptors and summary");
    qt_inspect->add_option("path", inspect_path, "Q-table file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*learn_cmd) {
            const auto cfg = load_with_overrides(learn_cfg, learn_opts);
            return report(run(cfg, learn_opts.threads, Stages::learn_only), cfg.output_path());
        }
        if (*run_cmd) {
            const auto cfg = load_with_overrides(run_cfg, run_opts);
            return report(run(cfg, run_opts.threads), cfg.output_path());
        }
        if (*eval_cmd) {
            const auto cfg = load_with_overrides(eval_cfg, eval_opts);
            return report(evaluate_saved(cfg, eval_qtable, eval_opts.threads), cfg.output_path());
        }
        if (*sweep_cmd) {
            const auto cfg = load_with_overrides(sweep_cfg, sweep_opts);
            return report(sweep(cfg, sweep_opts.threads), cfg.output_path());
        }
        if (*bounds_cmd) {
            BoundParams p;
            p.sync_beta();
            if (!bounds_cfg.empty()) {
                const auto j = json::parse(read_file(bounds_cfg));
                if (j.contains("params")) p = bound_params_from(j.at("params"));
                if (j.contains("M")) bounds_m = j.at("M").get<std::vector<double>>();
                if (j.contains("balanced")) bounds_balanced = j.at("balanced").get<bool>();
            }
            std::vector<BoundRow> rows;
            for (double M : bounds_m) {
                p.M = M;
                if (bounds_balanced) p.N = balanced_side(M, p.d, p.m);
                p.validate();
                const auto b = quantization_bound(p);
                rows.push_back({M, p.N, p.h, p.beta, b.general, b.collapsed, b.exponent});
            }
            const auto csv = bounds_csv(rows);
            if (bounds_out.empty()) std::cout << csv;
            else write_file(bounds_out, csv);
            std::cerr << "time-discretization bound at h = " << p.h << ": " << time_disc_bound(p) << '\n';
            return 0;
        }
        if (*repro_cmd) {
            PresetOptions po;
            if (repro_opts.seed) po.seed = *repro_opts.seed;
            po.threads = repro_opts.threads;
            po.quick = quick;
            if (!repro_opts.out.empty()) po.output_dir = repro_opts.out;
            const auto res = reproduce(figure, po);
            return report(res.manifest, po.output_dir.empty() ? output_root() / figure : po.output_dir);
        }
        if (*qt_save) {
            auto cfg = load_config(save_cfg);
            if (save_opts.seed) cfg.sim.seed = *save_opts.seed;
            const auto r = resolve(cfg);
            const auto learned = learn(cfg, r);
            save_qtable(save_path, learned.table, r.quantizer, r.grid);
            std::cout << "wrote  " << save_path << '\n';
            return 0;
        }
        if (*qt_load) {
            const auto cfg = load_config(load_cfg);
            const auto r = resolve(cfg);
            const auto saved = load_qtable(load_path, r.quantizer, r.grid);
            const auto policy = greedy_policy(saved.table);
            std::cout << "bin,representative,action\n";
            for (std::size_t s = 0; s < policy.size(); ++s) {
                const auto rep = saved.quantizer.representative(s);
                const auto act = saved.grid[policy[s]];
                std::cout << s << ',' << format_number(rep[0]) << ',' << format_number(act[0]) << '\n';
            }
            return 0;
        }
        if (*qt_inspect) {
            const auto saved = load_qtable(inspect_path);
            const auto& q = saved.quantizer;
            json j;
            j["dimension"] = q.dim();
            j["side"] = q.side();
            j["bins_per_axis"] = q.bins_per_axis();
            j["center"] = q.center();
            j["overflow_representative"] = q.overflow_representative();
            j["n_states"] = saved.table.n_states;
            j["n_actions"] = saved.table.n_actions;
            j["action_points"] = saved.grid.points;
            std::uint64_t visits = 0;
            for (auto v : saved.table.visits) visits += v;
            j["total_visits"] = visits;
            j["min_value"] = *std::min_element(saved.table.values.begin(), saved.table.values.end());
            j["max_value"] = *std::max_element(saved.table.values.begin(), saved.table.values.end());
            j["greedy_policy"] = greedy_policy(saved.table).action_index;
            std::cout << j.dump(2) << '\n';
            return 0;
        }
    } catch (const InvalidConfig& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NotFound& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
