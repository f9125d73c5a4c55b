#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ductnav/checkpoint.hpp"
#include "ductnav/config.hpp"
#include "ductnav/error.hpp"
#include "ductnav/eval.hpp"
#include "ductnav/geom.hpp"
#include "ductnav/train.hpp"

namespace fs = std::filesystem;
using namespace ductnav;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4 };

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string algo;
    std::optional<int> episodes;
    std::optional<int> iterations;
    std::vector<std::string> checkpoints;
    bool obj = false;
    bool trajectories = false;
    bool fresh = false;
};

config::RunConfig resolve_config(const Flags& f) {
    config::RunConfig cfg = f.config.empty() ? config::RunConfig{} : config::load_config(f.config);
    std::vector<std::pair<std::string, std::string>> kv;
    if (f.seed) kv.emplace_back("run.seed", std::to_string(*f.seed));
    if (!f.algo.empty()) kv.emplace_back("run.algo", f.algo);
    if (f.iterations) kv.emplace_back("run.iterations", std::to_string(*f.iterations));
    if (!f.out.empty()) kv.emplace_back("run.out_dir", f.out);
    config::apply_overrides(cfg, kv);
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + p.string() + "'");
}

void ensure_dir(const fs::path& d) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create directory '" + d.string() + "': " + ec.message());
}

int cmd_generate(const Flags& f) {
    const auto cfg = resolve_config(f);
    geom::DuctParams p = cfg.env.duct;
    p.seed = cfg.seed;
    const auto duct = geom::generate_duct(p);
    const fs::path dir = f.out.empty() ? fs::path(".") : fs::path(f.out);
    ensure_dir(dir);
    const std::string stem = "duct_seed" + std::to_string(cfg.seed);
    write_file(dir / (stem + ".json"), geom::duct_to_json(duct));
    if (f.obj) write_file(dir / (stem + ".obj"), geom::duct_to_obj(duct));
    std::cout << (dir / (stem + ".json")).string() << "\n";
    return kOk;
}

int cmd_train(const Flags& f) {
    const auto cfg = resolve_config(f);
    train::RunOptions opts;
    opts.resume = !f.fresh;
    opts.log = &std::cerr;
    const auto res = train::run_training(cfg, cfg.out_dir, opts);
    std::cout << "trained " << res.iterations << " iterations (" << res.env_steps << " env steps) into " << cfg.out_dir
              << "\n";
    return kOk;
}

std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& args) {
    std::vector<fs::path> out;
    for (const auto& a : args) {
        if (fs::is_directory(a)) {
            const auto found = train::list_checkpoints(a);
            if (found.empty()) throw IoError("no checkpoints under '" + a + "'");
            out.insert(out.end(), found.begin(), found.end());
        } else {
            out.emplace_back(a);
        }
    }
    if (out.empty()) throw ConfigError("--checkpoint is required");
    return out;
}

int cmd_eval(const Flags& f) {
    std::optional<config::RunConfig> given;
    if (!f.config.empty()) given = config::load_config(f.config);
    const fs::path dir = f.out;
    if (!dir.empty()) ensure_dir(dir);
    std::vector<eval::EvalReport> reports;
    std::string report_csv = std::string(eval::kReportHeader) + "\n";
    std::string episodes_csv = std::string(eval::kEpisodesHeader) + "\n";
    for (const auto& path : expand_checkpoints(f.checkpoints)) {
        const auto loaded = eval::load_policy(ckpt::load(path), given ? &*given : nullptr);
        const int n = f.episodes.value_or(loaded.config.eval_episodes);
        if (n < 1) throw ConfigError("--episodes must be >= 1");
        const auto seeds = eval::seed_range(f.seed.value_or(loaded.config.eval_seed_base), n);
        const std::string label = "iter" + std::to_string(loaded.iteration);
        auto rep = eval::evaluate(loaded.config.env, eval::policy_driver(loaded.policy), seeds, label,
                                  f.trajectories && !dir.empty() ? dir : fs::path{});
        report_csv += eval::report_csv_row(rep) + "\n";
        episodes_csv += eval::episodes_csv_rows(rep);
        reports.push_back(std::move(rep));
    }
    std::cout << eval::report_table(reports);
    if (!dir.empty()) {
        write_file(dir / "eval_report.csv", report_csv);
        write_file(dir / "eval_episodes.csv", episodes_csv);
    }
    return kOk;
}

int cmd_export_traj(const Flags& f) {
    if (f.checkpoints.size() != 1) throw ConfigError("export-traj takes exactly one --checkpoint");
    if (f.out.empty()) throw ConfigError("export-traj needs --out PATH for the CSV");
    const auto loaded = eval::load_policy(ckpt::load(f.checkpoints.front()));
    const std::uint64_t seed = f.seed.value_or(loaded.config.eval_seed_base);
    std::ofstream out(f.out);
    if (!out) throw IoError("cannot write '" + f.out + "'");
    env::DuctEnv e(loaded.config.env);
    const auto s = eval::run_episode(e, seed, eval::policy_driver(loaded.policy), &out);
    if (!out) throw IoError("write failed for '" + f.out + "'");
    std::cout << f.out << ": " << s.length << " steps, " << s.waypoints_passed << "/" << s.waypoints_total
              << " waypoints, " << env::cause_name(s.cause) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quadrotor duct-navigation simulator and trainer"};
    app.require_subcommand(1);
    Flags f;

    auto add_common = [&f](CLI::App* sub) {
        sub->add_option("--config", f.config, "Run config (INI)");
        sub->add_option("--seed", f.seed, "Seed (run seed, duct seed, or first evaluation seed)");
        sub->add_option("--out", f.out, "Output directory (or CSV path for export-traj)");
    };

    auto* gen = app.add_subcommand("generate", "Generate a duct and write JSON (and optionally OBJ)");
    add_common(gen);
    gen->add_flag("--obj", f.obj, "Also write a wall mesh");

    auto* tr = app.add_subcommand("train", "Train PPO or SAC, resuming from the newest checkpoint");
    add_common(tr);
    tr->add_option("--algo", f.algo, "Algorithm")->check(CLI::IsMember({"ppo", "sac"}));
    tr->add_option("--iterations", f.iterations, "Override run.iterations");
    tr->add_flag("--fresh", f.fresh, "Ignore existing checkpoints in the run directory");

    auto* ev = app.add_subcommand("eval", "Evaluate checkpoints over a fixed seed set");
    add_common(ev);
    ev->add_option("--checkpoint", f.checkpoints, "Checkpoint file or run directory (repeatable)")->required();
    ev->add_option("--episodes", f.episodes, "Episodes per checkpoint");
    ev->add_flag("--trajectories", f.trajectories, "Write one trajectory CSV per episode into --out");

    auto* ex = app.add_subcommand("export-traj", "Roll out one deterministic episode to CSV");
    add_common(ex);
    ex->add_option("--checkpoint", f.checkpoints, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(f);
        if (tr->parsed()) return cmd_train(f);
        if (ev->parsed()) return cmd_eval(f);
        if (ex->parsed()) return cmd_export_traj(f);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const PreconditionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const NumericalFault& e) {
        std::cerr << "numerical fault: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kOk;
}
