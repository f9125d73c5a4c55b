#pragma once

// Deterministic evaluation: roll out a driver (trained policy or scripted
// trajectory) over a fixed seed set and aggregate per-checkpoint metrics.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ductnav/checkpoint.hpp"
#include "ductnav/config.hpp"
#include "ductnav/env.hpp"
#include "ductnav/error.hpp"
#include "ductnav/nets.hpp"

namespace ductnav::eval {

namespace fs = std::filesystem;
using env::EpisodeSummary;
using env::ObsVector;

/// Deterministic actor extracted from a checkpoint: the Gaussian mean for
/// PPO, tanh of the mean for SAC.
struct Policy {
    config::Algo algo = config::Algo::PPO;
    nets::Mlp<float> actor;

    env::MotorCommand act(const ObsVector& obs) const {
        nets::Matrix<float> x(1, static_cast<Eigen::Index>(env::kObsDim));
        for (std::size_t j = 0; j < env::kObsDim; ++j) x(0, static_cast<Eigen::Index>(j)) = static_cast<float>(obs[j]);
        const nets::Matrix<float> y = actor.forward(x);
        env::MotorCommand c;
        for (std::size_t j = 0; j < env::kActDim; ++j) {
            const double m = y(0, static_cast<Eigen::Index>(j));
            c.a[j] = algo == config::Algo::SAC ? std::tanh(m) : m;
        }
        return c;
    }
};

struct LoadedCheckpoint {
    config::RunConfig config;
    Policy policy;
    std::int64_t iteration = 0;
    std::int64_t env_steps = 0;
    std::string config_hash;
};

/// Rebuilds the run config stored in the checkpoint. When `expected` is
/// given its hash must match the stored one.
inline LoadedCheckpoint load_policy(const ckpt::Checkpoint& c, const config::RunConfig* expected = nullptr) {
    LoadedCheckpoint out;
    try {
        out.config = config::parse_config(c.meta.at("config_text").get<std::string>());
        out.config_hash = c.meta.at("config_hash").get<std::string>();
        out.iteration = c.meta.at("iteration").get<std::int64_t>();
        out.env_steps = c.meta.at("env_steps").get<std::int64_t>();
        out.policy.algo = config::parse_algo(c.meta.at("algo").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: ") + e.what());
    }
    if (out.config_hash != config::hex64(config::config_hash(out.config)))
        throw IoError("checkpoint: stored config does not reproduce its recorded hash");
    if (expected && config::hex64(config::config_hash(*expected)) != out.config_hash)
        throw ConfigError("checkpoint was trained with config " + out.config_hash + " but the given config hashes to " +
                          config::hex64(config::config_hash(*expected)));
    const bool ppo = out.policy.algo == config::Algo::PPO;
    const auto& hidden = ppo ? out.config.ppo.hidden : out.config.sac.hidden;
    const int out_dim = static_cast<int>(env::kActDim) * (ppo ? 1 : 2);
    out.policy.actor = nets::Mlp<float>(nets::MlpSpec{static_cast<int>(env::kObsDim), hidden, out_dim});
    const auto& params = c.get<float>("actor");
    if (params.size() != out.policy.actor.param_count()) throw IoError("checkpoint: actor size does not match config");
    std::copy(params.begin(), params.end(), out.policy.actor.params().begin());
    return out;
}

/// Advances the environment by one step given its latest observation.
using Driver = std::function<env::StepResult(env::DuctEnv&, const ObsVector&)>;

inline Driver policy_driver(const Policy& p) {
    return [&p](env::DuctEnv& e, const ObsVector& obs) { return e.step(p.act(obs)); };
}

/// Places the vehicle on a prescribed path: `path(duct, k)` is the state after step k (k >= 1).
inline Driver kinematic_driver(std::function<dynamics::RigidState(const geom::Duct&, int)> path) {
    return [path = std::move(path)](env::DuctEnv& e, const ObsVector&) {
        return e.step_kinematic(path(e.duct(), e.episode().step_count + 1), env::MotorCommand{});
    };
}

/// Unit vector perpendicular to the first segment, fixed per duct.
inline geom::Vec3 lateral_direction(const geom::Duct& d) {
    return geom::detail::perpendicular_basis(d.segments.front().direction).first;
}

/// Constant-speed flight along the centerline, displaced sideways by `lateral_offset` metres.
inline Driver centerline_driver(double spawn_arc, double speed, double dt, double lateral_offset = 0.0) {
    return kinematic_driver([=](const geom::Duct& d, int k) {
        dynamics::RigidState s;
        const double arc = spawn_arc + speed * dt * k;
        const auto offs = d.arc_offsets();
        std::size_t seg = 0;
        while (seg + 1 < d.segments.size() && arc > offs[seg + 1]) ++seg;
        const geom::Vec3 side = geom::detail::perpendicular_basis(d.segments[seg].direction).first;
        s.position = d.point_at(arc) + lateral_offset * side;
        s.lin_vel_world = speed * d.segments[seg].direction;
        return s;
    });
}

/// Drifts sideways from the spawn point until it meets the wall.
inline Driver wall_steer_driver(double spawn_arc, double speed, double dt) {
    return kinematic_driver([=](const geom::Duct& d, int k) {
        dynamics::RigidState s;
        const geom::Vec3 side = lateral_direction(d);
        s.position = d.point_at(spawn_arc) + side * (speed * dt * k);
        s.lin_vel_world = speed * side;
        return s;
    });
}

/// Runs one episode on the duct generated from `seed`. Optionally writes the trajectory CSV.
inline EpisodeSummary run_episode(env::DuctEnv& e, std::uint64_t seed, const Driver& drive,
                                  std::ostream* trajectory = nullptr) {
    ObsVector obs = e.reset(seed);
    if (trajectory) *trajectory << env::kTrajectoryHeader << "\n";
    const double dt = e.config().quad.dt;
    while (true) {
        const env::StepResult r = drive(e, obs);
        obs = r.obs;
        if (trajectory) {
            env::TrajectoryRow row;
            row.step = e.episode().step_count;
            row.t = row.step * dt;
            row.rigid = e.rigid();
            row.action = e.episode().prev_action;
            row.reward = r.reward;
            row.deviation = r.info.deviation;
            row.waypoint_index = r.info.waypoint_index;
            env::write_trajectory_row(*trajectory, row);
        }
        if (r.terminated || r.truncated) {
            EpisodeSummary s = *r.info.episode;
            s.duct_seed = seed;
            return s;
        }
    }
}

struct EvalReport {
    std::string label;
    std::vector<EpisodeSummary> episodes;

    std::size_t size() const { return episodes.size(); }
    double avg_reward() const { return mean([](const EpisodeSummary& s) { return s.episode_return; }); }
    double avg_waypoints() const {
        return mean([](const EpisodeSummary& s) { return static_cast<double>(s.waypoints_passed); });
    }
    std::size_t waypoints_total() const { return episodes.empty() ? 0 : episodes.front().waypoints_total; }
    double collisions_per_episode() const {
        return mean([](const EpisodeSummary& s) { return static_cast<double>(s.collisions); });
    }
    /// Mean over episodes of each episode's per-step mean deviation.
    double avg_deviation() const { return mean([](const EpisodeSummary& s) { return s.mean_deviation; }); }
    double max_deviation() const {
        double m = 0.0;
        for (const auto& s : episodes) m = std::max(m, s.max_deviation);
        return m;
    }
    std::string seed_set() const {
        if (episodes.empty()) return "";
        std::uint64_t lo = episodes.front().duct_seed, hi = lo;
        bool contiguous = true;
        for (std::size_t i = 0; i < episodes.size(); ++i) {
            contiguous &= episodes[i].duct_seed == lo + i;
            hi = std::max(hi, episodes[i].duct_seed);
        }
        if (contiguous) return std::to_string(lo) + ".." + std::to_string(hi);
        std::string s;
        for (const auto& e : episodes) s += (s.empty() ? "" : " ") + std::to_string(e.duct_seed);
        return s;
    }

private:
    template <class F>
    double mean(F f) const {
        if (episodes.empty()) return 0.0;
        double acc = 0.0;
        for (const auto& s : episodes) acc += f(s);
        return acc / static_cast<double>(episodes.size());
    }
};

inline std::vector<std::uint64_t> seed_range(std::uint64_t base, int n) {
    std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[i] = base + static_cast<std::uint64_t>(i);
    return s;
}

/// One episode per seed. Trajectory CSVs land in `trajectory_dir` when non-empty.
inline EvalReport evaluate(const env::EnvConfig& cfg, const Driver& drive, const std::vector<std::uint64_t>& seeds,
                           std::string label, const fs::path& trajectory_dir = {}) {
    EvalReport rep;
    rep.label = std::move(label);
    env::DuctEnv e(cfg);
    for (const auto seed : seeds) {
        if (trajectory_dir.empty()) {
            rep.episodes.push_back(run_episode(e, seed, drive));
        } else {
            const fs::path p = trajectory_dir / ("traj_" + rep.label + "_seed" + std::to_string(seed) + ".csv");
            std::ofstream out(p);
            if (!out) throw IoError("cannot write '" + p.string() + "'");
            rep.episodes.push_back(run_episode(e, seed, drive, &out));
            if (!out) throw IoError("write failed for '" + p.string() + "'");
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {
inline std::string f17(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}
}  // namespace detail

inline constexpr const char* kReportHeader =
    "checkpoint,avg_reward,avg_waypoints,waypoints_total,collisions_per_episode,avg_deviation,max_deviation,"
    "episodes,seeds";

inline constexpr const char* kEpisodesHeader =
    "checkpoint,seed,return,length,waypoints_passed,waypoints_total,collisions,mean_deviation,max_deviation,cause";

inline std::string report_csv_row(const EvalReport& r) {
    return r.label + "," + detail::f17(r.avg_reward()) + "," + detail::f17(r.avg_waypoints()) + "," +
           std::to_string(r.waypoints_total()) + "," + detail::f17(r.collisions_per_episode()) + "," +
           detail::f17(r.avg_deviation()) + "," + detail::f17(r.max_deviation()) + "," + std::to_string(r.size()) +
           "," + r.seed_set();
}

inline std::string episodes_csv_rows(const EvalReport& r) {
    std::string out;
    for (const auto& s : r.episodes)
        out += r.label + "," + std::to_string(s.duct_seed) + "," + detail::f17(s.episode_return) + "," +
               std::to_string(s.length) + "," + std::to_string(s.waypoints_passed) + "," +
               std::to_string(s.waypoints_total) + "," + std::to_string(s.collisions) + "," +
               detail::f17(s.mean_deviation) + "," + detail::f17(s.max_deviation) + "," +
               std::string(env::cause_name(s.cause)) + "\n";
    return out;
}

inline std::string report_table(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %12s %11s %14s %14s %14s %9s\n", "checkpoint", "avg reward", "waypoints",
                  "collisions/ep", "avg dev (m)", "max dev (m)", "episodes");
    os << line;
    for (const auto& r : reports) {
        char wp[32];
        std::snprintf(wp, sizeof wp, "%.2f / %zu", r.avg_waypoints(), r.waypoints_total());
        std::snprintf(line, sizeof line, "%-16s %12.2f %11s %14.2f %14.4f %14.4f %9zu\n", r.label.c_str(),
                      r.avg_reward(), wp, r.collisions_per_episode(), r.avg_deviation(), r.max_deviation(), r.size());
        os << line;
    }
    if (!reports.empty()) os << "seeds: " << reports.front().seed_set() << "\n";
    return os.str();
}

}  // namespace ductnav::eval
