#pragma once

// Episode logic for duct navigation: 20-dim observation, nine-term shaped
// reward, waypoint / crash / finish / timeout handling, and a batch facade
// that steps independent environments in lock-step.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ductnav/dynamics.hpp"
#include "ductnav/error.hpp"
#include "ductnav/geom.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::env {

using geom::Vec3;
using dynamics::MotorCommand;
using dynamics::Quat;
using dynamics::RigidState;

inline constexpr std::size_t kObsDim = 20;
inline constexpr std::size_t kActDim = 4;

/// [p_rel(3), p_rel_hat_body(3), q(wxyz), v_lin_body(3), v_ang_body(3), a_prev(4)]
using ObsVector = std::array<double, kObsDim>;

enum class Term : std::size_t {
    Progress,
    CenterlineDeviation,
    VelocityTracking,
    OrientationAlignment,
    AngularDamping,
    ActionSmoothness,
    WaypointPass,
    DuctFinish,
    Crash,
};
inline constexpr std::size_t kNumTerms = 9;

inline constexpr std::array<std::string_view, kNumTerms> kTermNames{
    "progress",          "centerline_deviation", "velocity_tracking",
    "orientation_alignment", "angular_damping",  "action_smoothness",
    "waypoint_pass",     "duct_finish",          "crash"};

enum class Preset { PPO, SAC };

struct RewardConfig {
    std::array<double, kNumTerms> weights{};
    double beta_v = 2.0;
    double v_target = 0.5;
    double alpha_yaw = 1.0;
    double alpha_level = 1.0;
    Preset preset = Preset::PPO;

    double weight(Term t) const { return weights[static_cast<std::size_t>(t)]; }

    static RewardConfig ppo() {
        RewardConfig c;
        c.weights = {25.0, 5.0, 3.0, 10.0, 8.5e-3, 7.0e-3, 22.0, 50.0, 17.0};
        c.preset = Preset::PPO;
        return c;
    }

    static RewardConfig sac() {
        RewardConfig c;
        c.weights = {50.0, 10.0, 4.0, 10.0, 8.5e-3, 7.0e-3, 22.0, 50.0, 17.0};
        c.preset = Preset::SAC;
        return c;
    }

    void validate() const {
        for (double w : weights)
            if (!(w >= 0.0)) throw PreconditionError("reward: all weights must be >= 0");
        if (!(alpha_yaw >= 0.0) || !(alpha_level >= 0.0) || !(alpha_yaw + alpha_level > 0.0))
            throw PreconditionError("reward: alpha_yaw + alpha_level must be > 0");
        if (!(beta_v >= 0.0)) throw PreconditionError("reward: beta_v must be >= 0");
    }
};

struct RewardBreakdown {
    std::array<double, kNumTerms> raw{};
    std::array<double, kNumTerms> weighted{};
    double total = 0.0;

    double raw_of(Term t) const { return raw[static_cast<std::size_t>(t)]; }
    double weighted_of(Term t) const { return weighted[static_cast<std::size_t>(t)]; }
};

struct FrameVectors {
    Vec3 forward_body = Vec3::UnitX();  // f_B in world
    Vec3 up_body = Vec3::UnitZ();       // u_B in world
    Vec3 up_world = Vec3::UnitZ();
    std::optional<Vec3> heading;  // d_h; empty when the waypoint is (nearly) straight up/down
};

enum class Cause { None, Crash, Finish, Timeout };

inline std::string_view cause_name(Cause c) {
    switch (c) {
        case Cause::Crash: return "crash";
        case Cause::Finish: return "finish";
        case Cause::Timeout: return "timeout";
        default: return "none";
    }
}

struct EpisodeState {
    std::size_t waypoint_index = 0;
    dynamics::Vec4 prev_action{0.0, 0.0, 0.0, 0.0};
    int step_count = 0;
    bool terminated = false;
    Cause cause = Cause::None;

    double episode_return = 0.0;
    double deviation_sum = 0.0;
    double deviation_max = 0.0;
    int collisions = 0;
};

struct StepEvents {
    bool waypoint_passed = false;
    bool finished = false;
    bool crashed = false;
};

/// Summary handed out on the step where an episode ends.
struct EpisodeSummary {
    std::uint64_t duct_seed = 0;
    double episode_return = 0.0;
    int length = 0;
    std::size_t waypoints_passed = 0;
    std::size_t waypoints_total = 0;
    int collisions = 0;
    double mean_deviation = 0.0;
    double max_deviation = 0.0;
    Cause cause = Cause::None;
};

struct StepInfo {
    double deviation = 0.0;
    bool waypoint_passed = false;
    std::size_t waypoint_index = 0;
    bool fault = false;  // non-finite action or state
    Cause cause = Cause::None;
    std::optional<ObsVector> terminal_observation;
    std::optional<EpisodeSummary> episode;
};

struct StepResult {
    ObsVector obs{};
    double reward = 0.0;
    RewardBreakdown breakdown;
    bool terminated = false;
    bool truncated = false;
    StepInfo info;
};

struct EnvConfig {
    geom::DuctParams duct;
    dynamics::QuadParams quad = dynamics::QuadParams::crazyflie();
    RewardConfig reward = RewardConfig::ppo();
    int max_steps = 1500;
    double spawn_arc = 0.2;

    void validate() const {
        duct.validate();
        quad.validate();
        reward.validate();
        if (max_steps < 1) throw PreconditionError("env: max_steps must be >= 1");
        if (!(spawn_arc >= 0.0)) throw PreconditionError("env: spawn_arc must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Pure pieces

inline bool check_waypoint(const Vec3& p_rel, double radius) { return p_rel.norm() < 1.5 * radius; }

inline std::size_t active_waypoint(const geom::Duct& duct, const EpisodeState& ep) {
    return std::min(ep.waypoint_index, duct.waypoints.size() - 1);
}

inline FrameVectors frame_vectors(const RigidState& rigid, const Vec3& p_rel) {
    FrameVectors f;
    f.forward_body = rigid.orientation * Vec3::UnitX();
    f.up_body = rigid.orientation * Vec3::UnitZ();
    if (p_rel.norm() > 1e-9) {
        const Vec3 unit = p_rel / p_rel.norm();
        const Vec3 h(unit.x(), unit.y(), 0.0);
        if (h.norm() >= 1e-6) f.heading = h / h.norm();
    }
    return f;
}

inline ObsVector build_observation(const RigidState& rigid, const geom::Duct& duct, const EpisodeState& ep) {
    if (duct.waypoints.empty()) throw PreconditionError("build_observation: duct has no waypoints");
    const Vec3 p_rel = duct.waypoints[active_waypoint(duct, ep)] - rigid.position;
    const Quat qinv = rigid.orientation.conjugate();
    const double n = p_rel.norm();
    const Vec3 dir_body = n < 1e-9 ? Vec3(Vec3::UnitX()) : Vec3(Vec3(qinv * p_rel) / n);
    const Vec3 v_body = qinv * rigid.lin_vel_world;
    const Quat& q = rigid.orientation;

    return ObsVector{p_rel.x(), p_rel.y(), p_rel.z(),
                     dir_body.x(), dir_body.y(), dir_body.z(),
                     q.w(), q.x(), q.y(), q.z(),
                     v_body.x(), v_body.y(), v_body.z(),
                     rigid.ang_vel_body.x(), rigid.ang_vel_body.y(), rigid.ang_vel_body.z(),
                     ep.prev_action[0], ep.prev_action[1], ep.prev_action[2], ep.prev_action[3]};
}

/// The nine shaped reward terms for the post-step state. `ep` is the episode
/// state before this step (active waypoint, previous action); `events`
/// carries the discrete outcomes decided by the caller.
inline RewardBreakdown compute_reward(const RigidState& rigid, const geom::Duct& duct, const EpisodeState& ep,
                                      const MotorCommand& action, const RewardConfig& cfg,
                                      const StepEvents& events, double dt) {
    RewardBreakdown out;
    auto& r = out.raw;
    auto set = [&r](Term t, double v) { r[static_cast<std::size_t>(t)] = v; };

    const Vec3 p_rel = duct.waypoints[active_waypoint(duct, ep)] - rigid.position;
    const double dist = p_rel.norm();
    const Quat qinv = rigid.orientation.conjugate();
    const Vec3 v_body = qinv * rigid.lin_vel_world;

    // scalar projection of the body-frame step displacement on the body-frame direction to the waypoint
    if (dist > 1e-9) {
        const Vec3 dir_body = Vec3(qinv * p_rel) / dist;
        set(Term::Progress, (v_body * dt).dot(dir_body));
    }

    const auto cq = geom::closest_centerline(duct, rigid.position);
    set(Term::CenterlineDeviation, -cq.radial_deviation / duct.radius);

    const Vec3 v_star_world = cfg.v_target * duct.segments[cq.segment_index].direction;
    const Vec3 v_star_body = qinv * v_star_world;
    set(Term::VelocityTracking, std::exp(-cfg.beta_v * (v_body - v_star_body).norm()));

    const FrameVectors fv = frame_vectors(rigid, p_rel);
    const double level = fv.up_body.dot(fv.up_world);
    if (fv.heading) {
        const double yaw = fv.forward_body.dot(*fv.heading);
        set(Term::OrientationAlignment,
            (cfg.alpha_yaw * yaw + cfg.alpha_level * level) / (cfg.alpha_yaw + cfg.alpha_level));
    } else {
        set(Term::OrientationAlignment, level);
    }

    set(Term::AngularDamping, -rigid.ang_vel_body.squaredNorm());

    const MotorCommand a = action.clamped();
    double smooth = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double d = a.a[i] - ep.prev_action[i];
        smooth += d * d;
    }
    set(Term::ActionSmoothness, -smooth);

    set(Term::WaypointPass, events.waypoint_passed ? 1.0 : 0.0);
    set(Term::DuctFinish, events.finished ? 1.0 : 0.0);
    set(Term::Crash, events.crashed ? -1.0 : 0.0);

    double total = 0.0;
    for (std::size_t k = 0; k < kNumTerms; ++k) {
        out.weighted[k] = cfg.weights[k] * r[k];
        total += out.weighted[k];
    }
    out.total = total;
    return out;
}

/// Crash dominates finish, which dominates timeout.
inline Cause check_termination(const RigidState& rigid, const geom::Duct& duct, const EpisodeState& ep,
                               int max_steps, double collision_radius) {
    if (!rigid.finite()) return Cause::Crash;
    if (geom::clearance(duct, rigid.position) < collision_radius) return Cause::Crash;
    if (ep.waypoint_index >= duct.waypoints.size()) return Cause::Finish;
    if (ep.step_count >= max_steps) return Cause::Timeout;
    return Cause::None;
}

// ---------------------------------------------------------------------------
// Single environment

class DuctEnv {
public:
    explicit DuctEnv(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const EnvConfig& config() const { return cfg_; }
    const geom::Duct& duct() const { return duct_; }
    const RigidState& rigid() const { return rigid_; }
    const EpisodeState& episode() const { return ep_; }

    ObsVector reset(std::uint64_t duct_seed) {
        geom::DuctParams p = cfg_.duct;
        p.seed = duct_seed;
        return reset(geom::generate_duct(p));
    }

    ObsVector reset(geom::Duct duct) {
        duct_ = std::move(duct);
        if (duct_.empty() || duct_.waypoints.empty()) throw PreconditionError("env: empty duct");
        rigid_ = RigidState{};
        rigid_.position = duct_.point_at(cfg_.spawn_arc);
        ep_ = EpisodeState{};
        return build_observation(rigid_, duct_, ep_);
    }

    /// Physics step. Terminated episodes reject further steps until reset.
    StepResult step(const MotorCommand& action, const dynamics::Disturbance& dist = {}) {
        require_active();
        const bool bad_action = !action.finite();
        const MotorCommand cmd = bad_action ? MotorCommand{} : action.clamped();
        const auto dyn = dynamics::step_dynamics(rigid_, cmd, cfg_.quad, dist);
        return advance(dyn.state, cmd, bad_action);
    }

    /// Places the vehicle at `next` instead of integrating dynamics; everything
    /// else (events, reward, metrics) runs as in step(). Used by scripted evaluation.
    StepResult step_kinematic(const RigidState& next, const MotorCommand& action) {
        require_active();
        const bool bad_action = !action.finite();
        const MotorCommand cmd = bad_action ? MotorCommand{} : action.clamped();
        return advance(next, cmd, bad_action);
    }

    /// Copy of the mutable episode state; used by checkpoints.
    struct Snapshot {
        geom::Duct duct;
        RigidState rigid;
        EpisodeState episode;
    };
    Snapshot snapshot() const { return {duct_, rigid_, ep_}; }
    void restore(Snapshot s) {
        duct_ = std::move(s.duct);
        rigid_ = s.rigid;
        ep_ = s.episode;
    }

private:
    void require_active() const {
        if (duct_.empty()) throw PreconditionError("env: step before reset");
        if (ep_.terminated) throw PreconditionError("env: episode already terminated; call reset");
    }

    StepResult advance(const RigidState& next, const MotorCommand& cmd, bool action_fault) {
        const EpisodeState before = ep_;
        rigid_ = next;
        ep_.step_count += 1;

        StepEvents ev;
        const bool finite = rigid_.finite();
        const bool crashed = !finite || geom::clearance(duct_, rigid_.position) < cfg_.quad.collision_radius;
        if (!crashed) {
            const Vec3 p_rel = duct_.waypoints[active_waypoint(duct_, ep_)] - rigid_.position;
            if (check_waypoint(p_rel, duct_.radius)) {
                ep_.waypoint_index += 1;
                ev.waypoint_passed = true;
            }
        }
        const Cause cause = crashed ? Cause::Crash
                                    : check_termination(rigid_, duct_, ep_, cfg_.max_steps,
                                                        cfg_.quad.collision_radius);
        ev.crashed = cause == Cause::Crash;
        ev.finished = cause == Cause::Finish;

        StepResult res;
        if (finite) {
            res.breakdown = compute_reward(rigid_, duct_, before, cmd, cfg_.reward, ev, cfg_.quad.dt);
        } else {
            // state unusable: only the crash penalty is defined
            res.breakdown.raw[static_cast<std::size_t>(Term::Crash)] = -1.0;
            res.breakdown.weighted[static_cast<std::size_t>(Term::Crash)] = -cfg_.reward.weight(Term::Crash);
            res.breakdown.total = res.breakdown.weighted[static_cast<std::size_t>(Term::Crash)];
        }
        res.reward = res.breakdown.total;

        const double dev = finite ? geom::closest_centerline(duct_, rigid_.position).radial_deviation : 0.0;
        ep_.deviation_sum += dev;
        ep_.deviation_max = std::max(ep_.deviation_max, dev);
        ep_.episode_return += res.reward;
        if (ev.crashed) ep_.collisions += 1;
        ep_.prev_action = cmd.a;

        res.terminated = cause == Cause::Crash || cause == Cause::Finish;
        res.truncated = cause == Cause::Timeout;
        ep_.terminated = cause != Cause::None;
        ep_.cause = cause;

        res.info.deviation = dev;
        res.info.waypoint_passed = ev.waypoint_passed;
        res.info.waypoint_index = ep_.waypoint_index;
        res.info.fault = action_fault || !finite;
        res.info.cause = cause;

        if (finite) {
            res.obs = build_observation(rigid_, duct_, ep_);
        } else {
            res.obs.fill(0.0);
        }
        if (ep_.terminated) res.info.episode = summary();
        return res;
    }

    EpisodeSummary summary() const {
        EpisodeSummary s;
        s.duct_seed = duct_.seed;
        s.episode_return = ep_.episode_return;
        s.length = ep_.step_count;
        s.waypoints_passed = ep_.waypoint_index;
        s.waypoints_total = duct_.waypoints.size();
        s.collisions = ep_.collisions;
        s.mean_deviation = ep_.step_count > 0 ? ep_.deviation_sum / ep_.step_count : 0.0;
        s.max_deviation = ep_.deviation_max;
        s.cause = ep_.cause;
        return s;
    }

    EnvConfig cfg_;
    geom::Duct duct_;
    RigidState rigid_;
    EpisodeState ep_;
};

// ---------------------------------------------------------------------------
// Batch facade

/// n independent environments stepped in lock-step. Terminated slots are
/// reset immediately with a duct seed drawn from that slot's own stream; the
/// returned obs is then the first observation of the new episode and the
/// final one is kept in info.terminal_observation.
class VecEnv {
public:
    VecEnv(EnvConfig cfg, std::size_t n, unsigned workers = 1) : workers_(std::max(1u, workers)) {
        if (n == 0) throw PreconditionError("VecEnv: need at least one environment");
        envs_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) envs_.emplace_back(cfg);
        rngs_.resize(n);
    }

    std::size_t size() const { return envs_.size(); }
    const DuctEnv& env(std::size_t i) const { return envs_.at(i); }
    DuctEnv& env(std::size_t i) { return envs_.at(i); }
    Rng& rng(std::size_t i) { return rngs_.at(i); }
    const Rng& rng(std::size_t i) const { return rngs_.at(i); }
    void set_workers(unsigned w) { workers_ = std::max(1u, w); }

    /// One seed per environment; each seed fixes that slot's first duct and its reseed stream.
    std::vector<ObsVector> reset(std::span<const std::uint64_t> seeds) {
        if (seeds.size() != envs_.size()) throw PreconditionError("VecEnv::reset: need one seed per env");
        std::vector<ObsVector> obs(envs_.size());
        for (std::size_t i = 0; i < envs_.size(); ++i) {
            rngs_[i] = Rng(mix_seed(seeds[i]));
            obs[i] = envs_[i].reset(seeds[i]);
        }
        return obs;
    }

    std::vector<StepResult> step(std::span<const MotorCommand> actions) {
        if (actions.size() != envs_.size()) throw PreconditionError("VecEnv::step: need one action per env");
        std::vector<StepResult> out(envs_.size());
        auto work = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) out[i] = step_slot(i, actions[i]);
        };
        const std::size_t n = envs_.size();
        const std::size_t w = std::min<std::size_t>(workers_, n);
        if (w <= 1) {
            work(0, n);
        } else {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (n + w - 1) / w;
            for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(work, lo, std::min(n, lo + chunk));
        }
        return out;
    }

    // Flat float32 array contract (row-major): obs n x 20, actions n x 4.

    void reset_arrays(std::span<const std::uint64_t> seeds, std::span<float> obs_out) {
        check_size(obs_out.size(), envs_.size() * kObsDim, "obs");
        const auto obs = reset(seeds);
        write_obs(obs, obs_out);
    }

    std::vector<StepInfo> step_arrays(std::span<const float> actions, std::span<float> obs_out,
                                      std::span<float> rewards_out, std::span<std::uint8_t> terminated_out,
                                      std::span<std::uint8_t> truncated_out) {
        const std::size_t n = envs_.size();
        check_size(actions.size(), n * kActDim, "actions");
        check_size(obs_out.size(), n * kObsDim, "obs");
        check_size(rewards_out.size(), n, "rewards");
        check_size(terminated_out.size(), n, "terminated");
        check_size(truncated_out.size(), n, "truncated");
        std::vector<MotorCommand> cmds(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < kActDim; ++j) cmds[i].a[j] = actions[i * kActDim + j];
        auto res = step(cmds);
        std::vector<StepInfo> infos(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < kObsDim; ++j) obs_out[i * kObsDim + j] = static_cast<float>(res[i].obs[j]);
            rewards_out[i] = static_cast<float>(res[i].reward);
            terminated_out[i] = res[i].terminated ? 1 : 0;
            truncated_out[i] = res[i].truncated ? 1 : 0;
            infos[i] = std::move(res[i].info);
        }
        return infos;
    }

private:
    StepResult step_slot(std::size_t i, const MotorCommand& a) {
        StepResult r = envs_[i].step(a);
        if (r.terminated || r.truncated) {
            r.info.terminal_observation = r.obs;
            r.obs = envs_[i].reset(rngs_[i].next_u64());
        }
        return r;
    }

    static void check_size(std::size_t got, std::size_t want, const char* what) {
        if (got != want)
            throw PreconditionError(std::string("VecEnv: ") + what + " array has " + std::to_string(got) +
                                    " entries, expected " + std::to_string(want));
    }

    static void write_obs(const std::vector<ObsVector>& obs, std::span<float> out) {
        for (std::size_t i = 0; i < obs.size(); ++i)
            for (std::size_t j = 0; j < kObsDim; ++j) out[i * kObsDim + j] = static_cast<float>(obs[i][j]);
    }

    std::vector<DuctEnv> envs_;
    std::vector<Rng> rngs_;
    unsigned workers_ = 1;
};

// ---------------------------------------------------------------------------
// Trajectory CSV

inline constexpr std::string_view kTrajectoryHeader =
    "step,t,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,a1,a2,a3,a4,reward,deviation,waypoint_index";

struct TrajectoryRow {
    int step = 0;
    double t = 0.0;
    RigidState rigid;
    dynamics::Vec4 action{};
    double reward = 0.0;
    double deviation = 0.0;
    std::size_t waypoint_index = 0;
};

inline void write_trajectory_row(std::ostream& os, const TrajectoryRow& r) {
    char buf[1024];
    const auto& p = r.rigid.position;
    const auto& q = r.rigid.orientation;
    const auto& v = r.rigid.lin_vel_world;
    const auto& w = r.rigid.ang_vel_body;
    std::snprintf(buf, sizeof buf,
                  "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,"
                  "%.9g,%.9g,%zu\n",
                  r.step, r.t, p.x(), p.y(), p.z(), q.w(), q.x(), q.y(), q.z(), v.x(), v.y(), v.z(), w.x(), w.y(),
                  w.z(), r.action[0], r.action[1], r.action[2], r.action[3], r.reward, r.deviation,
                  r.waypoint_index);
    os << buf;
}

}  // namespace ductnav::env
