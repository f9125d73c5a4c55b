#pragma once

// Training orchestration over VecEnv: rollout collection, updates, stats CSV,
// periodic checkpoints, and resume from the newest checkpoint in a run
// directory.

#include <nlohmann/json.hpp>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "ductnav/algo/common.hpp"
#include "ductnav/algo/ppo.hpp"
#include "ductnav/algo/sac.hpp"
#include "ductnav/checkpoint.hpp"
#include "ductnav/config.hpp"
#include "ductnav/env.hpp"
#include "ductnav/error.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::train {

namespace fs = std::filesystem;
using algo::TrainStats;
using config::Algo;
using config::RunConfig;
using env::ObsVector;
using nets::Matrix;

inline constexpr int kObs = static_cast<int>(env::kObsDim);
inline constexpr int kAct = static_cast<int>(env::kActDim);

inline Matrix<float> obs_matrix(const std::vector<ObsVector>& obs) {
    Matrix<float> m(static_cast<Eigen::Index>(obs.size()), kObs);
    for (std::size_t i = 0; i < obs.size(); ++i)
        for (int j = 0; j < kObs; ++j) m(static_cast<Eigen::Index>(i), j) = static_cast<float>(obs[i][j]);
    return m;
}

/// Duct seed of slot i's first episode.
inline std::uint64_t slot_seed(std::uint64_t run_seed, std::size_t i) { return mix_seed(mix_seed(run_seed) + i); }

// ---------------------------------------------------------------------------
// Environment state <-> JSON (exact: doubles round-trip through shortest repr)

inline nlohmann::json env_to_json(const env::DuctEnv& e, const Rng& rng) {
    const auto& r = e.rigid();
    const auto& ep = e.episode();
    nlohmann::json j;
    j["duct"] = geom::duct_to_json(e.duct());
    j["rigid"] = {r.position.x(),      r.position.y(),      r.position.z(),      r.orientation.w(),
                  r.orientation.x(),   r.orientation.y(),   r.orientation.z(),   r.lin_vel_world.x(),
                  r.lin_vel_world.y(), r.lin_vel_world.z(), r.ang_vel_body.x(),  r.ang_vel_body.y(),
                  r.ang_vel_body.z()};
    j["waypoint_index"] = ep.waypoint_index;
    j["prev_action"] = ep.prev_action;
    j["step_count"] = ep.step_count;
    j["terminated"] = ep.terminated;
    j["cause"] = static_cast<int>(ep.cause);
    j["episode_return"] = ep.episode_return;
    j["deviation_sum"] = ep.deviation_sum;
    j["deviation_max"] = ep.deviation_max;
    j["collisions"] = ep.collisions;
    j["rng"] = rng.state();
    return j;
}

inline void env_from_json(const nlohmann::json& j, env::DuctEnv& e, Rng& rng) {
    env::DuctEnv::Snapshot s;
    s.duct = geom::duct_from_json(j.at("duct").get<std::string>());
    const auto& v = j.at("rigid");
    if (v.size() != 13) throw IoError("checkpoint: rigid state must have 13 entries");
    s.rigid.position = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    s.rigid.orientation = dynamics::Quat(v[3].get<double>(), v[4].get<double>(), v[5].get<double>(), v[6].get<double>());
    s.rigid.lin_vel_world = {v[7].get<double>(), v[8].get<double>(), v[9].get<double>()};
    s.rigid.ang_vel_body = {v[10].get<double>(), v[11].get<double>(), v[12].get<double>()};
    s.episode.waypoint_index = j.at("waypoint_index").get<std::size_t>();
    s.episode.prev_action = j.at("prev_action").get<dynamics::Vec4>();
    s.episode.step_count = j.at("step_count").get<int>();
    s.episode.terminated = j.at("terminated").get<bool>();
    s.episode.cause = static_cast<env::Cause>(j.at("cause").get<int>());
    s.episode.episode_return = j.at("episode_return").get<double>();
    s.episode.deviation_sum = j.at("deviation_sum").get<double>();
    s.episode.deviation_max = j.at("deviation_max").get<double>();
    s.episode.collisions = j.at("collisions").get<int>();
    e.restore(std::move(s));
    try {
        rng.set_state(j.at("rng").get<std::string>());
    } catch (const std::runtime_error& err) {
        throw IoError(std::string("checkpoint: ") + err.what());
    }
}

template <class T>
void expect_size(const std::vector<T>& v, std::size_t n, const std::string& what) {
    if (v.size() != n)
        throw IoError("checkpoint array '" + what + "' has " + std::to_string(v.size()) + " entries, expected " +
                      std::to_string(n));
}

template <class S>
void put_adam(ckpt::Checkpoint& c, const std::string& name, const nets::AdamState<S>& a) {
    c.put(name + ".m", a.m);
    c.put(name + ".v", a.v);
    c.meta["adam_t"][name] = a.t;
}

template <class S>
void get_adam(const ckpt::Checkpoint& c, const std::string& name, nets::AdamState<S>& a) {
    const auto& m = c.get<S>(name + ".m");
    const auto& v = c.get<S>(name + ".v");
    expect_size(m, a.m.size(), name + ".m");
    expect_size(v, a.v.size(), name + ".v");
    a.m = m;
    a.v = v;
    a.t = c.meta.at("adam_t").at(name).get<std::int64_t>();
}

template <class S>
void get_params(const ckpt::Checkpoint& c, const std::string& name, std::span<S> dst) {
    const auto& src = c.get<S>(name);
    expect_size(src, dst.size(), name);
    std::copy(src.begin(), src.end(), dst.begin());
}

// ---------------------------------------------------------------------------

class Trainer {
public:
    explicit Trainer(RunConfig cfg)
        : cfg_(std::move(cfg)),
          venv_(cfg_.env, static_cast<std::size_t>(cfg_.n_envs()), cfg_.workers),
          rng_(mix_seed(cfg_.seed ^ 0x5eedULL)) {
        cfg_.validate();
        std::vector<std::uint64_t> seeds(venv_.size());
        for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = slot_seed(cfg_.seed, i);
        obs_ = venv_.reset(seeds);
    }
    virtual ~Trainer() = default;

    virtual TrainStats iterate() = 0;

    const RunConfig& config() const { return cfg_; }
    std::int64_t iteration() const { return iteration_; }
    std::int64_t env_steps() const { return env_steps_; }
    const env::VecEnv& envs() const { return venv_; }
    const algo::EpisodeWindow& window() const { return window_; }

    ckpt::Checkpoint checkpoint() const {
        ckpt::Checkpoint c;
        c.meta["algo"] = config::algo_name(cfg_.algo);
        c.meta["iteration"] = iteration_;
        c.meta["env_steps"] = env_steps_;
        c.meta["config_text"] = config::resolved_text(cfg_, false);
        c.meta["config_hash"] = config::hex64(config::config_hash(cfg_));
        c.meta["rng"] = rng_.state();
        c.meta["envs"] = nlohmann::json::array();
        for (std::size_t i = 0; i < venv_.size(); ++i) c.meta["envs"].push_back(env_to_json(venv_.env(i), venv_.rng(i)));
        c.put("window.returns", window_.returns());
        c.put("window.lengths", window_.lengths());
        save_learner(c);
        return c;
    }

    void restore(const ckpt::Checkpoint& c) {
        try {
            const auto algo = c.meta.at("algo").get<std::string>();
            if (algo != config::algo_name(cfg_.algo))
                throw ConfigError("checkpoint holds a " + algo + " run but the config selects " +
                                  config::algo_name(cfg_.algo));
            const auto hash = c.meta.at("config_hash").get<std::string>();
            if (hash != config::hex64(config::config_hash(cfg_)))
                throw ConfigError("checkpoint config hash " + hash + " does not match the current config " +
                                  config::hex64(config::config_hash(cfg_)));
            iteration_ = c.meta.at("iteration").get<std::int64_t>();
            env_steps_ = c.meta.at("env_steps").get<std::int64_t>();
            try {
                rng_.set_state(c.meta.at("rng").get<std::string>());
            } catch (const std::runtime_error&) {
                throw IoError("checkpoint: invalid RNG state");
            }
            const auto& envs = c.meta.at("envs");
            if (envs.size() != venv_.size()) throw IoError("checkpoint: environment count mismatch");
            for (std::size_t i = 0; i < venv_.size(); ++i) {
                env_from_json(envs[i], venv_.env(i), venv_.rng(i));
                obs_[i] = env::build_observation(venv_.env(i).rigid(), venv_.env(i).duct(), venv_.env(i).episode());
            }
            window_.assign(c.get<double>("window.returns"), c.get<double>("window.lengths"));
            load_learner(c);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("checkpoint: ") + e.what());
        }
    }

protected:
    virtual void save_learner(ckpt::Checkpoint& c) const = 0;
    virtual void load_learner(const ckpt::Checkpoint& c) = 0;

    void record_episodes(const std::vector<env::StepResult>& res) {
        for (const auto& r : res)
            if (r.info.episode) window_.push(r.info.episode->episode_return, r.info.episode->length);
    }

    RunConfig cfg_;
    env::VecEnv venv_;
    Rng rng_;
    std::vector<ObsVector> obs_;
    algo::EpisodeWindow window_{100};
    std::int64_t iteration_ = 0;
    std::int64_t env_steps_ = 0;
};

class PpoTrainer : public Trainer {
public:
    explicit PpoTrainer(RunConfig cfg) : Trainer(std::move(cfg)) {
        pol_ = algo::PPOPolicy<float>(cfg_.ppo, kObs, kAct);
        pol_.init(rng_, cfg_.ppo);
        opt_ = algo::PPOOptimizer<float>(pol_, cfg_.ppo.lr);
    }

    const algo::PPOPolicy<float>& policy() const { return pol_; }

    TrainStats iterate() override {
        const auto& pc = cfg_.ppo;
        const int N = static_cast<int>(venv_.size());
        algo::RolloutBuffer<float> buf(pc.horizon, N, kObs, kAct);
        buf.log_std = pol_.log_std;
        std::vector<env::MotorCommand> cmds(static_cast<std::size_t>(N));

        for (int t = 0; t < pc.horizon; ++t) {
            const Matrix<float> X = obs_matrix(obs_);
            const Matrix<float> mean = pol_.actor.forward(X);
            const Matrix<float> value = pol_.critic.forward(X);
            for (int i = 0; i < N; ++i) {
                const auto row = static_cast<Eigen::Index>(t) * N + i;
                buf.obs.row(row) = X.row(i);
                buf.means.row(row) = mean.row(i);
                for (int j = 0; j < kAct; ++j) {
                    const float a = mean(i, j) + std::exp(pol_.log_std[j]) * static_cast<float>(rng_.normal());
                    buf.actions(row, j) = a;
                    cmds[i].a[j] = a;
                }
                buf.log_probs[row] = nets::gaussian_log_prob<float>(
                    std::span<const float>(mean.row(i).data(), kAct), pol_.log_std,
                    std::span<const float>(buf.actions.row(row).data(), kAct));
                buf.values[row] = value(i, 0);
            }
            auto res = venv_.step(cmds);

            // time-limit truncation: fold the critic's estimate of the cut-off tail into the reward
            std::vector<ObsVector> tails;
            std::vector<int> tail_slot;
            for (int i = 0; i < N; ++i)
                if (res[i].truncated && !res[i].terminated && res[i].info.terminal_observation) {
                    tails.push_back(*res[i].info.terminal_observation);
                    tail_slot.push_back(i);
                }
            std::vector<double> tail_value(static_cast<std::size_t>(N), 0.0);
            if (!tails.empty()) {
                const Matrix<float> tv = pol_.critic.forward(obs_matrix(tails));
                for (std::size_t k = 0; k < tails.size(); ++k) tail_value[tail_slot[k]] = tv(static_cast<Eigen::Index>(k), 0);
            }
            for (int i = 0; i < N; ++i) {
                const std::size_t row = static_cast<std::size_t>(t) * N + i;
                buf.rewards[row] = static_cast<float>(pc.reward_scale * res[i].reward + pc.gamma * tail_value[i]);
                buf.dones[row] = res[i].terminated || res[i].truncated;
                obs_[i] = res[i].obs;
            }
            record_episodes(res);
        }
        buf.filled = pc.horizon;

        const Matrix<float> vb = pol_.critic.forward(obs_matrix(obs_));
        std::vector<double> boot(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) boot[i] = vb(i, 0);
        buf.finish(boot, pc.gamma, pc.lambda);

        TrainStats st = algo::ppo_update(buf, pol_, opt_, pc, rng_);
        iteration_ += 1;
        env_steps_ += static_cast<std::int64_t>(pc.horizon) * N;
        st.iteration = iteration_;
        st.env_steps = env_steps_;
        st.mean_reward = window_.mean_return();
        st.mean_ep_len = window_.mean_length();
        st.alpha = 0.0;
        return st;
    }

protected:
    void save_learner(ckpt::Checkpoint& c) const override {
        c.put("actor", std::vector<float>(pol_.actor.params().begin(), pol_.actor.params().end()));
        c.put("log_std", pol_.log_std);
        c.put("critic", std::vector<float>(pol_.critic.params().begin(), pol_.critic.params().end()));
        put_adam(c, "adam.actor", opt_.actor);
        put_adam(c, "adam.log_std", opt_.log_std);
        put_adam(c, "adam.critic", opt_.critic);
        c.put("lr", std::vector<double>{opt_.lr});
    }

    void load_learner(const ckpt::Checkpoint& c) override {
        get_params<float>(c, "actor", pol_.actor.params());
        get_params<float>(c, "log_std", std::span<float>(pol_.log_std));
        get_params<float>(c, "critic", pol_.critic.params());
        get_adam(c, "adam.actor", opt_.actor);
        get_adam(c, "adam.log_std", opt_.log_std);
        get_adam(c, "adam.critic", opt_.critic);
        const auto& lr = c.get<double>("lr");
        expect_size(lr, 1, "lr");
        opt_.lr = lr[0];
    }

private:
    algo::PPOPolicy<float> pol_;
    algo::PPOOptimizer<float> opt_;
};

class SacTrainer : public Trainer {
public:
    explicit SacTrainer(RunConfig cfg) : Trainer(std::move(cfg)) {
        nets_ = algo::SACNets<float>(cfg_.sac, kObs, kAct);
        nets_.init(rng_);
        opt_ = algo::SACOptimizer<float>(nets_);
        replay_ = algo::ReplayBuffer<float>(cfg_.sac.capacity, kObs, kAct);
    }

    const algo::SACNets<float>& nets() const { return nets_; }
    const algo::ReplayBuffer<float>& replay() const { return replay_; }

    TrainStats iterate() override {
        const auto& sc = cfg_.sac;
        const int N = static_cast<int>(venv_.size());
        std::vector<env::MotorCommand> cmds(static_cast<std::size_t>(N));
        std::vector<float> act(kAct), o(kObs), no(kObs);
        TrainStats st;
        double critic_sum = 0.0, actor_sum = 0.0;
        int updates = 0;

        for (int s = 0; s < sc.steps_per_iteration; ++s) {
            const Matrix<float> X = obs_matrix(obs_);
            if (env_steps_ < sc.warmup) {
                for (auto& c : cmds)
                    for (auto& a : c.a) a = rng_.uniform(-1.0, 1.0);
            } else {
                const Matrix<float> head = nets_.actor.forward(X);
                const Matrix<float> noise = algo::standard_normal<float>(rng_, N, kAct);
                const auto samples = algo::sample_rows<float>(head, noise);
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < kAct; ++j) cmds[i].a[j] = samples[i].action[j];
            }
            const auto res = venv_.step(cmds);
            for (int i = 0; i < N; ++i) {
                const ObsVector& next = res[i].info.terminal_observation ? *res[i].info.terminal_observation : res[i].obs;
                for (int j = 0; j < kObs; ++j) o[j] = X(i, j), no[j] = static_cast<float>(next[j]);
                for (int j = 0; j < kAct; ++j) act[j] = static_cast<float>(cmds[i].a[j]);
                // truncated transitions keep done = false so the target bootstraps through them
                replay_.add(o, act, static_cast<float>(res[i].reward), no, res[i].terminated);
                obs_[i] = res[i].obs;
            }
            record_episodes(res);
            env_steps_ += N;

            if (replay_.size() >= static_cast<std::size_t>(std::max(sc.warmup, sc.batch))) {
                for (int k = 0; k < sc.updates_per_vec_step(); ++k) {
                    const auto u = algo::sac_update(replay_, nets_, opt_, sc, rng_, algo::lr_at(env_steps_, sc.lr));
                    if (u.fault) {
                        st.fault = true;
                        continue;
                    }
                    critic_sum += u.critic_loss;
                    actor_sum += u.actor_loss;
                    ++updates;
                }
            }
        }
        iteration_ += 1;
        st.iteration = iteration_;
        st.env_steps = env_steps_;
        st.mean_reward = window_.mean_return();
        st.mean_ep_len = window_.mean_length();
        st.critic_loss = updates ? critic_sum / updates : 0.0;
        st.actor_loss = updates ? actor_sum / updates : 0.0;
        st.alpha = nets_.alpha();
        st.lr = algo::lr_at(env_steps_, sc.lr);
        return st;
    }

protected:
    void save_learner(ckpt::Checkpoint& c) const override {
        auto put_net = [&c](const std::string& name, const nets::Mlp<float>& m) {
            c.put(name, std::vector<float>(m.params().begin(), m.params().end()));
        };
        put_net("actor", nets_.actor);
        put_net("q1", nets_.q1);
        put_net("q2", nets_.q2);
        put_net("q1_target", nets_.q1_target);
        put_net("q2_target", nets_.q2_target);
        c.put("log_alpha", std::vector<double>{nets_.log_alpha});
        put_adam(c, "adam.actor", opt_.actor);
        put_adam(c, "adam.q1", opt_.q1);
        put_adam(c, "adam.q2", opt_.q2);
        put_adam(c, "adam.log_alpha", opt_.log_alpha);
        c.meta["updates"] = opt_.updates;
        c.meta["replay"] = {{"size", replay_.size()}, {"cursor", replay_.cursor()}};
        c.put("replay.obs", replay_.raw_obs());
        c.put("replay.act", replay_.raw_act());
        c.put("replay.rew", replay_.raw_rew());
        c.put("replay.next_obs", replay_.raw_next_obs());
        c.put("replay.done", replay_.raw_done());
    }

    void load_learner(const ckpt::Checkpoint& c) override {
        get_params<float>(c, "actor", nets_.actor.params());
        get_params<float>(c, "q1", nets_.q1.params());
        get_params<float>(c, "q2", nets_.q2.params());
        get_params<float>(c, "q1_target", nets_.q1_target.params());
        get_params<float>(c, "q2_target", nets_.q2_target.params());
        const auto& la = c.get<double>("log_alpha");
        expect_size(la, 1, "log_alpha");
        nets_.log_alpha = la[0];
        get_adam(c, "adam.actor", opt_.actor);
        get_adam(c, "adam.q1", opt_.q1);
        get_adam(c, "adam.q2", opt_.q2);
        get_adam(c, "adam.log_alpha", opt_.log_alpha);
        opt_.updates = c.meta.at("updates").get<std::int64_t>();
        try {
            replay_.assign_raw(c.get<float>("replay.obs"), c.get<float>("replay.act"), c.get<float>("replay.rew"),
                               c.get<float>("replay.next_obs"), c.get<std::uint8_t>("replay.done"),
                               c.meta.at("replay").at("size").get<std::size_t>(),
                               c.meta.at("replay").at("cursor").get<std::size_t>());
        } catch (const PreconditionError& e) {
            throw IoError(std::string("checkpoint replay: ") + e.what());
        }
    }

private:
    algo::SACNets<float> nets_;
    algo::SACOptimizer<float> opt_;
    algo::ReplayBuffer<float> replay_;
};

inline std::unique_ptr<Trainer> make_trainer(const RunConfig& cfg) {
    if (cfg.algo == Algo::PPO) return std::make_unique<PpoTrainer>(cfg);
    return std::make_unique<SacTrainer>(cfg);
}

// ---------------------------------------------------------------------------
// Run directory

/// Exclusive lockfile holding the owner's PID; a stale lock (dead PID) is taken over.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        for (int attempt = 0; attempt < 2; ++attempt) {
            if (std::FILE* f = std::fopen(path_.c_str(), "wx")) {
                std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
                std::fclose(f);
                return;
            }
            long pid = 0;
            if (std::FILE* f = std::fopen(path_.c_str(), "r")) {
                if (std::fscanf(f, "%ld", &pid) != 1) pid = 0;
                std::fclose(f);
            }
            if (pid > 0 && ::kill(static_cast<pid_t>(pid), 0) == 0)
                throw IoError("run directory '" + dir.string() + "' is locked by process " + std::to_string(pid));
            std::error_code ec;
            fs::remove(path_, ec);
        }
        throw IoError("cannot create lockfile '" + path_.string() + "'");
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

inline fs::path checkpoint_path(const fs::path& run_dir, std::int64_t iteration) {
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_%06lld.bin", static_cast<long long>(iteration));
    return run_dir / "checkpoints" / name;
}

/// Checkpoints in the run directory, oldest first.
inline std::vector<fs::path> list_checkpoints(const fs::path& run_dir) {
    std::vector<fs::path> out;
    const fs::path dir = run_dir / "checkpoints";
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    static const std::regex pat(R"(ckpt_(\d+)\.bin)");
    for (const auto& e : fs::directory_iterator(dir))
        if (std::regex_match(e.path().filename().string(), pat)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

struct RunOptions {
    bool resume = true;
    int max_consecutive_faults = 3;
    std::ostream* log = nullptr;
};

struct RunResult {
    std::int64_t iterations = 0;
    std::int64_t env_steps = 0;
    std::optional<int> resumed_from;
    std::vector<fs::path> checkpoints;
    TrainStats last;
};

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + p.string() + "'");
}

/// Drops stats rows past `iteration` (left behind by an interrupted run).
inline void truncate_stats(const fs::path& p, std::int64_t iteration) {
    std::ifstream in(p);
    if (!in) {
        write_text(p, std::string(algo::kStatsHeader) + "\n");
        return;
    }
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            kept += line + "\n";
            header = false;
            continue;
        }
        if (line.empty()) continue;
        if (std::stoll(line.substr(0, line.find(','))) <= iteration) kept += line + "\n";
    }
    in.close();
    write_text(p, kept);
}

/// Trains until cfg.iterations, resuming from the newest checkpoint in `run_dir` when present.
inline RunResult run_training(const RunConfig& cfg, const fs::path& run_dir, const RunOptions& opts = {}) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(run_dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create run directory '" + run_dir.string() + "': " + ec.message());
    RunLock lock(run_dir);
    auto log = [&](const std::string& s) {
        if (opts.log) *opts.log << s << std::endl;
    };

    if (cfg.algo == Algo::SAC && !cfg.sac.lr.constant && cfg.sac.lr.initial > 1e-2)
        log("warning: SAC learning rate starts at " + config::detail::fmt_double(cfg.sac.lr.initial) +
            ", far above usual Adam settings; a constant 3e-4 preset is available (configs/sac_conservative.ini)");

    auto trainer = make_trainer(cfg);
    RunResult result;
    const fs::path stats_path = run_dir / "stats.csv";
    const auto existing = opts.resume ? list_checkpoints(run_dir) : std::vector<fs::path>{};
    if (!existing.empty()) {
        trainer->restore(ckpt::load(existing.back()));
        result.resumed_from = static_cast<int>(trainer->iteration());
        truncate_stats(stats_path, trainer->iteration());
        log("resumed from " + existing.back().string());
    } else {
        write_text(stats_path, std::string(algo::kStatsHeader) + "\n");
    }
    RunConfig with_dir = cfg;
    with_dir.out_dir = run_dir.string();
    write_text(run_dir / "config.ini", config::resolved_text(with_dir));

    std::ofstream stats(stats_path, std::ios::app);
    if (!stats) throw IoError("cannot append to '" + stats_path.string() + "'");
    int faults = 0;
    while (trainer->iteration() < cfg.iterations) {
        const TrainStats st = trainer->iterate();
        stats << algo::stats_row(st) << "\n";
        stats.flush();
        if (!stats) throw IoError("write failed for '" + stats_path.string() + "'");
        result.last = st;
        faults = st.fault ? faults + 1 : 0;
        if (faults >= opts.max_consecutive_faults)
            throw NumericalFault("training produced non-finite updates in " + std::to_string(faults) +
                                 " consecutive iterations (last good checkpoint kept)");
        if (st.iteration % cfg.checkpoint_every == 0 || st.iteration == cfg.iterations) {
            const auto p = checkpoint_path(run_dir, st.iteration);
            ckpt::save(trainer->checkpoint(), p);
            result.checkpoints.push_back(p);
        }
        if (opts.log) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter %lld  steps %lld  return %.3f  len %.1f", static_cast<long long>(st.iteration),
                          static_cast<long long>(st.env_steps), st.mean_reward, st.mean_ep_len);
            log(buf);
        }
    }
    result.iterations = trainer->iteration();
    result.env_steps = trainer->env_steps();
    return result;
}

}  // namespace ductnav::train
