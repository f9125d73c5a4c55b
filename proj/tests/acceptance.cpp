// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//
//   acceptance [smoke.ini]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ductnav/algo/ppo.hpp"
#include "ductnav/algo/sac.hpp"
#include "ductnav/dynamics.hpp"
#include "ductnav/env.hpp"
#include "ductnav/eval.hpp"
#include "ductnav/geom.hpp"
#include "ductnav/train.hpp"
#include "oracles.hpp"

using namespace ductnav;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            if (!ok) detail << "; ";
            detail << what;
            ok = false;
        }
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("ductnav_accept_" + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// ---------------------------------------------------------------------------

Verdict geometry() {
    Verdict v;
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst_norm = 0.0, worst_comp = 0.0, worst_id = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const geom::Vec3 x = oracle::random_vec(rng, 10.0);
        const geom::Vec3 k = oracle::random_unit(rng);
        const double a = rng.uniform(-4, 4), b = rng.uniform(-4, 4);
        const geom::Vec3 r = geom::rotate_rodrigues(x, k, a);
        worst_norm = std::max(worst_norm, std::abs(r.norm() - x.norm()) / std::max(x.norm(), 1e-300));
        worst_id = std::max(worst_id, (geom::rotate_rodrigues(x, k, 0.0) - x).norm());
        const geom::Vec3 ab = geom::rotate_rodrigues(r, k, b);
        const geom::Vec3 direct = geom::rotate_rodrigues(x, k, a + b);
        worst_comp = std::max(worst_comp, (ab - direct).norm());
    }
    v.require(worst_norm <= 1e-12, "norm preservation " + std::to_string(worst_norm));
    v.require(worst_id == 0.0, "theta=0 identity off by " + std::to_string(worst_id));
    v.require(worst_comp <= 1e-9, "composition " + std::to_string(worst_comp));

    double worst_gap = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        geom::DuctParams p;
        p.seed = seed;
        p.n_segments = 1 + static_cast<int>(seed % 9);
        const auto d = geom::generate_duct(p);
        for (std::size_t i = 0; i + 1 < d.segments.size(); ++i)
            worst_gap = std::max(worst_gap, (d.segments[i + 1].start - d.segments[i].end()).norm());
    }
    v.require(worst_gap <= 1e-9, "chaining gap " + std::to_string(worst_gap));

    double worst_clear = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        geom::DuctParams p;
        p.seed = seed;
        const auto d = geom::generate_duct(p);
        const auto samples = oracle::dense_axis_samples(d, 1e-4);
        Rng r2(seed + 500);
        for (int i = 0; i < 1000; ++i) {
            const geom::Vec3 pt = d.point_at(r2.uniform(0.0, d.total_length())) + oracle::random_vec(r2, 0.4);
            worst_clear =
                std::max(worst_clear, std::abs(geom::clearance(d, pt) - oracle::clearance_bruteforce(d, samples, pt)));
        }
    }
    v.require(worst_clear <= 1e-3, "clearance vs dense oracle " + std::to_string(worst_clear));
    const double secs = seconds_since(t0);
    v.require(secs < 30.0, "runtime " + std::to_string(secs) + " s");
    if (v.ok)
        v.detail << "norm " << worst_norm << ", composition " << worst_comp << ", chaining " << worst_gap
                 << ", clearance " << worst_clear << " m, " << secs << " s";
    return v;
}

Verdict dynamics_suite() {
    using namespace ductnav::dynamics;
    Verdict v;
    const auto t0 = Clock::now();
    const auto p = QuadParams::crazyflie();

    RigidState s;
    s.position = Vec3(1, 2, 3);
    const Vec3 start = s.position;
    for (int i = 0; i < 500; ++i) s = step_dynamics(s, MotorCommand{}, p).state;
    const double drift = (s.position - start).norm();
    v.require(drift < 1e-6, "hover drift " + std::to_string(drift));

    const auto fall = step_dynamics(RigidState{}, MotorCommand{{-1, -1, -1, -1}}, p);
    const double az = fall.state.lin_vel_world.z() / p.dt;
    v.require(std::abs(az + 9.4176) <= 9.4176 * 1e-6, "free-fall accel " + std::to_string(az));

    Rng rng(9);
    RigidState q;
    double worst_q = 0.0;
    for (int i = 0; i < 100000; ++i) {
        MotorCommand a;
        for (auto& x : a.a) x = rng.uniform(-1, 1);
        const auto r = step_dynamics(q, a, p);
        if (r.fault) {
            v.require(false, "numerical fault at step " + std::to_string(i));
            break;
        }
        q = r.state;
        worst_q = std::max(worst_q, std::abs(q.orientation.norm() - 1.0));
    }
    v.require(worst_q <= 1e-6, "quaternion norm error " + std::to_string(worst_q));
    const double secs = seconds_since(t0);
    v.require(secs < 30.0, "runtime " + std::to_string(secs) + " s");
    if (v.ok) v.detail << "drift " << drift << " m, a_z " << az << ", |q|-1 " << worst_q << ", " << secs << " s";
    return v;
}

Verdict reward_suite() {
    using namespace ductnav::env;
    Verdict v;
    geom::DuctParams dp;
    dp.n_segments = 7;
    dp.max_bend_angle = 0.0;
    dp.length_min = dp.length_max = 1.5;
    const auto d = geom::generate_duct(dp);
    const auto cfg = RewardConfig::ppo();
    const double dt = 0.01;

    RigidState s;
    s.position = d.point_at(0.5);
    s.lin_vel_world = d.segments.front().direction;
    const auto prog = compute_reward(s, d, EpisodeState{}, MotorCommand{}, cfg, {}, dt);
    v.require(std::abs(prog.weighted_of(Term::Progress) - 0.25) < 1e-12,
              "progress " + std::to_string(prog.weighted_of(Term::Progress)));

    RigidState off;
    off.position = d.point_at(0.7) + 0.125 * eval::lateral_direction(d);
    const auto dev = compute_reward(off, d, EpisodeState{}, MotorCommand{}, cfg, {}, dt);
    v.require(dev.weighted_of(Term::CenterlineDeviation) == -2.5,
              "centerline " + std::to_string(dev.weighted_of(Term::CenterlineDeviation)));

    RigidState mid;
    mid.position = d.point_at(0.3);
    StepEvents crash, fin, wp;
    crash.crashed = true;
    fin.finished = true;
    wp.waypoint_passed = true;
    const double c = compute_reward(mid, d, {}, {}, cfg, crash, dt).weighted_of(Term::Crash);
    const double f = compute_reward(mid, d, {}, {}, cfg, fin, dt).weighted_of(Term::DuctFinish);
    const double w = compute_reward(mid, d, {}, {}, cfg, wp, dt).weighted_of(Term::WaypointPass);
    v.require(c == -17.0, "crash " + std::to_string(c));
    v.require(f == 50.0, "finish " + std::to_string(f));
    v.require(w == 22.0, "waypoint " + std::to_string(w));

    Rng rng(6);
    int additivity_failures = 0;
    for (int i = 0; i < 2000; ++i) {
        RigidState r;
        r.position = d.point_at(rng.uniform(0, d.total_length())) + oracle::random_vec(rng, 0.2);
        r.orientation = Quat(Eigen::AngleAxisd(rng.uniform(-3, 3), oracle::random_unit(rng)));
        r.lin_vel_world = oracle::random_vec(rng, 2.0);
        r.ang_vel_body = oracle::random_vec(rng, 5.0);
        EpisodeState ep;
        ep.waypoint_index = rng.index(7);
        for (auto& a : ep.prev_action) a = rng.uniform(-1, 1);
        MotorCommand a;
        for (auto& x : a.a) x = rng.uniform(-1, 1);
        const auto b = compute_reward(r, d, ep, a, cfg, {}, dt);
        double total = 0.0;
        for (std::size_t k = 0; k < kNumTerms; ++k) total += b.weighted[k];
        if (total != b.total) ++additivity_failures;
    }
    v.require(additivity_failures == 0, std::to_string(additivity_failures) + " totals differ from the term sum");

    v.require(check_waypoint(Vec3(0.374, 0, 0), 0.25), "0.374 m should count as passed");
    v.require(!check_waypoint(Vec3(0.375, 0, 0), 0.25), "0.375 m should not count as passed");
    if (v.ok) v.detail << "progress 0.25, centerline -2.5, crash -17, finish +50, waypoint +22, 2000 sums exact";
    return v;
}

Verdict learning_math() {
    using namespace ductnav::algo;
    Verdict v;

    Rng rng(11);
    double worst_gae = 0.0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t T = 10;
        std::vector<double> r(T), val(T);
        std::vector<std::uint8_t> d(T);
        std::vector<bool> db(T);
        for (std::size_t t = 0; t < T; ++t) {
            r[t] = rng.uniform(-2, 2);
            val[t] = rng.uniform(-2, 2);
            d[t] = rng.uniform() < 0.2;
            db[t] = d[t] != 0;
        }
        const double boot = rng.uniform(-2, 2), gamma = rng.uniform(0.8, 1.0), lambda = rng.uniform(0.5, 1.0);
        const auto g = compute_gae(r, val, d, boot, gamma, lambda);
        const auto ref = oracle::gae_bruteforce(r, val, db, boot, gamma, lambda);
        for (std::size_t t = 0; t < T; ++t) worst_gae = std::max(worst_gae, std::abs(g.advantages[t] - ref[t]));
    }
    v.require(worst_gae <= 1e-6, "GAE error " + std::to_string(worst_gae));

    v.require(std::abs(clipped_surrogate(1.0, 0.37, 0.2) - 0.37) < 1e-15, "surrogate rho=1");
    v.require(std::abs(clipped_surrogate(2.0, 1.0, 0.2) - 1.2) < 1e-15, "surrogate rho=2");
    v.require(std::abs(clipped_surrogate(0.5, -1.0, 0.2) + 0.8) < 1e-15, "surrogate rho=0.5");

    const double tau = 0.005, theta = 1.7, t0 = -0.4;
    std::vector<double> tgt{t0};
    const std::vector<double> src{theta};
    double worst_soft = 0.0;
    for (int n = 1; n <= 2000; ++n) {
        soft_update<double>(tgt, src, tau);
        const double k = std::pow(1 - tau, n);
        worst_soft = std::max(worst_soft, std::abs(tgt[0] - (theta * (1 - k) + t0 * k)));
    }
    v.require(worst_soft <= 1e-9, "soft update " + std::to_string(worst_soft));

    v.require(std::abs(lr_at(0) - 3e-2) < 1e-15, "lr_at(0) " + std::to_string(lr_at(0)));
    v.require(std::abs(lr_at(5e5) - 1.5e-2) < 1e-15, "lr_at(5e5) " + std::to_string(lr_at(5e5)));

    // finite differences: PPO total loss and both SAC losses
    double worst_fd = 0.0;
    auto fd_check = [&](std::span<double> params, const std::vector<double>& grad, auto&& loss, double h) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto f = [&](const std::vector<double>& x) {
                const double keep = params[i];
                params[i] = x[i];
                const double l = loss();
                params[i] = keep;
                return l;
            };
            const double fd = oracle::central_diff(f, std::vector<double>(params.begin(), params.end()), i, h);
            worst_fd = std::max(worst_fd, rel_err(fd, grad[i]));
        }
    };
    {
        PPOConfig cfg;
        cfg.hidden = {6, 5};
        Rng r2(1);
        PPOPolicy<double> pol(cfg, 3, 2);
        pol.init(r2, cfg);
        for (auto& p : pol.actor.params()) p = r2.uniform(-0.8, 0.8);
        pol.log_std = {-0.3, 0.2};
        const int B = 9;
        Matrix<double> obs(B, 3), act(B, 2), old_mean(B, 2);
        for (int i = 0; i < obs.size(); ++i) obs.data()[i] = r2.uniform(-1, 1);
        for (int i = 0; i < act.size(); ++i) act.data()[i] = r2.uniform(-1, 1);
        for (int i = 0; i < old_mean.size(); ++i) old_mean.data()[i] = r2.uniform(-0.3, 0.3);
        std::vector<double> old_lp, adv, ret, old_ls{-0.1, 0.1};
        for (int i = 0; i < B; ++i) {
            old_lp.push_back(r2.uniform(-4, 0));
            adv.push_back(r2.uniform(-1.5, 1.5));
            ret.push_back(r2.uniform(-2, 2));
        }
        auto loss = [&] {
            PPOGrads<double> g(pol);
            return ppo_minibatch<double>(pol, obs, act, old_lp, old_mean, old_ls, adv, ret, cfg, g).total;
        };
        PPOGrads<double> g(pol);
        ppo_minibatch<double>(pol, obs, act, old_lp, old_mean, old_ls, adv, ret, cfg, g);
        fd_check(pol.actor.params(), g.actor, loss, 1e-5);
        fd_check(pol.log_std, g.log_std, loss, 1e-5);
        fd_check(pol.critic.params(), g.critic, loss, 1e-5);
    }
    {
        Rng r2(7);
        nets::Mlp<double> q(nets::MlpSpec{5, {6, 4}, 1});
        q.init(r2);
        Matrix<double> x(7, 5);
        for (int i = 0; i < x.size(); ++i) x.data()[i] = r2.uniform(-1, 1);
        std::vector<double> y(7);
        for (auto& e : y) e = r2.uniform(-1, 1);
        std::vector<double> g(q.param_count()), scratch(q.param_count());
        sac_critic_loss<double>(q, x, y, g);
        fd_check(q.params(), g, [&] { return sac_critic_loss<double>(q, x, y, scratch); }, 1e-5);
    }
    {
        Rng r2(8);
        const int od = 3, ad = 2, B = 6;
        nets::Mlp<double> actor(nets::MlpSpec{od, {6, 5}, 2 * ad});
        nets::Mlp<double> q1(nets::MlpSpec{od + ad, {6, 5}, 1}), q2(q1.spec());
        actor.init(r2, 0.5);
        q1.init(r2);
        q2.init(r2);
        Matrix<double> obs(B, od), noise(B, ad);
        for (int i = 0; i < obs.size(); ++i) obs.data()[i] = r2.uniform(-1, 1);
        for (int i = 0; i < noise.size(); ++i) noise.data()[i] = r2.normal();
        std::vector<double> g(actor.param_count()), scratch(actor.param_count());
        sac_actor_loss<double>(actor, q1, q2, obs, noise, 0.37, g);
        fd_check(actor.params(), g, [&] { return sac_actor_loss<double>(actor, q1, q2, obs, noise, 0.37, scratch).loss; },
                 1e-6);
    }
    v.require(worst_fd < 1e-4, "finite-difference rel err " + std::to_string(worst_fd));
    if (v.ok)
        v.detail << "GAE " << worst_gae << ", soft update " << worst_soft << ", gradient rel err " << worst_fd;
    return v;
}

Verdict smoke_training(const fs::path& smoke_ini) {
    Verdict v;
    config::RunConfig cfg;
    try {
        cfg = config::load_config(smoke_ini.string());
    } catch (const std::exception& e) {
        v.require(false, e.what());
        return v;
    }
    v.require(cfg.algo == config::Algo::PPO, "smoke config must use PPO");
    v.require(cfg.env.duct.max_bend_angle == 0.0 && cfg.env.duct.n_segments == 2, "smoke duct must be straight, 2 segments");
    v.require(cfg.ppo.n_envs == 32 && cfg.ppo.horizon == 64, "smoke config must use 32 envs x 64 steps");
    if (!v.ok) return v;

    TempDir dir("smoke");
    const auto t0 = Clock::now();
    train::RunOptions opts;
    opts.resume = false;
    train::run_training(cfg, dir.path, opts);
    const double train_secs = seconds_since(t0);

    const auto ckpts = train::list_checkpoints(dir.path);
    const auto loaded = eval::load_policy(ckpt::load(ckpts.back()));
    const auto rep = eval::evaluate(loaded.config.env, eval::policy_driver(loaded.policy),
                                    eval::seed_range(cfg.eval_seed_base, 20), "final");
    int passing = 0;
    for (const auto& e : rep.episodes) passing += e.waypoints_passed >= 1;
    const double frac = passing / 20.0;
    v.require(frac >= 0.8, std::to_string(passing) + "/20 episodes passed a waypoint");
    v.require(train_secs <= 20 * 60.0, "training took " + std::to_string(train_secs) + " s");
    v.detail << (v.ok ? "" : "; ") << passing << "/20 episodes passed >= 1 waypoint (avg " << rep.avg_waypoints()
             << "/" << rep.waypoints_total() << ", collisions/ep " << rep.collisions_per_episode() << "), "
             << cfg.iterations << " iterations in " << train_secs << " s";
    return v;
}

Verdict determinism(const fs::path& smoke_ini) {
    Verdict v;
    auto cfg = config::load_config(smoke_ini.string());
    cfg.iterations = 3;
    cfg.checkpoint_every = 3;
    TempDir a("det_a"), b("det_b");
    std::string traj[2];
    const fs::path dirs[2] = {a.path, b.path};
    for (int i = 0; i < 2; ++i) {
        train::RunOptions opts;
        opts.resume = false;
        train::run_training(cfg, dirs[i], opts);
        const auto loaded = eval::load_policy(ckpt::load(train::list_checkpoints(dirs[i]).back()));
        env::DuctEnv e(loaded.config.env);
        std::ostringstream os;
        eval::run_episode(e, cfg.eval_seed_base, eval::policy_driver(loaded.policy), &os);
        traj[i] = os.str();
    }
    const std::string sa = slurp(a.path / "stats.csv"), sb = slurp(b.path / "stats.csv");
    v.require(!sa.empty() && sa == sb, "stats CSV differs");
    v.require(!traj[0].empty() && traj[0] == traj[1], "first-episode trajectory differs");
    if (v.ok) v.detail << "stats " << sa.size() << " bytes and trajectory " << traj[0].size() << " bytes identical";
    return v;
}

Verdict evaluation_pipeline() {
    Verdict v;
    env::EnvConfig cfg;
    cfg.duct.max_bend_angle = 0.0;
    const auto seeds = eval::seed_range(1000, 20);
    const auto center = eval::evaluate(cfg, eval::centerline_driver(cfg.spawn_arc, 2.0, cfg.quad.dt), seeds, "c");
    const auto offset = eval::evaluate(cfg, eval::centerline_driver(cfg.spawn_arc, 2.0, cfg.quad.dt, 0.1), seeds, "o");
    const auto wall = eval::evaluate(cfg, eval::wall_steer_driver(cfg.spawn_arc, 1.0, cfg.quad.dt), seeds, "w");
    v.require(center.avg_deviation() < 1e-12 && center.max_deviation() < 1e-12,
              "centerline deviation " + std::to_string(center.max_deviation()));
    v.require(std::abs(offset.avg_deviation() - 0.1) <= 1e-6, "offset avg " + std::to_string(offset.avg_deviation()));
    v.require(std::abs(offset.max_deviation() - 0.1) <= 1e-6, "offset max " + std::to_string(offset.max_deviation()));
    v.require(wall.collisions_per_episode() == 1.0,
              "wall-steer collisions/ep " + std::to_string(wall.collisions_per_episode()));
    if (v.ok)
        v.detail << "centerline " << center.max_deviation() << " m, offset " << offset.avg_deviation() << " / "
                 << offset.max_deviation() << " m, wall-steer " << wall.collisions_per_episode() << " collisions/ep";
    return v;
}

template <class F>
bool report(const char* name, F&& f) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
        v = f();
    } catch (const std::exception& e) {
        v.ok = false;
        v.detail << "exception: " << e.what();
    }
    std::printf("%s %-22s %s (%.1f s)\n", v.ok ? "PASS" : "FAIL", name, v.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
    return v.ok;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path smoke_ini = argc > 1 ? fs::path(argv[1]) : fs::path(DUCTNAV_SMOKE_CONFIG);
    bool all = true;
    all &= report("geometry", geometry);
    all &= report("dynamics", dynamics_suite);
    all &= report("reward", reward_suite);
    all &= report("learning-math", learning_math);
    all &= report("smoke-training", [&] { return smoke_training(smoke_ini); });
    all &= report("determinism", [&] { return determinism(smoke_ini); });
    all &= report("evaluation-pipeline", evaluation_pipeline);
    return all ? 0 : 1;
}
