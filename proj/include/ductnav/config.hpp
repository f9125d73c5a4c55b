#pragma once

// Run configuration as sectioned INI text. Every field has exactly one key;
// unknown sections or keys are errors. resolved_text() writes every key with
// round-trip precision so a run can be replayed from its copy.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ductnav/algo/ppo.hpp"
#include "ductnav/algo/sac.hpp"
#include "ductnav/env.hpp"
#include "ductnav/error.hpp"

namespace ductnav::config {

enum class Algo { PPO, SAC };

inline std::string algo_name(Algo a) { return a == Algo::PPO ? "ppo" : "sac"; }

inline Algo parse_algo(const std::string& s) {
    if (s == "ppo") return Algo::PPO;
    if (s == "sac") return Algo::SAC;
    throw ConfigError("unknown algorithm '" + s + "' (expected ppo or sac)");
}

struct RunConfig {
    Algo algo = Algo::PPO;
    std::uint64_t seed = 0;
    int iterations = 100;
    int checkpoint_every = 100;
    unsigned workers = 1;
    std::string out_dir = "runs/default";
    int eval_episodes = 20;
    std::uint64_t eval_seed_base = 1000;

    env::EnvConfig env;
    double max_bend_deg = 30.0;
    double hover_rpm = dynamics::kHoverRpm;

    algo::PPOConfig ppo;
    algo::SACConfig sac;

    RunConfig() { finalize(); }

    /// Recomputes derived physical fields from the declared ones.
    void finalize() {
        env.duct.max_bend_angle = max_bend_deg * std::numbers::pi / 180.0;
        env.quad.omega_hover = hover_rpm * dynamics::kRpmToRadPerSec;
        env.quad.calibrate_thrust();
    }

    int n_envs() const { return algo == Algo::PPO ? ppo.n_envs : sac.n_envs; }

    void validate() const {
        try {
            env.validate();
            ppo.validate();
            sac.validate();
        } catch (const PreconditionError& e) {
            throw ConfigError(e.what());
        }
        if (iterations < 1) throw ConfigError("run.iterations must be >= 1");
        if (checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be >= 1");
        if (workers < 1) throw ConfigError("run.workers must be >= 1");
        if (eval_episodes < 1) throw ConfigError("run.eval_episodes must be >= 1");
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v))
        throw ConfigError("key '" + key + "': '" + s + "' is not a finite number");
    return v;
}

template <class I>
I parse_int(const std::string& key, const std::string& s) {
    I v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("key '" + key + "': '" + s + "' is not an integer");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key '" + key + "': '" + s + "' is not a boolean");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw ConfigError("key '" + key + "': empty list entry");
        out.push_back(parse_int<int>(key, item.substr(b, e - b + 1)));
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

inline std::string fmt_int_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Binding {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;

    std::string name() const { return section + "." + key; }
};

inline Binding bind_double(std::string sec, std::string key, double& ref) {
    const std::string full = sec + "." + key;
    return {std::move(sec), std::move(key), [&ref] { return fmt_double(ref); },
            [&ref, full](const std::string& s) { ref = parse_double(full, s); }};
}

template <class I>
Binding bind_int(std::string sec, std::string key, I& ref) {
    const std::string full = sec + "." + key;
    return {std::move(sec), std::move(key), [&ref] { return std::to_string(ref); },
            [&ref, full](const std::string& s) { ref = parse_int<I>(full, s); }};
}

inline Binding bind_bool(std::string sec, std::string key, bool& ref) {
    const std::string full = sec + "." + key;
    return {std::move(sec), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, full](const std::string& s) { ref = parse_bool(full, s); }};
}

inline Binding bind_list(std::string sec, std::string key, std::vector<int>& ref) {
    const std::string full = sec + "." + key;
    return {std::move(sec), std::move(key), [&ref] { return fmt_int_list(ref); },
            [&ref, full](const std::string& s) { ref = parse_int_list(full, s); }};
}

inline std::string preset_name(env::Preset p) { return p == env::Preset::PPO ? "ppo" : "sac"; }

/// All keys in output order. reward.preset comes before the weights it seeds.
inline std::vector<Binding> bindings(RunConfig& c) {
    std::vector<Binding> b;
    b.push_back({"run", "algo", [&c] { return algo_name(c.algo); },
                 [&c](const std::string& s) { c.algo = parse_algo(s); }});
    b.push_back(bind_int("run", "seed", c.seed));
    b.push_back(bind_int("run", "iterations", c.iterations));
    b.push_back(bind_int("run", "checkpoint_every", c.checkpoint_every));
    b.push_back(bind_int("run", "workers", c.workers));
    b.push_back({"run", "out_dir", [&c] { return c.out_dir; }, [&c](const std::string& s) { c.out_dir = s; }});
    b.push_back(bind_int("run", "eval_episodes", c.eval_episodes));
    b.push_back(bind_int("run", "eval_seed_base", c.eval_seed_base));

    auto& d = c.env.duct;
    b.push_back(bind_int("duct", "n_segments", d.n_segments));
    b.push_back(bind_double("duct", "radius", d.radius));
    b.push_back(bind_double("duct", "length_min", d.length_min));
    b.push_back(bind_double("duct", "length_max", d.length_max));
    b.push_back(bind_double("duct", "max_bend_deg", c.max_bend_deg));
    b.push_back(bind_int("duct", "n_waypoints", d.n_waypoints));

    auto& q = c.env.quad;
    b.push_back(bind_double("quad", "mass", q.mass));
    b.push_back(bind_double("quad", "ixx", q.inertia_diag.x()));
    b.push_back(bind_double("quad", "iyy", q.inertia_diag.y()));
    b.push_back(bind_double("quad", "izz", q.inertia_diag.z()));
    b.push_back(bind_double("quad", "arm_length", q.arm_length));
    b.push_back(bind_double("quad", "k_torque", q.k_torque));
    b.push_back(bind_double("quad", "hover_rpm", c.hover_rpm));
    b.push_back(bind_double("quad", "dt", q.dt));
    b.push_back(bind_double("quad", "collision_radius", q.collision_radius));
    b.push_back(bind_double("quad", "gravity", q.gravity));

    auto& r = c.env.reward;
    b.push_back({"reward", "preset", [&r] { return preset_name(r.preset); },
                 [&r](const std::string& s) {
                     if (s == "ppo") r.weights = env::RewardConfig::ppo().weights, r.preset = env::Preset::PPO;
                     else if (s == "sac") r.weights = env::RewardConfig::sac().weights, r.preset = env::Preset::SAC;
                     else throw ConfigError("key 'reward.preset': unknown preset '" + s + "'");
                 }});
    for (std::size_t k = 0; k < env::kNumTerms; ++k)
        b.push_back(bind_double("reward", "w_" + std::string(env::kTermNames[k]), r.weights[k]));
    b.push_back(bind_double("reward", "beta_v", r.beta_v));
    b.push_back(bind_double("reward", "v_target", r.v_target));
    b.push_back(bind_double("reward", "alpha_yaw", r.alpha_yaw));
    b.push_back(bind_double("reward", "alpha_level", r.alpha_level));

    b.push_back(bind_int("env", "max_steps", c.env.max_steps));
    b.push_back(bind_double("env", "spawn_arc", c.env.spawn_arc));

    auto& p = c.ppo;
    b.push_back(bind_int("ppo", "n_envs", p.n_envs));
    b.push_back(bind_int("ppo", "horizon", p.horizon));
    b.push_back(bind_double("ppo", "gamma", p.gamma));
    b.push_back(bind_double("ppo", "lambda", p.lambda));
    b.push_back(bind_double("ppo", "clip", p.clip));
    b.push_back(bind_double("ppo", "kl_target", p.kl_target));
    b.push_back(bind_int("ppo", "epochs", p.epochs));
    b.push_back(bind_int("ppo", "minibatches", p.minibatches));
    b.push_back(bind_double("ppo", "value_coef", p.value_coef));
    b.push_back(bind_double("ppo", "entropy_coef", p.entropy_coef));
    b.push_back(bind_double("ppo", "lr", p.lr));
    b.push_back(bind_double("ppo", "lr_min", p.lr_min));
    b.push_back(bind_double("ppo", "lr_max", p.lr_max));
    b.push_back(bind_double("ppo", "kl_high", p.kl_high));
    b.push_back(bind_double("ppo", "kl_low", p.kl_low));
    b.push_back(bind_double("ppo", "lr_factor", p.lr_factor));
    b.push_back(bind_double("ppo", "max_grad_norm", p.max_grad_norm));
    b.push_back(bind_double("ppo", "init_log_std", p.init_log_std));
    b.push_back(bind_double("ppo", "reward_scale", p.reward_scale));
    b.push_back(bind_double("ppo", "actor_output_scale", p.actor_output_scale));
    b.push_back(bind_list("ppo", "hidden", p.hidden));

    auto& s = c.sac;
    b.push_back(bind_int("sac", "n_envs", s.n_envs));
    b.push_back(bind_int("sac", "capacity", s.capacity));
    b.push_back(bind_int("sac", "batch", s.batch));
    b.push_back(bind_double("sac", "tau", s.tau));
    b.push_back(bind_double("sac", "gamma", s.gamma));
    b.push_back(bind_bool("sac", "lr_constant", s.lr.constant));
    b.push_back(bind_double("sac", "lr_initial", s.lr.initial));
    b.push_back(bind_double("sac", "lr_final", s.lr.final));
    b.push_back(bind_double("sac", "lr_horizon", s.lr.horizon_steps));
    b.push_back(bind_double("sac", "target_entropy", s.target_entropy));
    b.push_back(bind_int("sac", "warmup", s.warmup));
    b.push_back(bind_int("sac", "gradient_steps", s.gradient_steps));
    b.push_back(bind_int("sac", "steps_per_iteration", s.steps_per_iteration));
    b.push_back(bind_double("sac", "init_alpha", s.init_alpha));
    b.push_back(bind_list("sac", "hidden", s.hidden));
    return b;
}

}  // namespace detail

/// Applies `key = value` pairs (keys as "section.key") over `base`.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
    auto binds = detail::bindings(cfg);
    std::map<std::string, const detail::Binding*> index;
    for (const auto& b : binds) index[b.name()] = &b;
    // the reward preset must land before individual weights
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& [k, v] : kv) {
            const bool is_preset = k == "reward.preset";
            if ((pass == 0) != is_preset) continue;
            const auto it = index.find(k);
            if (it == index.end()) throw ConfigError("unknown config key '" + k + "'");
            it->second->set(v);
        }
    }
    cfg.finalize();
}

inline RunConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    std::vector<std::pair<std::string, std::string>> kv;
    RunConfig probe;
    std::set<std::string> sections;
    for (const auto& b : detail::bindings(probe)) sections.insert(b.section);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config key '" + section + "' must live inside a [section]");
        if (!sections.contains(section)) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, val] : body) kv.emplace_back(section + "." + key, val.data());
    }
    RunConfig cfg;
    apply_overrides(cfg, kv);
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every key, one per line, in a fixed order. Parsing this text yields an identical config.
inline std::string resolved_text(const RunConfig& cfg, bool include_out_dir = true) {
    RunConfig copy = cfg;
    std::string out, section;
    for (const auto& b : detail::bindings(copy)) {
        if (!include_out_dir && b.name() == "run.out_dir") continue;
        if (b.section != section) {
            out += (section.empty() ? "[" : "\n[") + b.section + "]\n";
            section = b.section;
        }
        out += b.key + " = " + b.get() + "\n";
    }
    return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Identity of everything that shapes a run's numbers; the output directory is excluded.
inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(resolved_text(cfg, false)); }

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace ductnav::config
