#pragma once

// Pieces shared by the on- and off-policy trainers: advantage estimation,
// learning-rate schedules, Polyak averaging, and the per-iteration stats row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ductnav/error.hpp"

namespace ductnav::algo {

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t;  A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
/// `bootstrap_value` stands in for V_T after the last step.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
                             double lambda) {
    const std::size_t T = rewards.size();
    if (values.size() != T || dones.size() != T) throw PreconditionError("compute_gae: length mismatch");
    GaeResult out;
    out.advantages.assign(T, 0.0);
    out.returns.assign(T, 0.0);
    double next_adv = 0.0;
    double next_value = bootstrap_value;
    for (std::size_t i = T; i-- > 0;) {
        const double not_done = dones[i] ? 0.0 : 1.0;
        const double delta = rewards[i] + gamma * next_value * not_done - values[i];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        out.advantages[i] = next_adv;
        out.returns[i] = next_adv + values[i];
        next_value = values[i];
    }
    return out;
}

/// Normalizes to mean 0, std 1 in place (population std, floored at 1e-8).
template <class S>
void normalize(std::span<S> xs) {
    if (xs.empty()) return;
    double mean = 0.0;
    for (S x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (S x : xs) var += (x - mean) * (x - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(xs.size())), 1e-8);
    for (S& x : xs) x = static_cast<S>((x - mean) / sd);
}

struct LinearSchedule {
    double initial = 3e-2;
    double final = 0.0;
    double horizon_steps = 1e6;
    bool constant = false;

    static LinearSchedule default_sac() { return {}; }
    static LinearSchedule conservative_sac() { return {3e-4, 3e-4, 1e6, true}; }
};

/// Linear interpolation initial -> final over horizon_steps; held at final afterwards.
inline double lr_at(double step, const LinearSchedule& s = LinearSchedule::default_sac()) {
    if (step < 0) throw PreconditionError("lr_at: step must be >= 0");
    if (s.constant) return s.initial;
    const double frac = std::min(1.0, step / s.horizon_steps);
    return std::max(0.0, s.initial + (s.final - s.initial) * frac);
}

/// target <- tau * source + (1 - tau) * target.
template <class S>
void soft_update(std::span<S> target, std::span<const S> source, double tau) {
    if (target.size() != source.size()) throw PreconditionError("soft_update: size mismatch");
    const S t = static_cast<S>(tau), keep = static_cast<S>(1.0 - tau);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = t * source[i] + keep * target[i];
}

/// min(rho A, clip(rho, 1-eps, 1+eps) A).
template <class S>
S clipped_surrogate(S ratio, S advantage, S eps) {
    return std::min(ratio * advantage, std::clamp(ratio, S(1) - eps, S(1) + eps) * advantage);
}

/// r + gamma (1 - done) (min_q_next - alpha * logp_next).
template <class S>
S soft_q_target(S reward, S gamma, bool done, S min_q_next, S alpha, S logp_next) {
    if (done) return reward;
    return reward + gamma * (min_q_next - alpha * logp_next);
}

struct TrainStats {
    std::int64_t iteration = 0;
    std::int64_t env_steps = 0;
    double mean_reward = 0.0;
    double mean_ep_len = 0.0;
    double kl = 0.0;
    double clip_frac = 0.0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double alpha = 0.0;
    double lr = 0.0;
    bool fault = false;
};

inline constexpr const char* kStatsHeader =
    "iteration,env_steps,mean_reward,mean_ep_len,kl,clip_frac,actor_loss,critic_loss,alpha,lr";

inline std::string stats_row(const TrainStats& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<long long>(s.iteration), static_cast<long long>(s.env_steps), s.mean_reward,
                  s.mean_ep_len, s.kl, s.clip_frac, s.actor_loss, s.critic_loss, s.alpha, s.lr);
    return buf;
}

/// Returns/lengths of the most recent completed episodes.
class EpisodeWindow {
public:
    explicit EpisodeWindow(std::size_t cap = 100) : cap_(cap) {}

    void push(double ret, double len) {
        returns_.push_back(ret);
        lengths_.push_back(len);
        if (returns_.size() > cap_) {
            returns_.pop_front();
            lengths_.pop_front();
        }
    }
    double mean_return() const { return mean(returns_); }
    double mean_length() const { return mean(lengths_); }
    std::vector<double> returns() const { return {returns_.begin(), returns_.end()}; }
    std::vector<double> lengths() const { return {lengths_.begin(), lengths_.end()}; }
    void assign(const std::vector<double>& r, const std::vector<double>& l) {
        returns_.assign(r.begin(), r.end());
        lengths_.assign(l.begin(), l.end());
    }

private:
    static double mean(const std::deque<double>& d) {
        if (d.empty()) return 0.0;
        return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    }
    std::size_t cap_;
    std::deque<double> returns_, lengths_;
};

}  // namespace ductnav::algo
