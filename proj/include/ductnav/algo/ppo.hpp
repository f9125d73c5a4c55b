#pragma once

// Clipped-surrogate PPO with GAE and an adaptive-KL learning rate.
// Actor and critic use separate trunks; the policy log-std is a free,
// state-independent parameter vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ductnav/algo/common.hpp"
#include "ductnav/error.hpp"
#include "ductnav/nets.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::algo {

using nets::Matrix;

struct PPOConfig {
    int n_envs = 64;
    int horizon = 256;
    double gamma = 0.99;
    double lambda = 0.95;
    double clip = 0.2;
    double kl_target = 0.01;
    int epochs = 5;
    int minibatches = 4;
    double value_coef = 0.5;
    double entropy_coef = 0.005;
    double lr = 1e-3;
    double lr_min = 1e-6;
    double lr_max = 1e-2;
    double kl_high = 2.0;    // lr shrinks when kl > kl_high * kl_target
    double kl_low = 0.5;     // lr grows when kl < kl_low * kl_target
    double lr_factor = 1.5;
    double max_grad_norm = 1.0;
    double init_log_std = 0.0;
    double reward_scale = 1.0;  // applied to env rewards before GAE; the critic learns scaled returns
    double actor_output_scale = 0.01;
    std::vector<int> hidden{256, 128};

    void validate() const {
        if (n_envs < 1 || horizon < 1) throw PreconditionError("ppo: n_envs and horizon must be >= 1");
        if (!(gamma > 0 && gamma <= 1) || !(lambda > 0 && lambda <= 1))
            throw PreconditionError("ppo: gamma and lambda must lie in (0, 1]");
        if (!(clip > 0)) throw PreconditionError("ppo: clip must be > 0");
        if (!(kl_target > 0)) throw PreconditionError("ppo: kl_target must be > 0");
        if (epochs < 1 || minibatches < 1) throw PreconditionError("ppo: epochs and minibatches must be >= 1");
        if (minibatches > n_envs * horizon) throw PreconditionError("ppo: more minibatches than samples");
        if (!(lr_min > 0 && lr_min <= lr_max)) throw PreconditionError("ppo: need 0 < lr_min <= lr_max");
        if (!(lr_factor > 1)) throw PreconditionError("ppo: lr_factor must be > 1");
        if (!(reward_scale > 0)) throw PreconditionError("ppo: reward_scale must be > 0");
    }
};

template <class S = float>
struct PPOPolicy {
    nets::Mlp<S> actor;
    std::vector<S> log_std;
    nets::Mlp<S> critic;

    PPOPolicy() = default;
    PPOPolicy(const PPOConfig& cfg, int obs_dim, int act_dim)
        : actor(nets::MlpSpec{obs_dim, cfg.hidden, act_dim}),
          log_std(static_cast<std::size_t>(act_dim), static_cast<S>(cfg.init_log_std)),
          critic(nets::MlpSpec{obs_dim, cfg.hidden, 1}) {}

    void init(Rng& rng, const PPOConfig& cfg) {
        actor.init(rng, cfg.actor_output_scale);
        critic.init(rng, 1.0);
        std::fill(log_std.begin(), log_std.end(), static_cast<S>(cfg.init_log_std));
    }

    int obs_dim() const { return actor.spec().input_dim; }
    int act_dim() const { return actor.spec().output_dim; }
};

template <class S = float>
struct PPOGrads {
    std::vector<S> actor, log_std, critic;

    explicit PPOGrads(const PPOPolicy<S>& p)
        : actor(p.actor.param_count()), log_std(p.log_std.size()), critic(p.critic.param_count()) {}
    void zero() {
        std::fill(actor.begin(), actor.end(), S(0));
        std::fill(log_std.begin(), log_std.end(), S(0));
        std::fill(critic.begin(), critic.end(), S(0));
    }
    bool finite() const {
        return nets::all_finite<S>(actor) && nets::all_finite<S>(log_std) && nets::all_finite<S>(critic);
    }
    /// Global-norm clip across all three groups.
    void clip(double max_norm) {
        double sq = 0.0;
        for (const auto* v : {&actor, &log_std, &critic})
            for (S g : *v) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (max_norm > 0 && norm > max_norm) {
            const S scale = static_cast<S>(max_norm / (norm + 1e-6));
            for (auto* v : {&actor, &log_std, &critic})
                for (S& g : *v) g *= scale;
        }
    }
};

template <class S = float>
struct PPOOptimizer {
    nets::AdamState<S> actor, log_std, critic;
    double lr = 1e-3;

    PPOOptimizer() = default;
    PPOOptimizer(const PPOPolicy<S>& p, double lr0)
        : actor(p.actor.param_count()), log_std(p.log_std.size()), critic(p.critic.param_count()), lr(lr0) {}
};

/// Samples for one update; row r = t * n_envs + env.
template <class S = float>
struct RolloutBuffer {
    int horizon = 0, n_envs = 0, obs_dim = 0, act_dim = 0;
    Matrix<S> obs, actions, means;
    std::vector<S> log_probs, values, rewards, advantages, returns;
    std::vector<std::uint8_t> dones;
    std::vector<S> log_std;  // policy log-std at collection time
    int filled = 0;          // time steps written

    RolloutBuffer() = default;
    RolloutBuffer(int T, int N, int od, int ad) : horizon(T), n_envs(N), obs_dim(od), act_dim(ad) {
        const auto rows = static_cast<Eigen::Index>(T) * N;
        obs.resize(rows, od);
        actions.resize(rows, ad);
        means.resize(rows, ad);
        const auto n = static_cast<std::size_t>(rows);
        log_probs.assign(n, 0);
        values.assign(n, 0);
        rewards.assign(n, 0);
        advantages.assign(n, 0);
        returns.assign(n, 0);
        dones.assign(n, 0);
    }

    std::size_t size() const { return static_cast<std::size_t>(horizon) * static_cast<std::size_t>(n_envs); }
    bool full() const { return filled == horizon; }
    void clear() { filled = 0; }

    /// Per-env GAE over the horizon, then advantage normalization over the whole buffer.
    void finish(std::span<const double> bootstrap_values, double gamma, double lambda) {
        if (!full()) throw PreconditionError("RolloutBuffer::finish: buffer not full");
        std::vector<double> r(horizon), v(horizon);
        std::vector<std::uint8_t> d(horizon);
        for (int e = 0; e < n_envs; ++e) {
            for (int t = 0; t < horizon; ++t) {
                const std::size_t i = static_cast<std::size_t>(t) * n_envs + e;
                r[t] = rewards[i];
                v[t] = values[i];
                d[t] = dones[i];
            }
            const auto g = compute_gae(r, v, d, bootstrap_values[e], gamma, lambda);
            for (int t = 0; t < horizon; ++t) {
                const std::size_t i = static_cast<std::size_t>(t) * n_envs + e;
                advantages[i] = static_cast<S>(g.advantages[t]);
                returns[i] = static_cast<S>(g.returns[t]);
            }
        }
        normalize<S>(advantages);
    }
};

struct MinibatchLoss {
    double total = 0.0;
    double policy = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    double kl = 0.0;
    double clip_frac = 0.0;
};

/// KL(old || new) between diagonal Gaussians for one row.
template <class S>
double gaussian_kl(std::span<const S> mean_old, std::span<const S> ls_old, std::span<const S> mean_new,
                   std::span<const S> ls_new) {
    double kl = 0.0;
    for (std::size_t j = 0; j < mean_old.size(); ++j) {
        const double var_old = std::exp(2.0 * ls_old[j]);
        const double var_new = std::exp(2.0 * ls_new[j]);
        const double dm = static_cast<double>(mean_old[j]) - mean_new[j];
        kl += (ls_new[j] - ls_old[j]) + (var_old + dm * dm) / (2.0 * var_new) - 0.5;
    }
    return kl;
}

/// Loss = -mean(clipped surrogate) + value_coef * mean((V - R)^2) - entropy_coef * entropy.
/// Gradients are accumulated into `grads`.
template <class S>
MinibatchLoss ppo_minibatch(const PPOPolicy<S>& pol, const Matrix<S>& obs, const Matrix<S>& actions,
                            std::span<const S> old_logp, const Matrix<S>& old_means, std::span<const S> old_log_std,
                            std::span<const S> adv, std::span<const S> ret, const PPOConfig& cfg,
                            PPOGrads<S>& grads) {
    const auto B = obs.rows();
    const auto A = static_cast<std::size_t>(pol.act_dim());
    const S inv_b = S(1) / static_cast<S>(B);
    const S eps = static_cast<S>(cfg.clip);

    typename nets::Mlp<S>::Cache actor_cache, critic_cache;
    const Matrix<S> mean = pol.actor.forward(obs, &actor_cache);
    const Matrix<S> value = pol.critic.forward(obs, &critic_cache);

    Matrix<S> d_mean(B, static_cast<Eigen::Index>(A));
    Matrix<S> d_value(B, 1);
    std::vector<S> dm(A), dls(A);
    MinibatchLoss out;
    double surrogate_sum = 0.0, value_sum = 0.0, kl_sum = 0.0;
    int clipped = 0;

    for (Eigen::Index i = 0; i < B; ++i) {
        const std::span<const S> mu(mean.row(i).data(), A);
        const std::span<const S> act(actions.row(i).data(), A);
        const S lp = nets::gaussian_log_prob<S>(mu, pol.log_std, act);
        const S ratio = std::exp(lp - old_logp[i]);
        const S a = adv[i];
        const S unclipped = ratio * a;
        const S surr = clipped_surrogate<S>(ratio, a, eps);
        surrogate_sum += surr;
        if (std::abs(ratio - S(1)) > eps) ++clipped;

        // d(-surr/B)/dlogp: the unclipped branch carries the gradient when it is the minimum
        const S d_lp = unclipped <= surr ? -unclipped * inv_b : S(0);
        nets::gaussian_log_prob_grad<S>(mu, pol.log_std, act, dm, dls);
        for (std::size_t j = 0; j < A; ++j) {
            d_mean(i, static_cast<Eigen::Index>(j)) = d_lp * dm[j];
            grads.log_std[j] += d_lp * dls[j];
        }

        const S err = value(i, 0) - ret[i];
        value_sum += static_cast<double>(err) * err;
        d_value(i, 0) = static_cast<S>(cfg.value_coef) * S(2) * err * inv_b;

        kl_sum += gaussian_kl<S>(std::span<const S>(old_means.row(i).data(), A), old_log_std, mu, pol.log_std);
    }

    const double entropy = nets::gaussian_entropy<S>(pol.log_std);
    for (std::size_t j = 0; j < A; ++j) grads.log_std[j] -= static_cast<S>(cfg.entropy_coef);

    pol.actor.backward(actor_cache, d_mean, grads.actor);
    pol.critic.backward(critic_cache, d_value, grads.critic);

    out.policy = -surrogate_sum / B;
    out.value = value_sum / B;
    out.entropy = entropy;
    out.total = out.policy + cfg.value_coef * out.value - cfg.entropy_coef * entropy;
    out.kl = kl_sum / B;
    out.clip_frac = static_cast<double>(clipped) / B;
    return out;
}

/// Adaptive-KL rule applied after each epoch.
inline double adapt_lr(double lr, double kl, const PPOConfig& cfg) {
    if (kl > cfg.kl_high * cfg.kl_target) lr /= cfg.lr_factor;
    else if (kl < cfg.kl_low * cfg.kl_target) lr *= cfg.lr_factor;
    return std::clamp(lr, cfg.lr_min, cfg.lr_max);
}

/// Several epochs of shuffled minibatch updates. On any non-finite loss or
/// gradient the policy and optimizer are restored and `fault` is set.
template <class S>
TrainStats ppo_update(const RolloutBuffer<S>& buf, PPOPolicy<S>& pol, PPOOptimizer<S>& opt, const PPOConfig& cfg,
                      Rng& rng) {
    if (!buf.full()) throw PreconditionError("ppo_update: rollout buffer not full");
    const PPOPolicy<S> pol_backup = pol;
    const PPOOptimizer<S> opt_backup = opt;

    const std::size_t n = buf.size();
    const std::size_t mb = n / static_cast<std::size_t>(cfg.minibatches);
    std::vector<std::size_t> perm(n);
    PPOGrads<S> grads(pol);

    TrainStats st;
    double kl_all = 0.0, clip_all = 0.0, pol_all = 0.0, val_all = 0.0;
    int count = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);

        double kl_epoch = 0.0;
        for (int b = 0; b < cfg.minibatches; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * mb;
            const std::size_t hi = b + 1 == cfg.minibatches ? n : lo + mb;
            const auto rows = static_cast<Eigen::Index>(hi - lo);
            Matrix<S> obs(rows, buf.obs_dim), act(rows, buf.act_dim), old_mean(rows, buf.act_dim);
            std::vector<S> old_lp(hi - lo), adv(hi - lo), ret(hi - lo);
            for (std::size_t k = lo; k < hi; ++k) {
                const auto r = static_cast<Eigen::Index>(k - lo);
                const auto src = static_cast<Eigen::Index>(perm[k]);
                obs.row(r) = buf.obs.row(src);
                act.row(r) = buf.actions.row(src);
                old_mean.row(r) = buf.means.row(src);
                old_lp[k - lo] = buf.log_probs[perm[k]];
                adv[k - lo] = buf.advantages[perm[k]];
                ret[k - lo] = buf.returns[perm[k]];
            }

            grads.zero();
            const auto loss = ppo_minibatch<S>(pol, obs, act, old_lp, old_mean, buf.log_std, adv, ret, cfg, grads);
            if (!std::isfinite(loss.total) || !grads.finite()) {
                pol = pol_backup;
                opt = opt_backup;
                st.fault = true;
                st.lr = opt.lr;
                return st;
            }
            grads.clip(cfg.max_grad_norm);
            nets::adam_step<S>(pol.actor.params(), grads.actor, opt.actor, opt.lr);
            nets::adam_step<S>(pol.log_std, grads.log_std, opt.log_std, opt.lr);
            nets::adam_step<S>(pol.critic.params(), grads.critic, opt.critic, opt.lr);

            kl_epoch += loss.kl;
            kl_all += loss.kl;
            clip_all += loss.clip_frac;
            pol_all += loss.policy;
            val_all += loss.value;
            ++count;
        }
        opt.lr = adapt_lr(opt.lr, kl_epoch / cfg.minibatches, cfg);
    }

    st.kl = kl_all / count;
    st.clip_frac = clip_all / count;
    st.actor_loss = pol_all / count;
    st.critic_loss = val_all / count;
    st.lr = opt.lr;
    return st;
}

}  // namespace ductnav::algo
