#pragma once

// Soft actor-critic: tanh-squashed Gaussian actor, twin Q critics with
// Polyak-averaged targets, log-parameterized entropy temperature tuned
// toward a target entropy, and a FIFO replay buffer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ductnav/algo/common.hpp"
#include "ductnav/error.hpp"
#include "ductnav/nets.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::algo {

using nets::Matrix;

struct SACConfig {
    int n_envs = 4;
    std::size_t capacity = 1000000;
    int batch = 512;
    double tau = 0.005;
    double gamma = 0.99;
    LinearSchedule lr = LinearSchedule::default_sac();
    double target_entropy = -4.0;
    int warmup = 5000;
    int gradient_steps = 0;  // per vector step; 0 means one per environment transition
    int steps_per_iteration = 1000;
    double init_alpha = 1.0;
    std::vector<int> hidden{256, 128};

    int updates_per_vec_step() const { return gradient_steps > 0 ? gradient_steps : n_envs; }

    void validate() const {
        if (n_envs < 1) throw PreconditionError("sac: n_envs must be >= 1");
        if (!(tau > 0 && tau < 1)) throw PreconditionError("sac: tau must lie in (0, 1)");
        if (!(gamma > 0 && gamma <= 1)) throw PreconditionError("sac: gamma must lie in (0, 1]");
        if (batch < 1 || capacity < static_cast<std::size_t>(batch))
            throw PreconditionError("sac: capacity must be >= batch >= 1");
        if (warmup < 0 || steps_per_iteration < 1) throw PreconditionError("sac: bad warmup / steps_per_iteration");
        if (!(init_alpha > 0)) throw PreconditionError("sac: init_alpha must be > 0");
        if (!(lr.initial >= 0) || !(lr.final >= 0) || !(lr.horizon_steps > 0))
            throw PreconditionError("sac: invalid learning-rate schedule");
    }
};

/// Ring buffer of transitions; logical index 0 is the oldest surviving entry.
template <class S = float>
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim)
        : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
        if (capacity == 0) throw PreconditionError("ReplayBuffer: capacity must be > 0");
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return size_; }
    std::size_t cursor() const { return cursor_; }
    int obs_dim() const { return obs_dim_; }
    int act_dim() const { return act_dim_; }

    void add(std::span<const S> obs, std::span<const S> act, S reward, std::span<const S> next_obs, bool done) {
        if (obs.size() != static_cast<std::size_t>(obs_dim_) || next_obs.size() != obs.size() ||
            act.size() != static_cast<std::size_t>(act_dim_))
            throw PreconditionError("ReplayBuffer::add: shape mismatch");
        if (size_ < capacity_) {
            obs_.insert(obs_.end(), obs.begin(), obs.end());
            act_.insert(act_.end(), act.begin(), act.end());
            next_obs_.insert(next_obs_.end(), next_obs.begin(), next_obs.end());
            rew_.push_back(reward);
            done_.push_back(done ? 1 : 0);
            ++size_;
        } else {
            std::copy(obs.begin(), obs.end(), obs_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
            std::copy(act.begin(), act.end(), act_.begin() + static_cast<std::ptrdiff_t>(cursor_ * act_dim_));
            std::copy(next_obs.begin(), next_obs.end(),
                      next_obs_.begin() + static_cast<std::ptrdiff_t>(cursor_ * obs_dim_));
            rew_[cursor_] = reward;
            done_[cursor_] = done ? 1 : 0;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    /// Physical slot of the i-th oldest entry.
    std::size_t slot(std::size_t logical) const {
        return size_ < capacity_ ? logical : (cursor_ + logical) % capacity_;
    }

    std::span<const S> obs(std::size_t slot) const { return {obs_.data() + slot * obs_dim_, static_cast<std::size_t>(obs_dim_)}; }
    std::span<const S> act(std::size_t slot) const { return {act_.data() + slot * act_dim_, static_cast<std::size_t>(act_dim_)}; }
    std::span<const S> next_obs(std::size_t slot) const {
        return {next_obs_.data() + slot * obs_dim_, static_cast<std::size_t>(obs_dim_)};
    }
    S reward(std::size_t slot) const { return rew_[slot]; }
    bool done(std::size_t slot) const { return done_[slot] != 0; }

    /// Uniform sample (with replacement) of physical slots.
    std::vector<std::size_t> sample(Rng& rng, std::size_t n) const {
        if (size_ == 0) throw PreconditionError("ReplayBuffer::sample: empty buffer");
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = rng.index(size_);
        return idx;
    }

    // raw storage access for checkpointing
    const std::vector<S>& raw_obs() const { return obs_; }
    const std::vector<S>& raw_act() const { return act_; }
    const std::vector<S>& raw_next_obs() const { return next_obs_; }
    const std::vector<S>& raw_rew() const { return rew_; }
    const std::vector<std::uint8_t>& raw_done() const { return done_; }
    void assign_raw(std::vector<S> o, std::vector<S> a, std::vector<S> r, std::vector<S> no,
                    std::vector<std::uint8_t> d, std::size_t size, std::size_t cursor) {
        if (o.size() != size * obs_dim_ || no.size() != o.size() || a.size() != size * act_dim_ || r.size() != size ||
            d.size() != size || size > capacity_ || cursor >= capacity_)
            throw PreconditionError("ReplayBuffer::assign_raw: inconsistent arrays");
        obs_ = std::move(o);
        act_ = std::move(a);
        rew_ = std::move(r);
        next_obs_ = std::move(no);
        done_ = std::move(d);
        size_ = size;
        cursor_ = cursor;
    }

private:
    std::size_t capacity_ = 0;
    int obs_dim_ = 0, act_dim_ = 0;
    std::size_t size_ = 0, cursor_ = 0;
    std::vector<S> obs_, act_, next_obs_, rew_;
    std::vector<std::uint8_t> done_;
};

template <class S = float>
struct SACNets {
    nets::Mlp<S> actor;  // obs -> [mean, raw log-std]
    nets::Mlp<S> q1, q2, q1_target, q2_target;
    double log_alpha = 0.0;

    SACNets() = default;
    SACNets(const SACConfig& cfg, int obs_dim, int act_dim)
        : actor(nets::MlpSpec{obs_dim, cfg.hidden, 2 * act_dim}),
          q1(nets::MlpSpec{obs_dim + act_dim, cfg.hidden, 1}),
          q2(q1.spec()),
          q1_target(q1.spec()),
          q2_target(q1.spec()),
          log_alpha(std::log(cfg.init_alpha)) {}

    void init(Rng& rng) {
        actor.init(rng, 0.01);
        q1.init(rng);
        q2.init(rng);
        std::copy(q1.params().begin(), q1.params().end(), q1_target.params().begin());
        std::copy(q2.params().begin(), q2.params().end(), q2_target.params().begin());
    }

    int obs_dim() const { return actor.spec().input_dim; }
    int act_dim() const { return actor.spec().output_dim / 2; }
    double alpha() const { return std::exp(log_alpha); }
};

template <class S = float>
struct SACOptimizer {
    nets::AdamState<S> actor, q1, q2;
    nets::AdamState<double> log_alpha{1};
    std::int64_t updates = 0;

    SACOptimizer() = default;
    explicit SACOptimizer(const SACNets<S>& n)
        : actor(n.actor.param_count()), q1(n.q1.param_count()), q2(n.q2.param_count()) {}
};

template <class S>
Matrix<S> concat_cols(const Matrix<S>& a, const Matrix<S>& b) {
    Matrix<S> out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

/// Reparameterized draws for every row of `head`; noise is B x act_dim.
template <class S>
std::vector<nets::SquashedSample<S>> sample_rows(const Matrix<S>& head, const Matrix<S>& noise) {
    std::vector<nets::SquashedSample<S>> out;
    out.reserve(static_cast<std::size_t>(head.rows()));
    for (Eigen::Index i = 0; i < head.rows(); ++i)
        out.push_back(nets::squashed_sample<S>(std::span<const S>(head.row(i).data(), head.cols()),
                                               std::span<const S>(noise.row(i).data(), noise.cols())));
    return out;
}

template <class S>
Matrix<S> standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
    return m;
}

/// mean((Q(s,a) - y)^2); gradient accumulated into `grad`.
template <class S>
double sac_critic_loss(const nets::Mlp<S>& q, const Matrix<S>& obs_act, std::span<const S> y, std::span<S> grad) {
    typename nets::Mlp<S>::Cache cache;
    const Matrix<S> qv = q.forward(obs_act, &cache);
    const auto B = qv.rows();
    Matrix<S> dq(B, 1);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < B; ++i) {
        const S e = qv(i, 0) - y[i];
        loss += static_cast<double>(e) * e;
        dq(i, 0) = S(2) * e / static_cast<S>(B);
    }
    q.backward(cache, dq, grad);
    return loss / B;
}

struct ActorLoss {
    double loss = 0.0;
    double mean_log_prob = 0.0;
};

/// mean(alpha * logpi(a~|s) - min(Q1, Q2)(s, a~)) with a~ reparameterized from `noise`.
/// Gradient w.r.t. the actor parameters accumulated into `grad`.
template <class S>
ActorLoss sac_actor_loss(const nets::Mlp<S>& actor, const nets::Mlp<S>& q1, const nets::Mlp<S>& q2,
                         const Matrix<S>& obs, const Matrix<S>& noise, S alpha, std::span<S> grad) {
    const auto B = obs.rows();
    const auto A = noise.cols();
    typename nets::Mlp<S>::Cache actor_cache, c1, c2;
    const Matrix<S> head = actor.forward(obs, &actor_cache);
    const auto samples = sample_rows<S>(head, noise);

    Matrix<S> act(B, A);
    for (Eigen::Index i = 0; i < B; ++i)
        for (Eigen::Index j = 0; j < A; ++j) act(i, j) = samples[static_cast<std::size_t>(i)].action[j];
    const Matrix<S> x = concat_cols<S>(obs, act);
    const Matrix<S> v1 = q1.forward(x, &c1);
    const Matrix<S> v2 = q2.forward(x, &c2);

    ActorLoss out;
    Matrix<S> d1 = Matrix<S>::Zero(B, 1), d2 = Matrix<S>::Zero(B, 1);
    const S inv_b = S(1) / static_cast<S>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const S lp = samples[static_cast<std::size_t>(i)].log_prob;
        const S qmin = std::min(v1(i, 0), v2(i, 0));
        out.loss += static_cast<double>(alpha * lp - qmin);
        out.mean_log_prob += lp;
        // ties go to the first critic
        if (v1(i, 0) <= v2(i, 0)) d1(i, 0) = -inv_b;
        else d2(i, 0) = -inv_b;
    }
    out.loss /= B;
    out.mean_log_prob /= B;

    std::vector<S> scratch1(q1.param_count()), scratch2(q2.param_count());
    const Matrix<S> dx1 = q1.backward(c1, d1, scratch1);
    const Matrix<S> dx2 = q2.backward(c2, d2, scratch2);

    Matrix<S> d_head(B, head.cols());
    std::vector<S> da(static_cast<std::size_t>(A));
    for (Eigen::Index i = 0; i < B; ++i) {
        for (Eigen::Index j = 0; j < A; ++j) da[j] = dx1(i, obs.cols() + j) + dx2(i, obs.cols() + j);
        nets::squashed_backward<S>(std::span<const S>(head.row(i).data(), head.cols()),
                                   samples[static_cast<std::size_t>(i)], da, alpha * inv_b,
                                   std::span<S>(d_head.row(i).data(), head.cols()));
    }
    actor.backward(actor_cache, d_head, grad);
    return out;
}

/// One gradient step on critics, actor and temperature, then target averaging.
template <class S>
TrainStats sac_update(const ReplayBuffer<S>& replay, SACNets<S>& nets_, SACOptimizer<S>& opt, const SACConfig& cfg,
                      Rng& rng, double lr) {
    if (replay.size() < static_cast<std::size_t>(cfg.batch))
        throw PreconditionError("sac_update: replay holds fewer transitions than one batch");
    const SACNets<S> backup = nets_;
    const SACOptimizer<S> opt_backup = opt;

    const int od = replay.obs_dim(), ad = replay.act_dim();
    const auto B = static_cast<Eigen::Index>(cfg.batch);
    const auto idx = replay.sample(rng, static_cast<std::size_t>(cfg.batch));
    Matrix<S> obs(B, od), next(B, od), act(B, ad);
    std::vector<S> rew(idx.size());
    std::vector<std::uint8_t> done(idx.size());
    for (Eigen::Index i = 0; i < B; ++i) {
        const std::size_t s = idx[static_cast<std::size_t>(i)];
        for (int j = 0; j < od; ++j) obs(i, j) = replay.obs(s)[j], next(i, j) = replay.next_obs(s)[j];
        for (int j = 0; j < ad; ++j) act(i, j) = replay.act(s)[j];
        rew[static_cast<std::size_t>(i)] = replay.reward(s);
        done[static_cast<std::size_t>(i)] = replay.done(s);
    }

    const S alpha = static_cast<S>(nets_.alpha());
    TrainStats st;
    st.lr = lr;

    // soft Bellman targets from a fresh next action
    const Matrix<S> next_head = nets_.actor.forward(next);
    const auto next_samples = sample_rows<S>(next_head, standard_normal<S>(rng, B, ad));
    Matrix<S> next_act(B, ad);
    for (Eigen::Index i = 0; i < B; ++i)
        for (int j = 0; j < ad; ++j) next_act(i, j) = next_samples[static_cast<std::size_t>(i)].action[j];
    const Matrix<S> next_x = concat_cols<S>(next, next_act);
    const Matrix<S> t1 = nets_.q1_target.forward(next_x), t2 = nets_.q2_target.forward(next_x);
    std::vector<S> y(idx.size());
    for (Eigen::Index i = 0; i < B; ++i)
        y[static_cast<std::size_t>(i)] =
            soft_q_target<S>(rew[static_cast<std::size_t>(i)], static_cast<S>(cfg.gamma),
                             done[static_cast<std::size_t>(i)] != 0, std::min(t1(i, 0), t2(i, 0)), alpha,
                             next_samples[static_cast<std::size_t>(i)].log_prob);

    const Matrix<S> x = concat_cols<S>(obs, act);
    std::vector<S> g1(nets_.q1.param_count()), g2(nets_.q2.param_count());
    const double l1 = sac_critic_loss<S>(nets_.q1, x, y, g1);
    const double l2 = sac_critic_loss<S>(nets_.q2, x, y, g2);

    // actor against the updated critics
    bool ok = std::isfinite(l1) && std::isfinite(l2) && nets::all_finite<S>(g1) && nets::all_finite<S>(g2);
    ActorLoss al;
    double alpha_grad = 0.0;
    if (ok) {
        nets::adam_step<S>(nets_.q1.params(), g1, opt.q1, lr);
        nets::adam_step<S>(nets_.q2.params(), g2, opt.q2, lr);
        std::vector<S> ga(nets_.actor.param_count());
        al = sac_actor_loss<S>(nets_.actor, nets_.q1, nets_.q2, obs, standard_normal<S>(rng, B, ad), alpha, ga);
        ok = std::isfinite(al.loss) && nets::all_finite<S>(ga);
        if (ok) {
            nets::adam_step<S>(nets_.actor.params(), ga, opt.actor, lr);
            // temperature loss alpha * (-logpi - target_entropy), differentiated w.r.t. log alpha
            alpha_grad = nets_.alpha() * (-al.mean_log_prob - cfg.target_entropy);
            std::vector<double> la{nets_.log_alpha}, gl{alpha_grad};
            nets::adam_step<double>(la, gl, opt.log_alpha, lr);
            nets_.log_alpha = la[0];
            ok = std::isfinite(nets_.log_alpha);
        }
    }
    if (!ok) {
        nets_ = backup;
        opt = opt_backup;
        st.fault = true;
        st.alpha = nets_.alpha();
        return st;
    }

    soft_update<S>(nets_.q1_target.params(), std::span<const S>(nets_.q1.params()), cfg.tau);
    soft_update<S>(nets_.q2_target.params(), std::span<const S>(nets_.q2.params()), cfg.tau);
    opt.updates += 1;

    st.critic_loss = 0.5 * (l1 + l2);
    st.actor_loss = al.loss;
    st.alpha = nets_.alpha();
    return st;
}

}  // namespace ductnav::algo
