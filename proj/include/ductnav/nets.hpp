#pragma once

// Dense networks with hand-written reverse mode: ELU MLPs over a flat
// parameter vector, diagonal-Gaussian policy heads (plain and
// tanh-squashed), and Adam. Templated on the scalar so gradient checks can
// run in double while training runs in float.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ductnav/error.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::nets {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden{256, 128};
    int output_dim = 1;

    std::vector<int> widths() const {
        std::vector<int> w{input_dim};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(output_dim);
        return w;
    }

    std::size_t param_count() const {
        const auto w = widths();
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l)
            n += static_cast<std::size_t>(w[l] + 1) * static_cast<std::size_t>(w[l + 1]);
        return n;
    }

    void validate() const {
        for (int w : widths())
            if (w < 1) throw PreconditionError("MlpSpec: all layer widths must be >= 1");
    }
};

template <class S>
inline S elu(S x) {
    return x > S(0) ? x : std::expm1(x);
}

template <class S>
inline S elu_grad(S x) {
    return x > S(0) ? S(1) : std::exp(x);
}

/// ELU hidden layers, linear output. Each layer stores W (out x in, row-major) then b (out).
template <class S>
class Mlp {
public:
    struct Cache {
        std::vector<Matrix<S>> inputs;  // input to each layer
        std::vector<Matrix<S>> pre;     // pre-activation of each hidden layer
    };

    Mlp() = default;
    explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        params_.assign(spec_.param_count(), S(0));
        const auto w = spec_.widths();
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            offsets_.push_back(off);
            off += static_cast<std::size_t>(w[l] + 1) * static_cast<std::size_t>(w[l + 1]);
        }
    }

    const MlpSpec& spec() const { return spec_; }
    std::size_t layers() const { return offsets_.size(); }
    std::size_t param_count() const { return params_.size(); }
    std::span<S> params() { return params_; }
    std::span<const S> params() const { return params_; }

    /// Fan-in scaled uniform weights (variance 1/fan_in), zero biases; last layer scaled by `output_scale`.
    void init(Rng& rng, double output_scale = 1.0) {
        const auto w = spec_.widths();
        for (std::size_t l = 0; l < layers(); ++l) {
            const int in = w[l], out = w[l + 1];
            const double bound = std::sqrt(3.0 / in) * (l + 1 == layers() ? output_scale : 1.0);
            S* W = params_.data() + offsets_[l];
            for (int i = 0; i < out * in; ++i) W[i] = static_cast<S>(rng.uniform(-bound, bound));
            for (int i = 0; i < out; ++i) W[out * in + i] = S(0);
        }
    }

    Matrix<S> forward(const Matrix<S>& x, Cache* cache = nullptr) const {
        if (x.cols() != spec_.input_dim)
            throw PreconditionError("Mlp::forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                                    std::to_string(spec_.input_dim));
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        Matrix<S> h = x;
        for (std::size_t l = 0; l < layers(); ++l) {
            if (cache) cache->inputs.push_back(h);
            Matrix<S> z = h * weight(l).transpose();
            z.rowwise() += bias(l);
            if (l + 1 < layers()) {
                if (cache) cache->pre.push_back(z);
                h = z.unaryExpr([](S v) { return elu(v); });
            } else {
                h = std::move(z);
            }
        }
        return h;
    }

    /// Accumulates dL/dparams into `grad` (same layout as params) and returns dL/dx.
    Matrix<S> backward(const Cache& cache, const Matrix<S>& dy, std::span<S> grad) const {
        if (grad.size() != params_.size()) throw PreconditionError("Mlp::backward: gradient size mismatch");
        if (cache.inputs.size() != layers()) throw PreconditionError("Mlp::backward: missing forward cache");
        Matrix<S> dz = dy;
        for (std::size_t l = layers(); l-- > 0;) {
            const auto [in, out] = shape(l);
            Eigen::Map<Matrix<S>> gW(grad.data() + offsets_[l], out, in);
            Eigen::Map<RowVector<S>> gb(grad.data() + offsets_[l] + static_cast<std::size_t>(out * in), out);
            gW.noalias() += dz.transpose() * cache.inputs[l];
            gb += dz.colwise().sum();
            Matrix<S> dx = dz * weight(l);
            if (l == 0) return dx;
            dz = dx.cwiseProduct(cache.pre[l - 1].unaryExpr([](S v) { return elu_grad(v); }));
        }
        return dz;
    }

private:
    std::pair<int, int> shape(std::size_t l) const {
        const auto w = spec_.widths();
        return {w[l], w[l + 1]};
    }
    Eigen::Map<const Matrix<S>> weight(std::size_t l) const {
        const auto [in, out] = shape(l);
        return Eigen::Map<const Matrix<S>>(params_.data() + offsets_[l], out, in);
    }
    Eigen::Map<const RowVector<S>> bias(std::size_t l) const {
        const auto [in, out] = shape(l);
        return Eigen::Map<const RowVector<S>>(params_.data() + offsets_[l] + static_cast<std::size_t>(out * in),
                                              out);
    }

    MlpSpec spec_;
    std::vector<S> params_;
    std::vector<std::size_t> offsets_;
};

// ---------------------------------------------------------------------------
// Gaussian heads

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

template <class S>
S gaussian_log_prob(std::span<const S> mean, std::span<const S> log_std, std::span<const S> action) {
    S lp = S(0);
    for (std::size_t j = 0; j < mean.size(); ++j) {
        const S z = (action[j] - mean[j]) / std::exp(log_std[j]);
        lp += S(-0.5) * z * z - log_std[j] - S(kHalfLog2Pi);
    }
    return lp;
}

/// Entropy of a diagonal Gaussian: sum(log_std) + dim * 0.5 * ln(2 pi e).
template <class S>
S gaussian_entropy(std::span<const S> log_std) {
    S h = S(0);
    for (S ls : log_std) h += ls + S(kHalfLog2Pi + 0.5);
    return h;
}

/// log(1 - tanh(u)^2) without cancellation.
template <class S>
S log1m_tanh_sq(S u) {
    const S x = S(-2) * u;
    const S softplus = x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return S(2) * (S(std::numbers::ln2) - u - softplus);
}

/// Density of a = tanh(u), u ~ N(mean, std): Gaussian log-prob of u minus the tanh log-Jacobian.
template <class S>
S squashed_log_prob(std::span<const S> mean, std::span<const S> log_std, std::span<const S> u) {
    S lp = gaussian_log_prob(mean, log_std, u);
    for (S v : u) lp -= log1m_tanh_sq(v);
    return lp;
}

/// dlogp/dmean = z / std, dlogp/dlog_std = z^2 - 1 with z = (a - mean) / std.
template <class S>
void gaussian_log_prob_grad(std::span<const S> mean, std::span<const S> log_std, std::span<const S> action,
                            std::span<S> d_mean, std::span<S> d_log_std) {
    for (std::size_t j = 0; j < mean.size(); ++j) {
        const S sd = std::exp(log_std[j]);
        const S z = (action[j] - mean[j]) / sd;
        d_mean[j] = z / sd;
        d_log_std[j] = z * z - S(1);
    }
}

template <class S>
S clamp_log_std(S raw) {
    return std::clamp(raw, S(kLogStdMin), S(kLogStdMax));
}

/// One reparameterized draw from the squashed head for a single row.
template <class S>
struct SquashedSample {
    std::vector<S> noise;  // epsilon
    std::vector<S> pre_tanh;
    std::vector<S> action;
    S log_prob = S(0);
};

/// `head` holds [mean(dim), raw_log_std(dim)].
template <class S>
SquashedSample<S> squashed_sample(std::span<const S> head, std::span<const S> noise) {
    const std::size_t dim = head.size() / 2;
    SquashedSample<S> s;
    s.noise.assign(noise.begin(), noise.end());
    s.pre_tanh.resize(dim);
    s.action.resize(dim);
    S lp = S(0);
    for (std::size_t j = 0; j < dim; ++j) {
        const S ls = clamp_log_std(head[dim + j]);
        const S u = head[j] + std::exp(ls) * noise[j];
        s.pre_tanh[j] = u;
        s.action[j] = std::tanh(u);
        lp += S(-0.5) * noise[j] * noise[j] - ls - S(kHalfLog2Pi) - log1m_tanh_sq(u);
    }
    s.log_prob = lp;
    return s;
}

/// Chain rule through a squashed draw with the noise held fixed:
/// given dL/daction and dL/dlog_prob, writes dL/dhead ([mean, raw_log_std]).
template <class S>
void squashed_backward(std::span<const S> head, const SquashedSample<S>& s, std::span<const S> d_action,
                       S d_log_prob, std::span<S> d_head) {
    const std::size_t dim = head.size() / 2;
    for (std::size_t j = 0; j < dim; ++j) {
        const S raw = head[dim + j];
        const S ls = clamp_log_std(raw);
        const S a = s.action[j];
        const S du = d_action[j] * (S(1) - a * a) + d_log_prob * S(2) * a;
        d_head[j] = du;
        const S dls = du * std::exp(ls) * s.noise[j] - d_log_prob;
        d_head[dim + j] = (raw >= S(kLogStdMin) && raw <= S(kLogStdMax)) ? dls : S(0);
    }
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct AdamState {
    std::vector<S> m;
    std::vector<S> v;
    std::int64_t t = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, S(0)), v(n, S(0)) {}
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class S>
void adam_step(std::span<S> params, std::span<const S> grads, AdamState<S>& st, double lr,
               const AdamHyper& h = {}) {
    if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
        throw PreconditionError("adam_step: shape mismatch");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
    const S b1 = S(h.beta1), b2 = S(h.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const S g = grads[i];
        st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
        st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
        const double mh = static_cast<double>(st.m[i]) / bc1;
        const double vh = static_cast<double>(st.v[i]) / bc2;
        params[i] -= static_cast<S>(lr * mh / (std::sqrt(vh) + h.eps));
    }
}

/// Scales `grads` in place so its L2 norm is at most `max_norm`; returns the norm before scaling.
template <class S>
double clip_grad_norm(std::span<S> grads, double max_norm) {
    double sq = 0.0;
    for (S g : grads) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const S scale = static_cast<S>(max_norm / (norm + 1e-6));
        for (S& g : grads) g *= scale;
    }
    return norm;
}

template <class S>
bool all_finite(std::span<const S> xs) {
    return std::all_of(xs.begin(), xs.end(), [](S x) { return std::isfinite(x); });
}

}  // namespace ductnav::nets
