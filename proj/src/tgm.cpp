#include "orflow/tgm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "orflow/types.hpp"

namespace orflow {

namespace {

constexpr double kSigmaFloor = 1e-3;

void check_config(const TgmConfig& cfg) {
    if (cfg.kernel_length < 3 || cfg.kernel_length % 2 == 0)
        throw ConfigError("tgm: kernel_length must be odd and >= 3");
    if (cfg.num_gaussians < 1) throw ConfigError("tgm: num_gaussians must be >= 1");
    if (cfg.in_channels < 1 || cfg.out_channels < 1)
        throw ConfigError("tgm: channel counts must be >= 1");
}

}  // namespace

Ten3 tgm_apply(const Ten3& x, const KernelBank& bank) {
    const std::size_t c_out = bank.kernels.rows;
    const std::size_t c_in = bank.attention.cols;
    const std::size_t L = bank.kernels.cols;
    if (bank.attention.rows != c_out) throw std::invalid_argument("tgm_apply: bank shape mismatch");
    if (x.groups != c_in) throw std::invalid_argument("tgm_apply: input channel-group mismatch");
    const std::int64_t T = static_cast<std::int64_t>(x.steps);
    const std::size_t D = x.dim;
    const std::int64_t ctr = static_cast<std::int64_t>(L - 1) / 2;

    // Mix channels first, then convolve over time: the kernel is shared
    // across input channels within an output row, so the two stages commute
    // with the naive triple sum.
    Ten3 y(c_out, x.steps, D);
    std::vector<double> u(x.steps * D);
    for (std::size_t c = 0; c < c_out; ++c) {
        std::fill(u.begin(), u.end(), 0.0);
        for (std::size_t j = 0; j < c_in; ++j) {
            const double a = bank.attention(c, j);
            if (a == 0.0) continue;
            const double* xs = x.slab(j, 0);
            for (std::size_t i = 0; i < u.size(); ++i) u[i] += a * xs[i];
        }
        const double* k = bank.kernels.row(c);
        for (std::int64_t t = 0; t < T; ++t) {
            double* yt = y.slab(c, static_cast<std::size_t>(t));
            for (std::size_t tau = 0; tau < L; ++tau) {
                const std::int64_t src = t + static_cast<std::int64_t>(tau) - ctr;
                if (src < 0 || src >= T) continue;
                const double kv = k[tau];
                const double* us = u.data() + static_cast<std::size_t>(src) * D;
                for (std::size_t d = 0; d < D; ++d) yt[d] += kv * us[d];
            }
        }
    }
    return y;
}

TgmLayer::TgmLayer(std::string name, const TgmConfig& cfg, Rng& rng)
    : cfg_(cfg),
      mu_hat_(name + ".mu_hat", 1, cfg.num_gaussians),
      sigma_hat_(name + ".sigma_hat", 1, cfg.num_gaussians),
      mix_logits_(name + ".mix_logits", cfg.out_channels, cfg.num_gaussians),
      attn_logits_(name + ".attn_logits", cfg.out_channels, cfg.in_channels) {
    check_config(cfg);
    // Diverse centers, moderate widths, unbiased mixing and attention.
    for (double& v : mu_hat_.value.data) v = rng.uniform(-1.0, 1.0);
}

void TgmLayer::eval_gaussians(Mat& gauss, std::vector<double>& mu, std::vector<double>& sigma) const {
    const std::size_t M = cfg_.num_gaussians;
    const std::size_t L = cfg_.kernel_length;
    const double half = static_cast<double>(L - 1) / 2.0;
    mu.resize(M);
    sigma.resize(M);
    gauss = Mat(M, L);
    for (std::size_t m = 0; m < M; ++m) {
        mu[m] = half * (std::tanh(mu_hat_.value.data[m]) + 1.0);
        sigma[m] = softplus(sigma_hat_.value.data[m]) + kSigmaFloor;
        // Shift exponents by their max before exponentiating so a collapsed
        // width cannot underflow every sample to zero; the shift cancels in
        // the normalization.
        double* g = gauss.row(m);
        double emax = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < L; ++t) {
            const double z = (static_cast<double>(t) - mu[m]) / sigma[m];
            g[t] = -0.5 * z * z;
            emax = std::max(emax, g[t]);
        }
        double sum = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            g[t] = std::exp(g[t] - emax);
            sum += g[t];
        }
        for (std::size_t t = 0; t < L; ++t) g[t] /= sum;
    }
}

KernelBank TgmLayer::compute_kernels() const {
    Mat gauss;
    std::vector<double> mu, sigma;
    eval_gaussians(gauss, mu, sigma);
    const Mat mix = softmax_rows(mix_logits_.value);
    KernelBank bank;
    bank.kernels = Mat(cfg_.out_channels, cfg_.kernel_length);
    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        double* k = bank.kernels.row(c);
        const double* w = mix.row(c);
        for (std::size_t m = 0; m < cfg_.num_gaussians; ++m) {
            const double* g = gauss.row(m);
            for (std::size_t t = 0; t < cfg_.kernel_length; ++t) k[t] += w[m] * g[t];
        }
    }
    // softmax over a single element is identically 1, so C_in = 1 reduces to
    // the identity pass-through without a special case.
    bank.attention = softmax_rows(attn_logits_.value);
    return bank;
}

Ten3 TgmLayer::forward(const Ten3& x) {
    if (x.groups != cfg_.in_channels)
        throw std::invalid_argument("tgm: input has " + std::to_string(x.groups) +
                                    " channel groups, layer expects " +
                                    std::to_string(cfg_.in_channels));
    eval_gaussians(gauss_, mu_, sigma_);
    mix_prob_ = softmax_rows(mix_logits_.value);
    attention_ = softmax_rows(attn_logits_.value);
    kernel_ = Mat(cfg_.out_channels, cfg_.kernel_length);
    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        double* k = kernel_.row(c);
        const double* w = mix_prob_.row(c);
        for (std::size_t m = 0; m < cfg_.num_gaussians; ++m) {
            const double* g = gauss_.row(m);
            for (std::size_t t = 0; t < cfg_.kernel_length; ++t) k[t] += w[m] * g[t];
        }
    }

    cached_x_ = x;
    const std::size_t T = x.steps;
    const std::size_t D = x.dim;
    const std::int64_t Ti = static_cast<std::int64_t>(T);
    const std::int64_t ctr = static_cast<std::int64_t>(cfg_.kernel_length - 1) / 2;

    mixed_ = Ten3(cfg_.out_channels, T, D);
    Ten3 y(cfg_.out_channels, T, D);
    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        for (std::size_t j = 0; j < cfg_.in_channels; ++j) {
            const double a = attention_(c, j);
            const double* xs = x.slab(j, 0);
            double* us = mixed_.slab(c, 0);
            for (std::size_t i = 0; i < T * D; ++i) us[i] += a * xs[i];
        }
        const double* k = kernel_.row(c);
        for (std::int64_t t = 0; t < Ti; ++t) {
            double* yt = y.slab(c, static_cast<std::size_t>(t));
            for (std::size_t tau = 0; tau < cfg_.kernel_length; ++tau) {
                const std::int64_t src = t + static_cast<std::int64_t>(tau) - ctr;
                if (src < 0 || src >= Ti) continue;
                const double kv = k[tau];
                const double* us = mixed_.slab(c, static_cast<std::size_t>(src));
                for (std::size_t d = 0; d < D; ++d) yt[d] += kv * us[d];
            }
        }
    }
    return y;
}

Ten3 TgmLayer::backward(const Ten3& dy) {
    const std::size_t T = cached_x_.steps;
    const std::size_t D = cached_x_.dim;
    if (dy.groups != cfg_.out_channels || dy.steps != T || dy.dim != D)
        throw std::invalid_argument("tgm: upstream grad shape mismatch");
    const std::int64_t Ti = static_cast<std::int64_t>(T);
    const std::size_t L = cfg_.kernel_length;
    const std::int64_t ctr = static_cast<std::int64_t>(L - 1) / 2;

    Mat dkernel(cfg_.out_channels, L);
    Mat dattn_prob(cfg_.out_channels, cfg_.in_channels);
    Ten3 dx(cfg_.in_channels, T, D);
    std::vector<double> du(T * D);

    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        // dKernel[c,tau] = sum_{t,d} dY[c,t,d] * u_c[t+tau-ctr,d]
        double* dk = dkernel.row(c);
        for (std::size_t tau = 0; tau < L; ++tau) {
            const std::int64_t off = static_cast<std::int64_t>(tau) - ctr;
            double acc = 0.0;
            for (std::int64_t t = std::max<std::int64_t>(0, -off);
                 t < std::min(Ti, Ti - off); ++t) {
                const double* dyt = dy.slab(c, static_cast<std::size_t>(t));
                const double* us = mixed_.slab(c, static_cast<std::size_t>(t + off));
                for (std::size_t d = 0; d < D; ++d) acc += dyt[d] * us[d];
            }
            dk[tau] = acc;
        }
        // dU_c[s,d] = sum_tau kernel[c,tau] * dY[c, s-tau+ctr, d]
        std::fill(du.begin(), du.end(), 0.0);
        const double* k = kernel_.row(c);
        for (std::size_t tau = 0; tau < L; ++tau) {
            const std::int64_t off = static_cast<std::int64_t>(tau) - ctr;
            const double kv = k[tau];
            for (std::int64_t s = std::max<std::int64_t>(0, off);
                 s < std::min(Ti, Ti + off); ++s) {
                const double* dyt = dy.slab(c, static_cast<std::size_t>(s - off));
                double* dus = du.data() + static_cast<std::size_t>(s) * D;
                for (std::size_t d = 0; d < D; ++d) dus[d] += kv * dyt[d];
            }
        }
        // dAttn[c,j] and dX
        for (std::size_t j = 0; j < cfg_.in_channels; ++j) {
            const double* xs = cached_x_.slab(j, 0);
            double* dxs = dx.slab(j, 0);
            const double a = attention_(c, j);
            double acc = 0.0;
            for (std::size_t i = 0; i < T * D; ++i) {
                acc += du[i] * xs[i];
                dxs[i] += a * du[i];
            }
            dattn_prob(c, j) = acc;
        }
    }

    // Through the attention softmax rows.
    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cfg_.in_channels; ++j)
            dot += attention_(c, j) * dattn_prob(c, j);
        for (std::size_t j = 0; j < cfg_.in_channels; ++j)
            attn_logits_.grad(c, j) += attention_(c, j) * (dattn_prob(c, j) - dot);
    }

    // Through the mixing softmax rows: dMixProb[c,m] = sum_t dK[c,t]*N[m,t].
    const std::size_t M = cfg_.num_gaussians;
    Mat dgauss(M, L);  // dN
    for (std::size_t c = 0; c < cfg_.out_channels; ++c) {
        const double* dk = dkernel.row(c);
        const double* p = mix_prob_.row(c);
        double dot = 0.0;
        std::vector<double> dp(M, 0.0);
        for (std::size_t m = 0; m < M; ++m) {
            const double* g = gauss_.row(m);
            double acc = 0.0;
            for (std::size_t t = 0; t < L; ++t) acc += dk[t] * g[t];
            dp[m] = acc;
            dot += p[m] * acc;
        }
        for (std::size_t m = 0; m < M; ++m)
            mix_logits_.grad(c, m) += p[m] * (dp[m] - dot);
        for (std::size_t m = 0; m < M; ++m) {
            double* dg = dgauss.row(m);
            for (std::size_t t = 0; t < L; ++t) dg[t] += dk[t] * p[m];
        }
    }

    // Through the normalized Gaussians to centers and widths. With
    // N_t = w_t / S, dL/dw_t = (dN_t - sum_t' dN_t' N_t') / S, and
    // dw_t/dmu = w_t (t-mu)/sigma^2, the S factors cancel:
    // dmu = sum_t (dN_t - ip) N_t (t-mu)/sigma^2.
    const double half = static_cast<double>(L - 1) / 2.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double* g = gauss_.row(m);
        const double* dg = dgauss.row(m);
        double ip = 0.0;
        for (std::size_t t = 0; t < L; ++t) ip += dg[t] * g[t];
        double dmu = 0.0, dsigma = 0.0;
        const double s2 = sigma_[m] * sigma_[m];
        for (std::size_t t = 0; t < L; ++t) {
            const double diff = static_cast<double>(t) - mu_[m];
            const double common = (dg[t] - ip) * g[t];
            dmu += common * diff / s2;
            dsigma += common * diff * diff / (s2 * sigma_[m]);
        }
        const double th = std::tanh(mu_hat_.value.data[m]);
        mu_hat_.grad.data[m] += dmu * half * (1.0 - th * th);
        sigma_hat_.grad.data[m] += dsigma * sigmoid(sigma_hat_.value.data[m]);
    }

    return dx;
}

// ---------------------------------------------------------------------------
// TgmStack
// ---------------------------------------------------------------------------

TgmStack::TgmStack(std::string name, std::size_t feature_dim, std::size_t proj_dim,
                   const std::vector<TgmConfig>& layer_cfgs, Rng& rng)
    : proj_(name + ".proj", feature_dim, proj_dim, rng), proj_dim_(proj_dim) {
    std::size_t prev_out = 1;
    for (std::size_t i = 0; i < layer_cfgs.size(); ++i) {
        if (layer_cfgs[i].in_channels != prev_out)
            throw ConfigError("tgm stack: layer " + std::to_string(i) + " expects " +
                              std::to_string(layer_cfgs[i].in_channels) +
                              " input channel groups, previous layer emits " +
                              std::to_string(prev_out));
        layers_.emplace_back(name + ".tgm" + std::to_string(i), layer_cfgs[i], rng);
        prev_out = layer_cfgs[i].out_channels;
    }
    out_channels_ = prev_out;
}

std::vector<Param*> TgmStack::params() {
    std::vector<Param*> out = proj_.params();
    for (auto& layer : layers_) {
        auto p = layer.params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

Mat TgmStack::forward(const Mat& features) {
    const Mat projected = proj_.forward(features);  // T x D'
    const std::size_t T = projected.rows;
    Ten3 h(1, T, proj_dim_);
    std::copy(projected.data.begin(), projected.data.end(), h.data.begin());
    for (auto& layer : layers_) h = layer.forward(h);
    Mat out(T, h.groups * proj_dim_);
    for (std::size_t t = 0; t < T; ++t) {
        double* o = out.row(t);
        for (std::size_t c = 0; c < h.groups; ++c) {
            const double* s = h.slab(c, t);
            std::copy(s, s + proj_dim_, o + c * proj_dim_);
        }
    }
    return out;
}

Mat TgmStack::backward(const Mat& dg) {
    if (dg.cols != out_dim()) throw std::invalid_argument("tgm stack: upstream grad shape mismatch");
    const std::size_t T = dg.rows;
    Ten3 dh(out_channels_, T, proj_dim_);
    for (std::size_t t = 0; t < T; ++t) {
        const double* o = dg.row_const(t);
        for (std::size_t c = 0; c < out_channels_; ++c) {
            double* s = dh.slab(c, t);
            std::copy(o + c * proj_dim_, o + (c + 1) * proj_dim_, s);
        }
    }
    for (std::size_t i = layers_.size(); i-- > 0;) dh = layers_[i].backward(dh);
    Mat dproj(T, proj_dim_);
    std::copy(dh.data.begin(), dh.data.end(), dproj.data.begin());
    return proj_.backward(dproj);
}

}  // namespace orflow
