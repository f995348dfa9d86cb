#include "orflow/nn.hpp"

#include <algorithm>
#include <stdexcept>

namespace orflow {

double logsumexp(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
}

void softmax_inplace(double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        s += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= s;
}

Mat softmax_rows(const Mat& logits) {
    Mat out = logits;
    for (std::size_t r = 0; r < out.rows; ++r) softmax_inplace(out.row(r), out.cols);
    return out;
}

namespace {

void init_uniform(Mat& m, double bound, Rng& rng) {
    for (double& v : m.data) v = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(std::string name, std::size_t in_dim, std::size_t out_dim, Rng& rng)
    : weight_(name + ".weight", out_dim, in_dim), bias_(name + ".bias", out_dim, 1) {
    if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("Linear: zero dimension");
    init_uniform(weight_.value, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
}

Mat Linear::forward(const Mat& x) {
    if (x.cols != in_dim()) throw std::invalid_argument("Linear: input dim mismatch");
    cached_x_ = x;
    Mat y(x.rows, out_dim());
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xt = x.row_const(t);
        double* yt = y.row(t);
        for (std::size_t o = 0; o < out_dim(); ++o) {
            double acc = bias_.value.data[o];
            const double* w = weight_.value.row_const(o);
            for (std::size_t i = 0; i < in_dim(); ++i) acc += w[i] * xt[i];
            yt[o] = acc;
        }
    }
    return y;
}

Mat Linear::backward(const Mat& dy) {
    const Mat& x = cached_x_;
    if (dy.rows != x.rows || dy.cols != out_dim())
        throw std::invalid_argument("Linear: upstream grad shape mismatch");
    Mat dx(x.rows, in_dim());
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xt = x.row_const(t);
        const double* dyt = dy.row_const(t);
        double* dxt = dx.row(t);
        for (std::size_t o = 0; o < out_dim(); ++o) {
            const double g = dyt[o];
            bias_.grad.data[o] += g;
            double* dw = weight_.grad.row(o);
            const double* w = weight_.value.row_const(o);
            for (std::size_t i = 0; i < in_dim(); ++i) {
                dw[i] += g * xt[i];
                dxt[i] += g * w[i];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// TemporalConv
// ---------------------------------------------------------------------------

TemporalConv::TemporalConv(std::string name, std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel_size, Rng& rng)
    : weight_(name + ".weight", out_channels, in_channels * kernel_size),
      bias_(name + ".bias", out_channels, 1),
      in_channels_(in_channels),
      kernel_size_(kernel_size) {
    if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("TemporalConv: zero dimension");
    if (kernel_size % 2 == 0) throw std::invalid_argument("TemporalConv: kernel size must be odd");
    init_uniform(weight_.value,
                 1.0 / std::sqrt(static_cast<double>(in_channels * kernel_size)), rng);
}

Mat TemporalConv::forward(const Mat& x) {
    if (x.cols != in_channels_) throw std::invalid_argument("TemporalConv: channel mismatch");
    cached_x_ = x;
    const std::int64_t T = static_cast<std::int64_t>(x.rows);
    const std::int64_t L = static_cast<std::int64_t>(kernel_size_);
    const std::int64_t ctr = (L - 1) / 2;
    Mat y(x.rows, out_channels());
    for (std::size_t o = 0; o < out_channels(); ++o) {
        const double* w = weight_.value.row_const(o);
        for (std::int64_t t = 0; t < T; ++t) {
            double acc = bias_.value.data[o];
            for (std::int64_t l = 0; l < L; ++l) {
                const std::int64_t src = t + l - ctr;
                if (src < 0 || src >= T) continue;
                const double* xs = x.row_const(static_cast<std::size_t>(src));
                const double* wl = w + static_cast<std::size_t>(l);
                for (std::size_t c = 0; c < in_channels_; ++c)
                    acc += wl[c * kernel_size_] * xs[c];
            }
            y(static_cast<std::size_t>(t), o) = acc;
        }
    }
    return y;
}

Mat TemporalConv::backward(const Mat& dy) {
    const Mat& x = cached_x_;
    if (dy.rows != x.rows || dy.cols != out_channels())
        throw std::invalid_argument("TemporalConv: upstream grad shape mismatch");
    const std::int64_t T = static_cast<std::int64_t>(x.rows);
    const std::int64_t L = static_cast<std::int64_t>(kernel_size_);
    const std::int64_t ctr = (L - 1) / 2;
    Mat dx(x.rows, in_channels_);
    for (std::size_t o = 0; o < out_channels(); ++o) {
        const double* w = weight_.value.row_const(o);
        double* dw = weight_.grad.row(o);
        for (std::int64_t t = 0; t < T; ++t) {
            const double g = dy(static_cast<std::size_t>(t), o);
            bias_.grad.data[o] += g;
            for (std::int64_t l = 0; l < L; ++l) {
                const std::int64_t src = t + l - ctr;
                if (src < 0 || src >= T) continue;
                const double* xs = x.row_const(static_cast<std::size_t>(src));
                double* dxs = dx.row(static_cast<std::size_t>(src));
                for (std::size_t c = 0; c < in_channels_; ++c) {
                    const std::size_t wi = c * kernel_size_ + static_cast<std::size_t>(l);
                    dw[wi] += g * xs[c];
                    dxs[c] += g * w[wi];
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Lstm
// ---------------------------------------------------------------------------

Lstm::Lstm(std::string name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng)
    : w_ih_(name + ".w_ih", 4 * hidden_dim, input_dim),
      w_hh_(name + ".w_hh", 4 * hidden_dim, hidden_dim),
      bias_(name + ".bias", 4 * hidden_dim, 1),
      hidden_dim_(hidden_dim) {
    if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("Lstm: zero dimension");
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    init_uniform(w_ih_.value, bound, rng);
    init_uniform(w_hh_.value, bound, rng);
    init_uniform(bias_.value, bound, rng);
}

Mat Lstm::forward(const Mat& x) {
    if (x.cols != input_dim()) throw std::invalid_argument("Lstm: input dim mismatch");
    const std::size_t T = x.rows;
    const std::size_t h = hidden_dim_;
    cached_x_ = x;
    gates_ = Mat(T, 4 * h);
    cells_ = Mat(T, h);
    tanh_c_ = Mat(T, h);
    hidden_ = Mat(T, h);

    std::vector<double> z(4 * h);
    for (std::size_t t = 0; t < T; ++t) {
        const double* xt = x.row_const(t);
        const double* h_prev = t > 0 ? hidden_.row_const(t - 1) : nullptr;
        for (std::size_t r = 0; r < 4 * h; ++r) {
            double acc = bias_.value.data[r];
            const double* wi = w_ih_.value.row_const(r);
            for (std::size_t i = 0; i < input_dim(); ++i) acc += wi[i] * xt[i];
            if (h_prev) {
                const double* wh = w_hh_.value.row_const(r);
                for (std::size_t i = 0; i < h; ++i) acc += wh[i] * h_prev[i];
            }
            z[r] = acc;
        }
        double* g = gates_.row(t);
        double* c = cells_.row(t);
        double* tc = tanh_c_.row(t);
        double* ht = hidden_.row(t);
        const double* c_prev = t > 0 ? cells_.row_const(t - 1) : nullptr;
        for (std::size_t i = 0; i < h; ++i) {
            const double gi = sigmoid(z[i]);
            const double gf = sigmoid(z[h + i]);
            const double gg = std::tanh(z[2 * h + i]);
            const double go = sigmoid(z[3 * h + i]);
            g[i] = gi;
            g[h + i] = gf;
            g[2 * h + i] = gg;
            g[3 * h + i] = go;
            c[i] = gi * gg + (c_prev ? gf * c_prev[i] : 0.0);
            tc[i] = std::tanh(c[i]);
            ht[i] = go * tc[i];
        }
    }
    return hidden_;
}

Mat Lstm::backward(const Mat& dh_up) {
    const std::size_t T = cached_x_.rows;
    const std::size_t h = hidden_dim_;
    if (dh_up.rows != T || dh_up.cols != h)
        throw std::invalid_argument("Lstm: upstream grad shape mismatch");

    Mat dx(T, input_dim());
    std::vector<double> dh(h, 0.0), dc(h, 0.0), dz(4 * h);
    for (std::size_t ti = T; ti-- > 0;) {
        const double* g = gates_.row_const(ti);
        const double* tc = tanh_c_.row_const(ti);
        const double* c_prev = ti > 0 ? cells_.row_const(ti - 1) : nullptr;
        const double* up = dh_up.row_const(ti);
        for (std::size_t i = 0; i < h; ++i) {
            const double dht = up[i] + dh[i];
            const double gi = g[i], gf = g[h + i], gg = g[2 * h + i], go = g[3 * h + i];
            const double dgo = dht * tc[i];
            const double dct = dht * go * (1.0 - tc[i] * tc[i]) + dc[i];
            const double dgi = dct * gg;
            const double dgf = c_prev ? dct * c_prev[i] : 0.0;
            const double dgg = dct * gi;
            dc[i] = dct * gf;
            dz[i] = dgi * gi * (1.0 - gi);
            dz[h + i] = dgf * gf * (1.0 - gf);
            dz[2 * h + i] = dgg * (1.0 - gg * gg);
            dz[3 * h + i] = dgo * go * (1.0 - go);
        }
        const double* xt = cached_x_.row_const(ti);
        const double* h_prev = ti > 0 ? hidden_.row_const(ti - 1) : nullptr;
        double* dxt = dx.row(ti);
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t r = 0; r < 4 * h; ++r) {
            const double dzr = dz[r];
            bias_.grad.data[r] += dzr;
            double* dwi = w_ih_.grad.row(r);
            const double* wi = w_ih_.value.row_const(r);
            for (std::size_t i = 0; i < input_dim(); ++i) {
                dwi[i] += dzr * xt[i];
                dxt[i] += dzr * wi[i];
            }
            if (h_prev) {
                double* dwh = w_hh_.grad.row(r);
                const double* wh = w_hh_.value.row_const(r);
                for (std::size_t i = 0; i < h; ++i) {
                    dwh[i] += dzr * h_prev[i];
                    dh[i] += dzr * wh[i];
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BiLstm
// ---------------------------------------------------------------------------

namespace {

Mat reverse_rows(const Mat& m) {
    Mat out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        std::copy(m.row_const(m.rows - 1 - r), m.row_const(m.rows - 1 - r) + m.cols, out.row(r));
    return out;
}

}  // namespace

BiLstm::BiLstm(std::string name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng)
    : fwd_(name + ".fwd", input_dim, hidden_dim, rng),
      bwd_(name + ".bwd", input_dim, hidden_dim, rng) {}

std::vector<Param*> BiLstm::params() {
    auto p = fwd_.params();
    auto q = bwd_.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

Mat BiLstm::forward(const Mat& x) {
    const Mat hf = fwd_.forward(x);
    const Mat hb_rev = bwd_.forward(reverse_rows(x));
    const std::size_t h = fwd_.hidden_dim();
    Mat out(x.rows, 2 * h);
    for (std::size_t t = 0; t < x.rows; ++t) {
        std::copy(hf.row_const(t), hf.row_const(t) + h, out.row(t));
        // backward-direction state for step t was produced at reversed index
        std::copy(hb_rev.row_const(x.rows - 1 - t), hb_rev.row_const(x.rows - 1 - t) + h,
                  out.row(t) + h);
    }
    return out;
}

Mat BiLstm::backward(const Mat& dh) {
    const std::size_t h = fwd_.hidden_dim();
    if (dh.cols != 2 * h) throw std::invalid_argument("BiLstm: upstream grad shape mismatch");
    const std::size_t T = dh.rows;
    Mat dfwd(T, h), dbwd_rev(T, h);
    for (std::size_t t = 0; t < T; ++t) {
        std::copy(dh.row_const(t), dh.row_const(t) + h, dfwd.row(t));
        std::copy(dh.row_const(t) + h, dh.row_const(t) + 2 * h, dbwd_rev.row(T - 1 - t));
    }
    Mat dx = fwd_.backward(dfwd);
    const Mat dx_rev = bwd_.backward(dbwd_rev);
    for (std::size_t t = 0; t < T; ++t) {
        const double* src = dx_rev.row_const(T - 1 - t);
        double* dst = dx.row(t);
        for (std::size_t i = 0; i < dx.cols; ++i) dst[i] += src[i];
    }
    return dx;
}

}  // namespace orflow
