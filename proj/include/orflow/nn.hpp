#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "orflow/ndarray.hpp"
#include "orflow/rng.hpp"

namespace orflow {

// Learnable tensor plus its accumulated gradient. All trainable state in the
// library lives in these so optimizers and checkpoints can treat models as a
// flat list.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string param_name, std::size_t rows, std::size_t cols)
        : name(std::move(param_name)), value(rows, cols), grad(rows, cols) {}

    void zero_grad() { grad.fill(0.0); }
    std::size_t size() const { return value.data.size(); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) {
    // log(1 + e^x), stable for large |x|
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(sum(exp(x))) over a contiguous range, max-shifted.
double logsumexp(const double* x, std::size_t n);

// In-place softmax over a contiguous range, max-shifted.
void softmax_inplace(double* x, std::size_t n);

// Row-wise softmax of a matrix, returned as a copy.
Mat softmax_rows(const Mat& logits);

// ---------------------------------------------------------------------------
// Layers. Each layer owns its parameters, caches what its backward pass needs
// during forward, and accumulates into Param::grad on backward (callers zero
// grads between steps).
// ---------------------------------------------------------------------------

// y_t = W x_t + b applied independently per row of a (T x in) matrix.
class Linear {
  public:
    Linear(std::string name, std::size_t in_dim, std::size_t out_dim, Rng& rng);

    Mat forward(const Mat& x);
    Mat backward(const Mat& dy);

    std::vector<Param*> params() { return {&weight_, &bias_}; }
    std::size_t in_dim() const { return weight_.value.cols; }
    std::size_t out_dim() const { return weight_.value.rows; }

  private:
    Param weight_;  // out x in
    Param bias_;    // out x 1
    Mat cached_x_;
};

// 1-D convolution over time with zero padding; input (T x C_in), output
// (T x C_out). Kernel size must be odd so output frames align with input
// frames.
class TemporalConv {
  public:
    TemporalConv(std::string name, std::size_t in_channels, std::size_t out_channels,
                 std::size_t kernel_size, Rng& rng);

    Mat forward(const Mat& x);
    Mat backward(const Mat& dy);

    std::vector<Param*> params() { return {&weight_, &bias_}; }
    std::size_t in_channels() const { return in_channels_; }
    std::size_t out_channels() const { return weight_.value.rows; }
    std::size_t kernel_size() const { return kernel_size_; }

  private:
    Param weight_;  // C_out x (C_in * L), w[c_out, c_in * L + l]
    Param bias_;    // C_out x 1
    std::size_t in_channels_ = 0;
    std::size_t kernel_size_ = 1;
    Mat cached_x_;
};

// Single-direction LSTM over a (T x input_dim) sequence, returning hidden
// states (T x hidden_dim). Gate rows in W/U/b are ordered [i; f; g; o].
class Lstm {
  public:
    Lstm(std::string name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

    Mat forward(const Mat& x);
    Mat backward(const Mat& dh);

    std::vector<Param*> params() { return {&w_ih_, &w_hh_, &bias_}; }
    std::size_t input_dim() const { return w_ih_.value.cols; }
    std::size_t hidden_dim() const { return hidden_dim_; }

  private:
    Param w_ih_;  // 4h x input_dim
    Param w_hh_;  // 4h x h
    Param bias_;  // 4h x 1
    std::size_t hidden_dim_ = 0;

    // forward caches, one row per step
    Mat cached_x_;
    Mat gates_;   // T x 4h, post-activation [i f g o]
    Mat cells_;   // T x h
    Mat tanh_c_;  // T x h
    Mat hidden_;  // T x h
};

// Bidirectional LSTM: forward pass over the sequence and a second pass over
// its reversal, hidden states concatenated to (T x 2*hidden_dim).
class BiLstm {
  public:
    BiLstm(std::string name, std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

    Mat forward(const Mat& x);
    Mat backward(const Mat& dh);

    std::vector<Param*> params();
    std::size_t input_dim() const { return fwd_.input_dim(); }
    std::size_t output_dim() const { return 2 * fwd_.hidden_dim(); }

  private:
    Lstm fwd_;
    Lstm bwd_;
};

}  // namespace orflow
