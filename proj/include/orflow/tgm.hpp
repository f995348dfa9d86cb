#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orflow/ndarray.hpp"
#include "orflow/nn.hpp"
#include "orflow/rng.hpp"
#include "orflow/types.hpp"

namespace orflow {

// Temporal Gaussian Mixture layer: temporal convolution whose kernels are
// convex mixtures of normalized Gaussians with learnable centers, widths, and
// per-output-channel mixing, plus a learned soft attention over input channel
// groups.
struct TgmConfig {
    std::size_t in_channels = 1;    // C_in channel groups
    std::size_t out_channels = 1;   // C_out channel groups
    std::size_t kernel_length = 9;  // L, odd, >= 3
    std::size_t num_gaussians = 16; // M
};

// Materialized kernels: each row of `kernels` and `attention` is nonnegative
// and sums to 1 (convex weights).
struct KernelBank {
    Mat kernels;    // C_out x L
    Mat attention;  // C_out x C_in
};

// Pure convolution by a fixed bank: y_c[t,d] = sum_j attention[c,j] *
// sum_tau kernels[c,tau] * x_j[t+tau-(L-1)/2, d], zero padded. Shared by the
// layer forward and by oracle tests.
Ten3 tgm_apply(const Ten3& x, const KernelBank& bank);

class TgmLayer {
  public:
    TgmLayer(std::string name, const TgmConfig& cfg, Rng& rng);

    // Builds kernels/attention from the current parameters. Total in params:
    // squashed centers, softplus widths and softmax rows are defined for all
    // finite inputs.
    KernelBank compute_kernels() const;

    Ten3 forward(const Ten3& x);    // C_in x T x D -> C_out x T x D
    Ten3 backward(const Ten3& dy);  // accumulates parameter grads, returns dX

    std::vector<Param*> params() { return {&mu_hat_, &sigma_hat_, &mix_logits_, &attn_logits_}; }
    const TgmConfig& config() const { return cfg_; }

  private:
    // Gaussian grid evaluated at current centers/widths; rows are the M
    // normalized components over tap positions 0..L-1.
    void eval_gaussians(Mat& gauss, std::vector<double>& mu, std::vector<double>& sigma) const;

    TgmConfig cfg_;
    Param mu_hat_;       // 1 x M
    Param sigma_hat_;    // 1 x M
    Param mix_logits_;   // C_out x M
    Param attn_logits_;  // C_out x C_in

    // forward caches for backward
    Ten3 cached_x_;
    Ten3 mixed_;         // attention-mixed input u, C_out x T x D
    Mat kernel_;         // C_out x L
    Mat attention_;      // C_out x C_in
    Mat mix_prob_;       // C_out x M
    Mat gauss_;          // M x L, normalized rows
    std::vector<double> mu_;
    std::vector<double> sigma_;
};

// Projection D -> proj_dim followed by a chain of TGM layers (first layer
// C_in = 1), flattened channel-major to T x (C_last * proj_dim). An empty
// layer list degenerates to the projection alone.
class TgmStack {
  public:
    TgmStack(std::string name, std::size_t feature_dim, std::size_t proj_dim,
             const std::vector<TgmConfig>& layer_cfgs, Rng& rng);

    Mat forward(const Mat& features);  // T x D -> T x out_dim()
    Mat backward(const Mat& dg);       // -> T x D

    std::vector<Param*> params();
    std::size_t out_dim() const { return out_channels_ * proj_dim_; }
    std::size_t proj_dim() const { return proj_dim_; }
    std::vector<TgmLayer>& layers() { return layers_; }

  private:
    Linear proj_;
    std::vector<TgmLayer> layers_;
    std::size_t proj_dim_ = 0;
    std::size_t out_channels_ = 1;
};

}  // namespace orflow
