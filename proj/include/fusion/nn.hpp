#pragma once

// Forward and backward kernels for the layers of the fusion backbone:
// grouped 3x3 convolution (stride 1, same padding), batch normalization,
// ReLU, global average pooling, a dense classifier head and the softmax
// cross-entropy loss. All kernels are templated on the scalar type and work
// on NHWC tensors; convolutions go through im2col + Eigen GEMM so that a
// group is just a column block of the kernel matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusion/tensor.hpp"

namespace fusion {

inline constexpr Index kKernelSize = 3;

template <typename Scalar> struct ConvParams {
    Tensor<Scalar> kernel; ///< 3 x 3 x (Cin / groups) x Cout
    Tensor<Scalar> bias;   ///< Cout
    Index groups = 1;

    Index in_channels() const { return kernel.dim(2) * groups; }
    Index out_channels() const { return kernel.dim(3); }
    Index group_in() const { return kernel.dim(2); }
    Index group_out() const { return kernel.dim(3) / groups; }

    static ConvParams zeros(Index in_channels, Index out_channels, Index groups)
    {
        if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
            throw ShapeError("groups=" + std::to_string(groups) + " must divide Cin=" + std::to_string(in_channels) +
                             " and Cout=" + std::to_string(out_channels));
        return ConvParams{Tensor<Scalar>({kKernelSize, kKernelSize, in_channels / groups, out_channels}),
                          Tensor<Scalar>({out_channels}), groups};
    }

    void validate() const
    {
        if (kernel.rank() != 4 || kernel.dim(0) != kKernelSize || kernel.dim(1) != kKernelSize)
            throw ShapeError("conv kernel must be 3x3xCgxCout, got " + kernel.shape_string());
        if (groups < 1 || kernel.dim(3) % groups != 0)
            throw ShapeError("groups=" + std::to_string(groups) + " does not divide Cout=" + std::to_string(kernel.dim(3)));
        if (bias.rank() != 1 || bias.dim(0) != kernel.dim(3))
            throw ShapeError("conv bias must have Cout entries, got " + bias.shape_string());
    }
};

template <typename Scalar> struct ConvGrads {
    Tensor<Scalar> input; ///< empty when not requested
    Tensor<Scalar> kernel;
    Tensor<Scalar> bias;
};

namespace detail {

template <typename Scalar> Tensor<Scalar> as_batch(const Tensor<Scalar>& t)
{
    if (t.rank() == 4)
        return t;
    if (t.rank() == 3)
        return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
    throw ShapeError("expected HxWxC or NxHxWxC activation, got " + t.shape_string());
}

/// Gathers the 3x3 neighbourhoods of input channel block [c0, c0 + cg) into
/// one row per output position; out-of-bounds taps are zero.
template <typename Scalar>
void im2col(const Tensor<Scalar>& in, Index c0, Index cg, RowMatrix<Scalar>& cols)
{
    const Index n_batch = in.dim(0), height = in.dim(1), width = in.dim(2), channels = in.dim(3);
    cols.resize(n_batch * height * width, kKernelSize * kKernelSize * cg);
    const Scalar* src = in.data();
    for (Index n = 0; n < n_batch; ++n)
        for (Index h = 0; h < height; ++h)
            for (Index w = 0; w < width; ++w) {
                Scalar* row = cols.data() + ((n * height + h) * width + w) * cols.cols();
                for (Index kh = 0; kh < kKernelSize; ++kh) {
                    const Index ih = h + kh - 1;
                    for (Index kw = 0; kw < kKernelSize; ++kw) {
                        const Index iw = w + kw - 1;
                        Scalar* dst = row + (kh * kKernelSize + kw) * cg;
                        if (ih < 0 || ih >= height || iw < 0 || iw >= width) {
                            std::fill(dst, dst + cg, Scalar(0));
                        } else {
                            const Scalar* s = src + ((n * height + ih) * width + iw) * channels + c0;
                            std::copy(s, s + cg, dst);
                        }
                    }
                }
            }
}

/// Adjoint of im2col: scatters column gradients back onto channel block c0.
template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index c0, Index cg, Tensor<Scalar>& grad_in)
{
    const Index n_batch = grad_in.dim(0), height = grad_in.dim(1), width = grad_in.dim(2), channels = grad_in.dim(3);
    Scalar* dst = grad_in.data();
    for (Index n = 0; n < n_batch; ++n)
        for (Index h = 0; h < height; ++h)
            for (Index w = 0; w < width; ++w) {
                const Scalar* row = cols.data() + ((n * height + h) * width + w) * cols.cols();
                for (Index kh = 0; kh < kKernelSize; ++kh) {
                    const Index ih = h + kh - 1;
                    if (ih < 0 || ih >= height)
                        continue;
                    for (Index kw = 0; kw < kKernelSize; ++kw) {
                        const Index iw = w + kw - 1;
                        if (iw < 0 || iw >= width)
                            continue;
                        const Scalar* s = row + (kh * kKernelSize + kw) * cg;
                        Scalar* d = dst + ((n * height + ih) * width + iw) * channels + c0;
                        for (Index c = 0; c < cg; ++c)
                            d[c] += s[c];
                    }
                }
            }
}

template <typename Scalar> void check_conv_input(const Tensor<Scalar>& in, const ConvParams<Scalar>& p)
{
    p.validate();
    if (in.channels() != p.in_channels())
        throw ShapeError("conv expects " + std::to_string(p.in_channels()) + " input channels, got " + in.shape_string());
}

} // namespace detail

/// Grouped 3x3 convolution, stride 1, same padding. Output channel block g
/// only reads input channel block g. groups == 1 runs the same code path as a
/// standard dense convolution.
template <typename Scalar> Tensor<Scalar> conv2d_grouped(const Tensor<Scalar>& input, const ConvParams<Scalar>& params)
{
    const Tensor<Scalar> in = detail::as_batch(input);
    detail::check_conv_input(in, params);
    const Index cg_in = params.group_in(), cg_out = params.group_out();
    Tensor<Scalar> out({in.dim(0), in.dim(1), in.dim(2), params.out_channels()});
    auto out_m = out.matrix();
    const ConstMatrixMap<Scalar> k(params.kernel.data(), kKernelSize * kKernelSize * cg_in, params.out_channels());
    RowMatrix<Scalar> cols;
    for (Index g = 0; g < params.groups; ++g) {
        detail::im2col(in, g * cg_in, cg_in, cols);
        out_m.middleCols(g * cg_out, cg_out).noalias() = cols * k.middleCols(g * cg_out, cg_out);
    }
    out_m.rowwise() += params.bias.array().matrix().transpose();
    return input.rank() == 3 ? out.reshaped({out.dim(1), out.dim(2), out.dim(3)}) : out;
}

/// Gradients of a scalar loss through conv2d_grouped given dL/doutput.
template <typename Scalar>
ConvGrads<Scalar> conv2d_grouped_backward(const Tensor<Scalar>& input, const ConvParams<Scalar>& params,
                                          const Tensor<Scalar>& grad_output, bool need_input_grad = true)
{
    const Tensor<Scalar> in = detail::as_batch(input);
    const Tensor<Scalar> gout = detail::as_batch(grad_output);
    detail::check_conv_input(in, params);
    if (gout.dim(0) != in.dim(0) || gout.dim(1) != in.dim(1) || gout.dim(2) != in.dim(2) ||
        gout.dim(3) != params.out_channels())
        throw ShapeError("conv backward: grad_output " + gout.shape_string() + " does not match input " + in.shape_string());

    const Index cg_in = params.group_in(), cg_out = params.group_out();
    const Index taps = kKernelSize * kKernelSize * cg_in;
    ConvGrads<Scalar> grads;
    grads.kernel = Tensor<Scalar>(params.kernel.shape());
    grads.bias = Tensor<Scalar>(params.bias.shape());
    if (need_input_grad)
        grads.input = Tensor<Scalar>(in.shape());

    const auto g_m = gout.matrix();
    grads.bias.array() = g_m.colwise().sum().transpose().array();
    const ConstMatrixMap<Scalar> k(params.kernel.data(), taps, params.out_channels());
    MatrixMap<Scalar> dk(grads.kernel.data(), taps, params.out_channels());
    RowMatrix<Scalar> cols, dcols;
    for (Index g = 0; g < params.groups; ++g) {
        detail::im2col(in, g * cg_in, cg_in, cols);
        const auto g_block = g_m.middleCols(g * cg_out, cg_out);
        dk.middleCols(g * cg_out, cg_out).noalias() = cols.transpose() * g_block;
        if (need_input_grad) {
            dcols.noalias() = g_block * k.middleCols(g * cg_out, cg_out).transpose();
            detail::col2im_add(dcols, g * cg_in, cg_in, grads.input);
        }
    }
    if (need_input_grad && input.rank() == 3)
        grads.input = grads.input.reshaped(input.shape());
    return grads;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode { training, inference };

template <typename Scalar> struct BatchNormParams {
    Tensor<Scalar> gamma;
    Tensor<Scalar> beta;
    Tensor<Scalar> moving_mean;
    Tensor<Scalar> moving_var;
    Scalar epsilon = Scalar(1e-3);
    Scalar momentum = Scalar(0.99);

    static BatchNormParams identity(Index channels)
    {
        return BatchNormParams{Tensor<Scalar>::constant({channels}, Scalar(1)), Tensor<Scalar>({channels}),
                               Tensor<Scalar>({channels}), Tensor<Scalar>::constant({channels}, Scalar(1))};
    }

    Index channels() const { return gamma.size(); }

    void validate() const
    {
        const Index c = gamma.size();
        if (beta.size() != c || moving_mean.size() != c || moving_var.size() != c)
            throw ShapeError("batch-norm vectors must share one length");
        if ((moving_var.array() < Scalar(0)).any())
            throw ConfigError("batch-norm moving variance must be non-negative");
    }
};

/// Per-channel statistics retained from a training-mode pass.
template <typename Scalar> struct BatchNormCache {
    Eigen::Array<Scalar, Eigen::Dynamic, 1> mean;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> var;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;
    Tensor<Scalar> x_hat;
};

template <typename Scalar> struct BatchNormGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> gamma;
    Tensor<Scalar> beta;
};

namespace detail {
template <typename Scalar> void check_bn_input(const Tensor<Scalar>& in, const BatchNormParams<Scalar>& p)
{
    p.validate();
    if (in.channels() != p.channels())
        throw ShapeError("batch-norm expects " + std::to_string(p.channels()) + " channels, got " + in.shape_string());
}
} // namespace detail

/// Normalizes with batch statistics over every non-channel axis. Does not
/// touch the running statistics; see update_moving_stats.
template <typename Scalar>
std::pair<Tensor<Scalar>, BatchNormCache<Scalar>> batchnorm_train(const Tensor<Scalar>& input,
                                                                  const BatchNormParams<Scalar>& params)
{
    detail::check_bn_input(input, params);
    const auto x = input.matrix();
    const Scalar count = static_cast<Scalar>(x.rows());
    BatchNormCache<Scalar> cache;
    cache.mean = x.colwise().sum().transpose().array() / count;
    const RowMatrix<Scalar> centered = x.rowwise() - cache.mean.matrix().transpose();
    cache.var = centered.array().square().colwise().sum().transpose() / count;
    cache.inv_std = (cache.var + params.epsilon).rsqrt();
    cache.x_hat = Tensor<Scalar>(input.shape());
    cache.x_hat.matrix() = centered * cache.inv_std.matrix().asDiagonal();

    Tensor<Scalar> out(input.shape());
    out.matrix() = (cache.x_hat.matrix() * params.gamma.array().matrix().asDiagonal()).rowwise() +
                   params.beta.array().matrix().transpose();
    return {std::move(out), std::move(cache)};
}

/// moving <- momentum * moving + (1 - momentum) * batch
template <typename Scalar> void update_moving_stats(BatchNormParams<Scalar>& params, const BatchNormCache<Scalar>& cache)
{
    const Scalar m = params.momentum;
    params.moving_mean.array() = m * params.moving_mean.array() + (Scalar(1) - m) * cache.mean;
    params.moving_var.array() = m * params.moving_var.array() + (Scalar(1) - m) * cache.var;
}

template <typename Scalar>
Tensor<Scalar> batchnorm_infer(const Tensor<Scalar>& input, const BatchNormParams<Scalar>& params)
{
    detail::check_bn_input(input, params);
    const auto scale = (params.gamma.array() * (params.moving_var.array() + params.epsilon).rsqrt()).eval();
    const auto shift = (params.beta.array() - params.moving_mean.array() * scale).eval();
    Tensor<Scalar> out(input.shape());
    out.matrix() = (input.matrix() * scale.matrix().asDiagonal()).rowwise() + shift.matrix().transpose();
    return out;
}

/// Single entry point: training mode normalizes by batch statistics and
/// updates the running statistics in place; inference mode reads them only.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward(const Tensor<Scalar>& input, BatchNormParams<Scalar>& params, BnMode mode)
{
    if (mode == BnMode::inference)
        return batchnorm_infer(input, params);
    auto [out, cache] = batchnorm_train(input, params);
    update_moving_stats(params, cache);
    return out;
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BatchNormParams<Scalar>& params, const BatchNormCache<Scalar>& cache,
                                          const Tensor<Scalar>& grad_output)
{
    if (!grad_output.same_shape(cache.x_hat))
        throw ShapeError("batch-norm backward: grad_output shape mismatch");
    const auto dy = grad_output.matrix();
    const auto xh = cache.x_hat.matrix();
    const Scalar count = static_cast<Scalar>(dy.rows());

    BatchNormGrads<Scalar> g{Tensor<Scalar>(grad_output.shape()), Tensor<Scalar>(params.gamma.shape()),
                             Tensor<Scalar>(params.beta.shape())};
    g.beta.array() = dy.colwise().sum().transpose().array();
    g.gamma.array() = dy.cwiseProduct(xh).colwise().sum().transpose().array();

    // dx = gamma * inv_std / m * (m * dy - sum(dy) - x_hat * sum(dy * x_hat))
    const auto coeff = (params.gamma.array() * cache.inv_std / count).eval();
    RowMatrix<Scalar> dx = (dy * count).rowwise() - g.beta.array().matrix().transpose();
    dx -= xh * g.gamma.array().matrix().asDiagonal();
    g.input.matrix() = dx * coeff.matrix().asDiagonal();
    return g;
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& input)
{
    Tensor<Scalar> out(input.shape());
    out.array() = input.array().max(Scalar(0));
    return out;
}

/// Passes gradient where the forward input was strictly positive.
template <typename Scalar> Tensor<Scalar> relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output)
{
    if (!input.same_shape(grad_output))
        throw ShapeError("relu backward: shape mismatch");
    Tensor<Scalar> g(input.shape());
    g.array() = (input.array() > Scalar(0)).select(grad_output.array(), Scalar(0));
    return g;
}

/// HxWxC -> C, or NxHxWxC -> NxC.
template <typename Scalar> Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input)
{
    const Tensor<Scalar> in = detail::as_batch(input);
    const Index n_batch = in.dim(0), positions = in.dim(1) * in.dim(2), channels = in.dim(3);
    Tensor<Scalar> out({n_batch, channels});
    for (Index n = 0; n < n_batch; ++n) {
        const ConstMatrixMap<Scalar> block(in.data() + n * positions * channels, positions, channels);
        out.matrix().row(n) = block.colwise().sum() / static_cast<Scalar>(positions);
    }
    return input.rank() == 3 ? out.reshaped({channels}) : out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const std::vector<Index>& input_shape, const Tensor<Scalar>& grad_output)
{
    Tensor<Scalar> g(input_shape);
    const Tensor<Scalar> gb = detail::as_batch(g);
    const Index n_batch = gb.dim(0), positions = gb.dim(1) * gb.dim(2), channels = gb.dim(3);
    if (grad_output.size() != n_batch * channels)
        throw ShapeError("global_avg_pool backward: grad_output size mismatch");
    const ConstMatrixMap<Scalar> go(grad_output.data(), n_batch, channels);
    for (Index n = 0; n < n_batch; ++n) {
        MatrixMap<Scalar> block(g.data() + n * positions * channels, positions, channels);
        block.rowwise() = go.row(n) / static_cast<Scalar>(positions);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dense head

template <typename Scalar> struct DenseGrads {
    Tensor<Scalar> input;
    Tensor<Scalar> weights;
    Tensor<Scalar> bias;
};

namespace detail {
template <typename Scalar>
void check_dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias)
{
    if (weights.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weights.dim(1))
        throw ShapeError("dense weights must be CxK with K biases");
    if (input.channels() != weights.dim(0) || input.rank() > 2)
        throw ShapeError("dense input " + input.shape_string() + " does not match weights " + weights.shape_string());
}
} // namespace detail

/// output = input^T weights + bias, for a C vector or an NxC batch.
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias)
{
    detail::check_dense(input, weights, bias);
    const Index k = weights.dim(1);
    Tensor<Scalar> out(input.rank() == 1 ? std::vector<Index>{k} : std::vector<Index>{input.dim(0), k});
    const ConstMatrixMap<Scalar> x(input.data(), input.size() / input.channels(), input.channels());
    MatrixMap<Scalar> y(out.data(), x.rows(), k);
    y.noalias() = x * weights.matrix();
    y.rowwise() += bias.array().matrix().transpose();
    return out;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_output)
{
    const Index rows = input.size() / input.channels();
    if (grad_output.size() != rows * weights.dim(1))
        throw ShapeError("dense backward: grad_output size mismatch");
    const ConstMatrixMap<Scalar> x(input.data(), rows, input.channels());
    const ConstMatrixMap<Scalar> dy(grad_output.data(), rows, weights.dim(1));
    DenseGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weights.shape()),
                         Tensor<Scalar>({weights.dim(1)})};
    g.weights.matrix().noalias() = x.transpose() * dy;
    g.bias.array() = dy.colwise().sum().transpose().array();
    MatrixMap<Scalar>(g.input.data(), rows, input.channels()).noalias() = dy * weights.matrix().transpose();
    return g;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Scalar> struct LossResult {
    Scalar loss;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> probs;
};

/// Max-shifted softmax followed by -log p[label] + l2_term.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& logits,
                                         Index label, Scalar l2_term = Scalar(0))
{
    if (label < 0 || label >= logits.size())
        throw ConfigError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
    const Scalar top = logits.maxCoeff();
    const auto shifted = (logits.array() - top).eval();
    const Scalar log_norm = std::log(shifted.exp().sum());
    LossResult<Scalar> r;
    r.probs = (shifted - log_norm).exp().matrix();
    r.loss = -(shifted[label] - log_norm) + l2_term;
    return r;
}

template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, Index label, Scalar l2_term = Scalar(0))
{
    if (logits.rank() != 1)
        throw ShapeError("softmax_cross_entropy expects a K vector, got " + logits.shape_string());
    return softmax_cross_entropy<Scalar>(logits.array().matrix(), label, l2_term);
}

template <typename Scalar> Eigen::Matrix<Scalar, Eigen::Dynamic, 1> softmax(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& logits)
{
    const auto e = (logits.array() - logits.maxCoeff()).exp().eval();
    return (e / e.sum()).matrix();
}

} // namespace fusion
