#pragma once

// Differentiable operations on Tensor<Scalar>.
//
// Layout conventions: 4-D activations are N x C x H x W (for skeleton data
// H = frames, W = joints), row-major. Broadcasting is limited to the
// explicit cases below: add_bias (trailing dimension) and add_channel_bias /
// batch_norm2d (per channel of an NCHW tensor).

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "stgait/tensor.hpp"

namespace stgait {

using Pair = std::array<Index, 2>;

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             to_string(s));
    }
}

// outer x axis x inner factorization around one axis.
struct AxisSplit {
    Index outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, Index axis, const char* op) {
    const Index rank = static_cast<Index>(s.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw DimensionError(std::string(op) + ": axis out of range for shape " + to_string(s));
    }
    AxisSplit r;
    for (Index d = 0; d < axis; ++d) r.outer *= s[d];
    r.extent = s[axis];
    for (Index d = axis + 1; d < rank; ++d) r.inner *= s[d];
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    return detail::make_result<Scalar>(a.shape(), a.data() + b.data(), {a, b}, [](TensorNode<Scalar>& self) {
        for (auto& in : self.inputs) {
            if (in->requires_grad) in->grad_buffer() += self.grad;
        }
    });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    return detail::make_result<Scalar>(a.shape(), a.data() - b.data(), {a, b}, [](TensorNode<Scalar>& self) {
        if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer() += self.grad;
        if (self.inputs[1]->requires_grad) self.inputs[1]->grad_buffer() -= self.grad;
    });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    Vec<Scalar> out = a.data().cwiseProduct(b.data());
    return detail::make_result<Scalar>(a.shape(), std::move(out), {a, b}, [](TensorNode<Scalar>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) x.grad_buffer() += self.grad.cwiseProduct(y.data);
        if (y.requires_grad) y.grad_buffer() += self.grad.cwiseProduct(x.data);
    });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
    return detail::make_result<Scalar>(a.shape(), a.data() * factor, {a}, [factor](TensorNode<Scalar>& self) {
        self.inputs[0]->grad_buffer() += self.grad * factor;
    });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
    Vec<Scalar> out = a.data().cwiseMax(Scalar(0));
    return detail::make_result<Scalar>(a.shape(), std::move(out), {a}, [](TensorNode<Scalar>& self) {
        auto& x = *self.inputs[0];
        x.grad_buffer().array() += (x.data.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
    });
}

/// x[..., C] + bias[C], broadcasting over all leading dimensions.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
    detail::require_rank(bias.shape(), 1, "add_bias");
    const Index c = bias.dim(0);
    if (x.shape().back() != c) {
        throw DimensionError("add_bias: trailing extent of " + to_string(x.shape()) + " does not match bias " +
                             to_string(bias.shape()));
    }
    const Index rows = x.size() / c;
    Vec<Scalar> out(x.size());
    RowMatMap<Scalar>(out.data(), rows, c) =
        ConstRowMatMap<Scalar>(x.data().data(), rows, c).rowwise() + bias.data().transpose();
    return detail::make_result<Scalar>(x.shape(), std::move(out), {x, bias}, [rows, c](TensorNode<Scalar>& self) {
        auto& xn = *self.inputs[0];
        auto& bn = *self.inputs[1];
        if (xn.requires_grad) xn.grad_buffer() += self.grad;
        if (bn.requires_grad) {
            bn.grad_buffer() += ConstRowMatMap<Scalar>(self.grad.data(), rows, c).colwise().sum().transpose();
        }
    });
}

/// x[N, C, ...] + bias[C], one bias per channel.
template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
    detail::require_rank(bias.shape(), 1, "add_channel_bias");
    if (x.ndim() < 2 || x.dim(1) != bias.dim(0)) {
        throw DimensionError("add_channel_bias: channel extent of " + to_string(x.shape()) +
                             " does not match bias " + to_string(bias.shape()));
    }
    const Index n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
    Vec<Scalar> out = x.data();
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch) out.segment((i * c + ch) * inner, inner).array() += bias.data()[ch];
    return detail::make_result<Scalar>(
        x.shape(), std::move(out), {x, bias}, [n, c, inner](TensorNode<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& bn = *self.inputs[1];
            if (xn.requires_grad) xn.grad_buffer() += self.grad;
            if (bn.requires_grad) {
                auto& g = bn.grad_buffer();
                for (Index i = 0; i < n; ++i)
                    for (Index ch = 0; ch < c; ++ch) g[ch] += self.grad.segment((i * c + ch) * inner, inner).sum();
            }
        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return detail::make_result<Scalar>(std::move(shape), x.data(), {x}, [](TensorNode<Scalar>& self) {
        self.inputs[0]->grad_buffer() += self.grad;
    });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    const Index rank = static_cast<Index>(first.size());
    if (axis < 0) axis += rank;
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (static_cast<Index>(probe.size()) != rank) throw DimensionError("concat: rank mismatch");
        out_shape[axis] += probe[axis];
        probe[axis] = first[axis];
        detail::require_same_shape(probe, first, "concat");
    }
    const auto split = detail::split_axis(out_shape, axis, "concat");
    Vec<Scalar> out(numel(out_shape));
    std::vector<Index> widths;
    for (const auto& p : parts) widths.push_back(p.dim(axis) * split.inner);
    const Index row = split.extent * split.inner;
    Index col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        ConstRowMatMap<Scalar> src(parts[k].data().data(), split.outer, widths[k]);
        RowMatMap<Scalar>(out.data(), split.outer, row).middleCols(col, widths[k]) = src;
        col += widths[k];
    }
    return detail::make_result<Scalar>(std::move(out_shape), std::move(out), parts,
                                       [widths, outer = split.outer, row](TensorNode<Scalar>& self) {
                                           ConstRowMatMap<Scalar> g(self.grad.data(), outer, row);
                                           Index col = 0;
                                           for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                               auto& in = *self.inputs[k];
                                               if (in.requires_grad) {
                                                   RowMatMap<Scalar>(in.grad_buffer().data(), outer, widths[k]) +=
                                                       g.middleCols(col, widths[k]);
                                               }
                                               col += widths[k];
                                           }
                                       });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
    return detail::make_result<Scalar>({1}, Vec<Scalar>::Constant(1, x.data().sum()), {x},
                                       [](TensorNode<Scalar>& self) {
                                           self.inputs[0]->grad_buffer().array() += self.grad[0];
                                       });
}

/// Mean over one axis; the axis is removed from the result shape.
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x, Index axis) {
    const auto s = detail::split_axis(x.shape(), axis, "mean");
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + (axis < 0 ? axis + x.ndim() : axis));
    if (out_shape.empty()) out_shape = {1};
    Vec<Scalar> out = Vec<Scalar>::Zero(s.outer * s.inner);
    for (Index o = 0; o < s.outer; ++o)
        for (Index e = 0; e < s.extent; ++e)
            out.segment(o * s.inner, s.inner) += x.data().segment((o * s.extent + e) * s.inner, s.inner);
    out /= Scalar(s.extent);
    return detail::make_result<Scalar>(std::move(out_shape), std::move(out), {x}, [s](TensorNode<Scalar>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const Scalar w = Scalar(1) / Scalar(s.extent);
        for (Index o = 0; o < s.outer; ++o)
            for (Index e = 0; e < s.extent; ++e)
                g.segment((o * s.extent + e) * s.inner, s.inner) += w * self.grad.segment(o * s.inner, s.inner);
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Vec<Scalar> out(m * n);
    RowMatMap<Scalar>(out.data(), m, n).noalias() =
        ConstRowMatMap<Scalar>(a.data().data(), m, k) * ConstRowMatMap<Scalar>(b.data().data(), k, n);
    return detail::make_result<Scalar>({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<Scalar>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        ConstRowMatMap<Scalar> g(self.grad.data(), m, n);
        if (an.requires_grad) {
            RowMatMap<Scalar>(an.grad_buffer().data(), m, k).noalias() +=
                g * ConstRowMatMap<Scalar>(bn.data.data(), k, n).transpose();
        }
        if (bn.requires_grad) {
            RowMatMap<Scalar>(bn.grad_buffer().data(), k, n).noalias() +=
                ConstRowMatMap<Scalar>(an.data.data(), m, k).transpose() * g;
        }
    });
}

struct Conv2dOptions {
    Pair stride{1, 1};
    Pair padding{0, 0};
    Pair dilation{1, 1};
};

namespace detail {

inline Index conv_out_extent(Index in, Index k, Index stride, Index pad, Index dil) {
    const Index span = in + 2 * pad - dil * (k - 1) - 1;
    if (span < 0 || stride <= 0) return 0;
    return span / stride + 1;
}

struct ConvGeometry {
    Index c, h, w, kh, kw, ho, wo;
    Conv2dOptions opt;
    bool pointwise() const {
        return kh == 1 && kw == 1 && opt.stride == Pair{1, 1} && opt.padding == Pair{0, 0};
    }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMat<Scalar>& cols) {
    cols.setZero(g.c * g.kh * g.kw, g.ho * g.wo);
    for (Index ch = 0; ch < g.c; ++ch)
        for (Index i = 0; i < g.kh; ++i)
            for (Index j = 0; j < g.kw; ++j) {
                Scalar* dst = cols.row((ch * g.kh + i) * g.kw + j).data();
                for (Index y = 0; y < g.ho; ++y) {
                    const Index iy = y * g.opt.stride[0] - g.opt.padding[0] + i * g.opt.dilation[0];
                    if (iy < 0 || iy >= g.h) continue;
                    const Scalar* src = x + (ch * g.h + iy) * g.w;
                    for (Index xo = 0; xo < g.wo; ++xo) {
                        const Index ix = xo * g.opt.stride[1] - g.opt.padding[1] + j * g.opt.dilation[1];
                        if (ix >= 0 && ix < g.w) dst[y * g.wo + xo] = src[ix];
                    }
                }
            }
}

template <typename Scalar>
void col2im_add(const RowMat<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
    for (Index ch = 0; ch < g.c; ++ch)
        for (Index i = 0; i < g.kh; ++i)
            for (Index j = 0; j < g.kw; ++j) {
                const Scalar* src = cols.row((ch * g.kh + i) * g.kw + j).data();
                for (Index y = 0; y < g.ho; ++y) {
                    const Index iy = y * g.opt.stride[0] - g.opt.padding[0] + i * g.opt.dilation[0];
                    if (iy < 0 || iy >= g.h) continue;
                    Scalar* dst = dx + (ch * g.h + iy) * g.w;
                    for (Index xo = 0; xo < g.wo; ++xo) {
                        const Index ix = xo * g.opt.stride[1] - g.opt.padding[1] + j * g.opt.dilation[1];
                        if (ix >= 0 && ix < g.w) dst[ix] += src[y * g.wo + xo];
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation of input[N, C, H, W] with kernel[O, C, kh, kw].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, Conv2dOptions opt = {}) {
    detail::require_rank(input.shape(), 4, "conv2d input");
    detail::require_rank(kernel.shape(), 4, "conv2d kernel");
    if (input.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d: input " + to_string(input.shape()) + " has " + std::to_string(input.dim(1)) +
                             " channels but kernel " + to_string(kernel.shape()) + " expects " +
                             std::to_string(kernel.dim(1)));
    }
    detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), 0, 0, opt};
    g.ho = detail::conv_out_extent(g.h, g.kh, opt.stride[0], opt.padding[0], opt.dilation[0]);
    g.wo = detail::conv_out_extent(g.w, g.kw, opt.stride[1], opt.padding[1], opt.dilation[1]);
    if (g.ho <= 0 || g.wo <= 0) {
        throw DimensionError("conv2d: non-positive output extent for input " + to_string(input.shape()) +
                             " and kernel " + to_string(kernel.shape()));
    }
    const Index n = input.dim(0), o = kernel.dim(0), ckk = g.c * g.kh * g.kw;
    const Index in_stride = g.c * g.h * g.w, out_plane = g.ho * g.wo;
    ConstRowMatMap<Scalar> w(kernel.data().data(), o, ckk);
    Vec<Scalar> out(n * o * out_plane);
    RowMat<Scalar> cols;
    for (Index s = 0; s < n; ++s) {
        RowMatMap<Scalar> dst(out.data() + s * o * out_plane, o, out_plane);
        const Scalar* x = input.data().data() + s * in_stride;
        if (g.pointwise()) {
            dst.noalias() = w * ConstRowMatMap<Scalar>(x, g.c, out_plane);
        } else {
            detail::im2col(x, g, cols);
            dst.noalias() = w * cols;
        }
    }
    return detail::make_result<Scalar>(
        {n, o, g.ho, g.wo}, std::move(out), {input, kernel},
        [g, n, o, ckk, in_stride, out_plane](TensorNode<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& kn = *self.inputs[1];
            ConstRowMatMap<Scalar> w(kn.data.data(), o, ckk);
            RowMat<Scalar> cols, dcols;
            for (Index s = 0; s < n; ++s) {
                ConstRowMatMap<Scalar> gout(self.grad.data() + s * o * out_plane, o, out_plane);
                const Scalar* x = xn.data.data() + s * in_stride;
                if (kn.requires_grad) {
                    RowMatMap<Scalar> dw(kn.grad_buffer().data(), o, ckk);
                    if (g.pointwise()) {
                        dw.noalias() += gout * ConstRowMatMap<Scalar>(x, g.c, out_plane).transpose();
                    } else {
                        detail::im2col(x, g, cols);
                        dw.noalias() += gout * cols.transpose();
                    }
                }
                if (xn.requires_grad) {
                    Scalar* dx = xn.grad_buffer().data() + s * in_stride;
                    if (g.pointwise()) {
                        RowMatMap<Scalar>(dx, g.c, out_plane).noalias() += w.transpose() * gout;
                    } else {
                        dcols.noalias() = w.transpose() * gout;
                        detail::col2im_add(dcols, g, dx);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling

/// Max pooling with implicit -inf padding.
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Pair window, Pair stride = {1, 1}, Pair padding = {0, 0}) {
    detail::require_rank(input.shape(), 4, "max_pool2d");
    const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const Index ho = detail::conv_out_extent(h, window[0], stride[0], padding[0], 1);
    const Index wo = detail::conv_out_extent(w, window[1], stride[1], padding[1], 1);
    if (padding[0] >= window[0] || padding[1] >= window[1]) throw DimensionError("max_pool2d: padding must be smaller than the window");
    if (ho <= 0 || wo <= 0) throw DimensionError("max_pool2d: window larger than padded input " + to_string(input.shape()));
    Vec<Scalar> out(n * c * ho * wo);
    std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
    const Scalar* x = input.data().data();
    for (Index plane = 0; plane < n * c; ++plane)
        for (Index y = 0; y < ho; ++y)
            for (Index xo = 0; xo < wo; ++xo) {
                Scalar best = -std::numeric_limits<Scalar>::infinity();
                Index best_at = -1;
                for (Index i = 0; i < window[0]; ++i) {
                    const Index iy = y * stride[0] - padding[0] + i;
                    if (iy < 0 || iy >= h) continue;
                    for (Index j = 0; j < window[1]; ++j) {
                        const Index ix = xo * stride[1] - padding[1] + j;
                        if (ix < 0 || ix >= w) continue;
                        const Index at = (plane * h + iy) * w + ix;
                        if (best_at < 0 || x[at] > best) {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                const Index o = (plane * ho + y) * wo + xo;
                out[o] = best;
                argmax[static_cast<std::size_t>(o)] = best_at;
            }
    return detail::make_result<Scalar>({n, c, ho, wo}, std::move(out), {input},
                                       [argmax = std::move(argmax)](TensorNode<Scalar>& self) {
                                           auto& g = self.inputs[0]->grad_buffer();
                                           for (std::size_t o = 0; o < argmax.size(); ++o)
                                               g[argmax[o]] += self.grad[static_cast<Index>(o)];
                                       });
}

/// Non-overlapping average pooling (stride = window, no padding).
template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& input, Pair window) {
    detail::require_rank(input.shape(), 4, "avg_pool2d");
    const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (window[0] <= 0 || window[1] <= 0 || window[0] > h || window[1] > w) {
        throw DimensionError("avg_pool2d: window exceeds input " + to_string(input.shape()));
    }
    const Index ho = h / window[0], wo = w / window[1];
    const Scalar inv = Scalar(1) / Scalar(window[0] * window[1]);
    Vec<Scalar> out = Vec<Scalar>::Zero(n * c * ho * wo);
    const Scalar* x = input.data().data();
    for (Index plane = 0; plane < n * c; ++plane)
        for (Index iy = 0; iy < ho * window[0]; ++iy)
            for (Index ix = 0; ix < wo * window[1]; ++ix)
                out[(plane * ho + iy / window[0]) * wo + ix / window[1]] += x[(plane * h + iy) * w + ix] * inv;
    return detail::make_result<Scalar>(
        {n, c, ho, wo}, std::move(out), {input}, [n, c, h, w, ho, wo, window, inv](TensorNode<Scalar>& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (Index plane = 0; plane < n * c; ++plane)
                for (Index iy = 0; iy < ho * window[0]; ++iy)
                    for (Index ix = 0; ix < wo * window[1]; ++ix)
                        g[(plane * h + iy) * w + ix] += self.grad[(plane * ho + iy / window[0]) * wo + ix / window[1]] * inv;
        });
}

// ---------------------------------------------------------------------------
// Normalization

/// Running statistics of a batch-norm layer. `momentum` is the weight kept on
/// the old estimate: running = momentum * running + (1 - momentum) * batch.
template <typename Scalar>
struct RunningStats {
    Vec<Scalar> mean;
    Vec<Scalar> var;
    Scalar momentum = Scalar(0.9);
    Scalar eps = Scalar(1e-5);

    explicit RunningStats(Index channels = 0)
        : mean(Vec<Scalar>::Zero(channels)), var(Vec<Scalar>::Ones(channels)) {}
};

/// Per-channel batch normalization over N x H x W of an NCHW tensor.
/// Training mode normalizes with batch statistics and updates `stats`
/// (unbiased variance); eval mode uses the running estimates.
template <typename Scalar>
Tensor<Scalar> batch_norm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                            RunningStats<Scalar>& stats, bool training) {
    if (x.ndim() < 2) throw DimensionError("batch_norm2d: input rank < 2: " + to_string(x.shape()));
    const Index n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c), m = n * inner;
    if (gamma.size() != c || beta.size() != c || stats.mean.size() != c) {
        throw DimensionError("batch_norm2d: " + std::to_string(c) + " channels but affine/stat size " +
                             std::to_string(gamma.size()));
    }
    Vec<Scalar> mu(c), inv_std(c);
    if (training) {
        for (Index ch = 0; ch < c; ++ch) {
            Scalar s = 0, ss = 0;
            for (Index i = 0; i < n; ++i) {
                auto seg = x.data().segment((i * c + ch) * inner, inner);
                s += seg.sum();
            }
            const Scalar mean_c = s / Scalar(m);
            for (Index i = 0; i < n; ++i) {
                auto seg = x.data().segment((i * c + ch) * inner, inner);
                ss += (seg.array() - mean_c).square().sum();
            }
            const Scalar var_c = ss / Scalar(m);
            mu[ch] = mean_c;
            inv_std[ch] = Scalar(1) / std::sqrt(var_c + stats.eps);
            const Scalar unbiased = m > 1 ? ss / Scalar(m - 1) : var_c;
            stats.mean[ch] = stats.momentum * stats.mean[ch] + (Scalar(1) - stats.momentum) * mean_c;
            stats.var[ch] = stats.momentum * stats.var[ch] + (Scalar(1) - stats.momentum) * unbiased;
        }
    } else {
        mu = stats.mean;
        inv_std = (stats.var.array() + stats.eps).rsqrt();
    }
    Vec<Scalar> xhat(x.size()), out(x.size());
    for (Index i = 0; i < n; ++i)
        for (Index ch = 0; ch < c; ++ch) {
            const Index off = (i * c + ch) * inner;
            xhat.segment(off, inner) = (x.data().segment(off, inner).array() - mu[ch]) * inv_std[ch];
            out.segment(off, inner) = xhat.segment(off, inner).array() * gamma.data()[ch] + beta.data()[ch];
        }
    return detail::make_result<Scalar>(
        x.shape(), std::move(out), {x, gamma, beta},
        [n, c, inner, m, training, inv_std, xhat = std::move(xhat)](TensorNode<Scalar>& self) {
            auto& xn = *self.inputs[0];
            auto& gn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            for (Index ch = 0; ch < c; ++ch) {
                Scalar sum_dy = 0, sum_dy_xhat = 0;
                for (Index i = 0; i < n; ++i) {
                    const Index off = (i * c + ch) * inner;
                    sum_dy += self.grad.segment(off, inner).sum();
                    sum_dy_xhat += self.grad.segment(off, inner).dot(xhat.segment(off, inner));
                }
                if (gn.requires_grad) gn.grad_buffer()[ch] += sum_dy_xhat;
                if (bn.requires_grad) bn.grad_buffer()[ch] += sum_dy;
                if (!xn.requires_grad) continue;
                const Scalar gscale = gn.data[ch] * inv_std[ch];
                auto& dx = xn.grad_buffer();
                for (Index i = 0; i < n; ++i) {
                    const Index off = (i * c + ch) * inner;
                    if (training) {
                        dx.segment(off, inner).array() +=
                            gscale * (self.grad.segment(off, inner).array() - sum_dy / Scalar(m) -
                                      xhat.segment(off, inner).array() * (sum_dy_xhat / Scalar(m)));
                    } else {
                        dx.segment(off, inner) += gscale * self.grad.segment(off, inner);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax family

/// Softmax along `axis`, max-subtracted for stability.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1) {
    const auto s = detail::split_axis(x.shape(), axis, "softmax");
    Vec<Scalar> out(x.size());
    for (Index o = 0; o < s.outer; ++o)
        for (Index in = 0; in < s.inner; ++in) {
            const Index base = o * s.extent * s.inner + in;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (Index e = 0; e < s.extent; ++e) mx = std::max(mx, x.data()[base + e * s.inner]);
            Scalar z = 0;
            for (Index e = 0; e < s.extent; ++e) {
                const Scalar v = std::exp(x.data()[base + e * s.inner] - mx);
                out[base + e * s.inner] = v;
                z += v;
            }
            for (Index e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
        }
    Vec<Scalar> probs = out;
    return detail::make_result<Scalar>(x.shape(), std::move(out), {x},
                                       [s, probs = std::move(probs)](TensorNode<Scalar>& self) {
                                           auto& g = self.inputs[0]->grad_buffer();
                                           for (Index o = 0; o < s.outer; ++o)
                                               for (Index in = 0; in < s.inner; ++in) {
                                                   const Index base = o * s.extent * s.inner + in;
                                                   Scalar dot = 0;
                                                   for (Index e = 0; e < s.extent; ++e)
                                                       dot += self.grad[base + e * s.inner] * probs[base + e * s.inner];
                                                   for (Index e = 0; e < s.extent; ++e) {
                                                       const Index at = base + e * s.inner;
                                                       g[at] += probs[at] * (self.grad[at] - dot);
                                                   }
                                               }
                                       });
}

/// log(softmax(x)) via log-sum-exp.
template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, Index axis = -1) {
    const auto s = detail::split_axis(x.shape(), axis, "log_softmax");
    Vec<Scalar> out(x.size());
    for (Index o = 0; o < s.outer; ++o)
        for (Index in = 0; in < s.inner; ++in) {
            const Index base = o * s.extent * s.inner + in;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (Index e = 0; e < s.extent; ++e) mx = std::max(mx, x.data()[base + e * s.inner]);
            Scalar z = 0;
            for (Index e = 0; e < s.extent; ++e) z += std::exp(x.data()[base + e * s.inner] - mx);
            const Scalar lse = mx + std::log(z);
            for (Index e = 0; e < s.extent; ++e) out[base + e * s.inner] = x.data()[base + e * s.inner] - lse;
        }
    Vec<Scalar> logp = out;
    return detail::make_result<Scalar>(x.shape(), std::move(out), {x},
                                       [s, logp = std::move(logp)](TensorNode<Scalar>& self) {
                                           auto& g = self.inputs[0]->grad_buffer();
                                           for (Index o = 0; o < s.outer; ++o)
                                               for (Index in = 0; in < s.inner; ++in) {
                                                   const Index base = o * s.extent * s.inner + in;
                                                   Scalar gsum = 0;
                                                   for (Index e = 0; e < s.extent; ++e) gsum += self.grad[base + e * s.inner];
                                                   for (Index e = 0; e < s.extent; ++e) {
                                                       const Index at = base + e * s.inner;
                                                       g[at] += self.grad[at] - std::exp(logp[at]) * gsum;
                                                   }
                                               }
                                       });
}

// ---------------------------------------------------------------------------
// Graph aggregation

/// Mixes joints through K adjacency matrices:
///   out[n, c, t, w] = sum_k sum_v adjacency[k, w, v] * y[n, k*C + c, t, v]
/// for y[N, K*C, T, V] and adjacency[K, V, V]. Differentiable in both inputs.
template <typename Scalar>
Tensor<Scalar> graph_mix(const Tensor<Scalar>& y, const Tensor<Scalar>& adjacency) {
    detail::require_rank(y.shape(), 4, "graph_mix input");
    detail::require_rank(adjacency.shape(), 3, "graph_mix adjacency");
    const Index k = adjacency.dim(0), v = adjacency.dim(1);
    if (adjacency.dim(2) != v || y.dim(3) != v) {
        throw DimensionError("graph_mix: joint count of input " + to_string(y.shape()) +
                             " does not match adjacency " + to_string(adjacency.shape()));
    }
    if (y.dim(1) % k != 0) {
        throw DimensionError("graph_mix: channels of " + to_string(y.shape()) + " not divisible by " +
                             std::to_string(k) + " subsets");
    }
    const Index n = y.dim(0), c = y.dim(1) / k, t = y.dim(2);
    const Index rows = c * t, block = rows * v;
    Vec<Scalar> out = Vec<Scalar>::Zero(n * block);
    for (Index s = 0; s < n; ++s) {
        RowMatMap<Scalar> dst(out.data() + s * block, rows, v);
        for (Index p = 0; p < k; ++p) {
            dst.noalias() += ConstRowMatMap<Scalar>(y.data().data() + (s * k + p) * block, rows, v) *
                             ConstRowMatMap<Scalar>(adjacency.data().data() + p * v * v, v, v).transpose();
        }
    }
    return detail::make_result<Scalar>(
        {n, c, t, v}, std::move(out), {y, adjacency}, [n, k, v, rows, block](TensorNode<Scalar>& self) {
            auto& yn = *self.inputs[0];
            auto& an = *self.inputs[1];
            for (Index s = 0; s < n; ++s) {
                ConstRowMatMap<Scalar> g(self.grad.data() + s * block, rows, v);
                for (Index p = 0; p < k; ++p) {
                    ConstRowMatMap<Scalar> a(an.data.data() + p * v * v, v, v);
                    if (yn.requires_grad) {
                        RowMatMap<Scalar>(yn.grad_buffer().data() + (s * k + p) * block, rows, v).noalias() += g * a;
                    }
                    if (an.requires_grad) {
                        RowMatMap<Scalar>(an.grad_buffer().data() + p * v * v, v, v).noalias() +=
                            g.transpose() * ConstRowMatMap<Scalar>(yn.data.data() + (s * k + p) * block, rows, v);
                    }
                }
            }
        });
}

}  // namespace stgait
