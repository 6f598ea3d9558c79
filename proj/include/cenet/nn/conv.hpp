#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <string>
#include <type_traits>
#include <vector>

#include "cenet/nn/direct_conv.hpp"
#include "cenet/nn/parameter.hpp"
#include "cenet/tensor.hpp"

namespace cenet::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

struct ConvOptions {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int dilation = 1;
    int64_t groups = 1;
    bool bias = false;
    bool allow_direct = true;  // use the vectorised unit-stride kernels for float tensors
};

inline int64_t conv_output_extent(int64_t in, const ConvOptions& o)
{
    return (in + 2 * o.padding - o.dilation * (o.kernel - 1) - 1) / o.stride + 1;
}

/// 3D convolution with a cubic kernel. Pointwise convolutions are a single GEMM per group;
/// unit-stride float convolutions use the register-blocked kernels in direct_conv.hpp; the
/// rest go through GEMM over an im2col buffer built a few output lines at a time.
template <typename T>
class Conv3d {
public:
    Conv3d() = default;
    explicit Conv3d(ConvOptions opt) : opt_(opt)
    {
        if (opt.in_channels < 1 || opt.out_channels < 1 || opt.groups < 1 || opt.kernel < 1 || opt.stride < 1 ||
            opt.dilation < 1 || opt.padding < 0) {
            throw ConfigError("Conv3d: invalid options");
        }
        if (opt.in_channels % opt.groups != 0 || opt.out_channels % opt.groups != 0) {
            throw ConfigError("Conv3d: groups (" + std::to_string(opt.groups) + ") must divide in_channels (" +
                              std::to_string(opt.in_channels) + ") and out_channels (" +
                              std::to_string(opt.out_channels) + ")");
        }
        const int64_t k3 = int64_t(opt.kernel) * opt.kernel * opt.kernel;
        const int64_t cin_g = opt.in_channels / opt.groups;
        weight_ = Parameter<T>(ParamKind::ConvWeight, {opt.out_channels, cin_g, opt.kernel, opt.kernel, opt.kernel},
                               cin_g * k3, opt.out_channels * k3);
        if (opt.bias) bias_ = Parameter<T>(ParamKind::Bias, {1, opt.out_channels, 1, 1, 1});
    }

    const ConvOptions& options() const { return opt_; }
    Parameter<T>& weight() { return weight_; }
    const Parameter<T>& weight() const { return weight_; }
    bool has_bias() const { return opt_.bias; }
    Parameter<T>& bias() { return bias_; }

    void collect(ParamList<T>& list, const std::string& prefix)
    {
        list.add(prefix, weight_, "weight");
        if (opt_.bias) list.add(prefix, bias_, "bias");
    }

    Dims3 output_dims(Dims3 in) const
    {
        return {conv_output_extent(in.d, opt_), conv_output_extent(in.h, opt_), conv_output_extent(in.w, opt_)};
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        input_ = x;
        return apply(x);
    }

    /// Forward without caching the input (inference).
    Tensor<T> apply(const Tensor<T>& x) const
    {
        if (x.c() != opt_.in_channels) {
            throw ShapeError("Conv3d: expected " + std::to_string(opt_.in_channels) + " input channels, got " +
                             x.shape().str());
        }
        const Dims3 od = output_dims(x.spatial());
        if (od.d < 1 || od.h < 1 || od.w < 1) throw ShapeError("Conv3d: input too small " + x.shape().str());
        Tensor<T> y(x.n(), opt_.out_channels, od.d, od.h, od.w);
        const int64_t cin_g = opt_.in_channels / opt_.groups;
        const int64_t cout_g = opt_.out_channels / opt_.groups;
        const int64_t rows = cin_g * kernel_volume();
        const int64_t out_vox = y.voxels();

        if (pointwise()) {
            for (int64_t b = 0; b < x.n(); ++b) {
                for (int64_t g = 0; g < opt_.groups; ++g) {
                    ConstMatrixMap<T> xin(x.channel(b, g * cin_g), cin_g, out_vox, Eigen::OuterStride<>(out_vox));
                    MatrixMap<T> yo(y.channel(b, g * cout_g), cout_g, out_vox, Eigen::OuterStride<>(out_vox));
                    yo.noalias() = weight_matrix(g) * xin;
                }
            }
        } else if (use_direct()) {
#ifdef CENET_HAVE_VECTOR_KERNELS
            if constexpr (std::is_same_v<T, float>) {
                detail::direct_conv_forward(x, weight_.value.data(), direct_geometry(), y);
            }
#endif
        } else {
            const int64_t lines = od.d * od.h;
            const int64_t chunk = chunk_lines(rows, od.w, lines);
            std::vector<T> col(static_cast<size_t>(rows * od.w * chunk));
            for (int64_t b = 0; b < x.n(); ++b) {
                for (int64_t g = 0; g < opt_.groups; ++g) {
                    for (int64_t l0 = 0; l0 < lines; l0 += chunk) {
                        const int64_t l1 = std::min(lines, l0 + chunk);
                        const int64_t cols = (l1 - l0) * od.w;
                        im2col(x, b, g * cin_g, cin_g, od, l0, l1, col.data());
                        ConstMatrixMap<T> cm(col.data(), rows, cols, Eigen::OuterStride<>(cols));
                        MatrixMap<T> yo(y.channel(b, g * cout_g) + l0 * od.w, cout_g, cols,
                                        Eigen::OuterStride<>(out_vox));
                        yo.noalias() = weight_matrix(g) * cm;
                    }
                }
            }
        }
        if (opt_.bias) {
            for (int64_t b = 0; b < y.n(); ++b) {
                for (int64_t o = 0; o < opt_.out_channels; ++o) {
                    T* p = y.channel(b, o);
                    const T bv = bias_.value[o];
                    for (int64_t i = 0; i < out_vox; ++i) p[i] += bv;
                }
            }
        }
        return y;
    }

    /// Accumulates parameter gradients and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& gy)
    {
        const Tensor<T>& x = input_;
        const Dims3 od = output_dims(x.spatial());
        if (gy.n() != x.n() || gy.c() != opt_.out_channels || gy.spatial() != od) {
            throw ShapeError("Conv3d::backward: gradient shape " + gy.shape().str());
        }
        Tensor<T> gx(x.shape());
        const int64_t cin_g = opt_.in_channels / opt_.groups;
        const int64_t cout_g = opt_.out_channels / opt_.groups;
        const int64_t rows = cin_g * kernel_volume();
        const int64_t out_vox = gy.voxels();

        if (opt_.bias) {
            for (int64_t b = 0; b < gy.n(); ++b) {
                for (int64_t o = 0; o < opt_.out_channels; ++o) {
                    const T* p = gy.channel(b, o);
                    T s = 0;
                    for (int64_t i = 0; i < out_vox; ++i) s += p[i];
                    bias_.grad[o] += s;
                }
            }
        }

        if (pointwise()) {
            for (int64_t b = 0; b < x.n(); ++b) {
                for (int64_t g = 0; g < opt_.groups; ++g) {
                    ConstMatrixMap<T> xin(x.channel(b, g * cin_g), cin_g, out_vox, Eigen::OuterStride<>(out_vox));
                    ConstMatrixMap<T> go(gy.channel(b, g * cout_g), cout_g, out_vox, Eigen::OuterStride<>(out_vox));
                    MatrixMap<T> gi(gx.channel(b, g * cin_g), cin_g, out_vox, Eigen::OuterStride<>(out_vox));
                    grad_matrix(g).noalias() += go * xin.transpose();
                    gi.noalias() = weight_matrix(g).transpose() * go;
                }
            }
            return gx;
        }

#ifdef CENET_HAVE_VECTOR_KERNELS
        if constexpr (std::is_same_v<T, float>) {
            if (use_direct()) {
                detail::direct_conv_backward_input(gy, weight_.value.data(), direct_geometry(), gx);
                detail::direct_conv_backward_weight(x, gy, direct_geometry(), weight_.grad.data());
                return gx;
            }
        }
#endif

        const int64_t lines = od.d * od.h;
        const int64_t chunk = chunk_lines(rows, od.w, lines);
        std::vector<T> col(static_cast<size_t>(rows * od.w * chunk));
        std::vector<T> gcol(col.size());
        for (int64_t b = 0; b < x.n(); ++b) {
            for (int64_t g = 0; g < opt_.groups; ++g) {
                for (int64_t l0 = 0; l0 < lines; l0 += chunk) {
                    const int64_t l1 = std::min(lines, l0 + chunk);
                    const int64_t cols = (l1 - l0) * od.w;
                    im2col(x, b, g * cin_g, cin_g, od, l0, l1, col.data());
                    ConstMatrixMap<T> cm(col.data(), rows, cols, Eigen::OuterStride<>(cols));
                    ConstMatrixMap<T> go(gy.channel(b, g * cout_g) + l0 * od.w, cout_g, cols,
                                         Eigen::OuterStride<>(out_vox));
                    grad_matrix(g).noalias() += go * cm.transpose();
                    MatrixMap<T> gc(gcol.data(), rows, cols, Eigen::OuterStride<>(cols));
                    gc.noalias() = weight_matrix(g).transpose() * go;
                    col2im(gcol.data(), gx, b, g * cin_g, cin_g, od, l0, l1);
                }
            }
        }
        return gx;
    }

    void release() { input_ = Tensor<T>(); }

private:
    int64_t kernel_volume() const { return int64_t(opt_.kernel) * opt_.kernel * opt_.kernel; }
    bool pointwise() const { return opt_.kernel == 1 && opt_.stride == 1 && opt_.padding == 0; }

    bool use_direct() const
    {
#ifdef CENET_HAVE_VECTOR_KERNELS
        return std::is_same_v<T, float> && opt_.allow_direct && opt_.stride == 1 &&
               opt_.padding <= opt_.dilation * (opt_.kernel - 1);
#else
        return false;
#endif
    }

    detail::DirectGeometry direct_geometry() const
    {
        return {opt_.in_channels / opt_.groups, opt_.out_channels / opt_.groups, opt_.groups, opt_.kernel,
                opt_.padding, opt_.dilation};
    }

    static int64_t chunk_lines(int64_t rows, int64_t width, int64_t lines)
    {
        return std::clamp<int64_t>(kColBudget / std::max<int64_t>(1, rows * width), 1, lines);
    }

    ConstMatrixMap<T> weight_matrix(int64_t g) const
    {
        const int64_t cout_g = opt_.out_channels / opt_.groups;
        const int64_t rows = (opt_.in_channels / opt_.groups) * kernel_volume();
        return ConstMatrixMap<T>(weight_.value.data() + g * cout_g * rows, cout_g, rows, Eigen::OuterStride<>(rows));
    }

    MatrixMap<T> grad_matrix(int64_t g)
    {
        const int64_t cout_g = opt_.out_channels / opt_.groups;
        const int64_t rows = (opt_.in_channels / opt_.groups) * kernel_volume();
        return MatrixMap<T>(weight_.grad.data() + g * cout_g * rows, cout_g, rows, Eigen::OuterStride<>(rows));
    }

    // Valid output-x range [lo, hi) for kernel tap kx when stride is 1.
    void unit_stride_range(int64_t kx, int64_t in_w, int64_t out_w, int64_t& lo, int64_t& hi) const
    {
        const int64_t shift = kx * opt_.dilation - opt_.padding;
        lo = std::clamp<int64_t>(-shift, 0, out_w);
        hi = std::clamp<int64_t>(in_w - shift, lo, out_w);
    }

    void im2col(const Tensor<T>& x, int64_t b, int64_t c0, int64_t cin_g, Dims3 od, int64_t l0, int64_t l1,
                T* col) const
    {
        const Dims3 id = x.spatial();
        const int K = opt_.kernel;
        const int64_t cols = (l1 - l0) * od.w;
        for (int64_t ci = 0; ci < cin_g; ++ci) {
            const T* src = x.channel(b, c0 + ci);
            for (int kz = 0; kz < K; ++kz) {
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        T* dst = col + (((ci * K + kz) * K + ky) * K + kx) * cols;
                        int64_t lo = 0, hi = 0;
                        if (opt_.stride == 1) unit_stride_range(kx, id.w, od.w, lo, hi);
                        for (int64_t line = l0; line < l1; ++line, dst += od.w) {
                            const int64_t oz = line / od.h, oy = line % od.h;
                            const int64_t iz = oz * opt_.stride - opt_.padding + kz * opt_.dilation;
                            {
                                const int64_t iy = oy * opt_.stride - opt_.padding + ky * opt_.dilation;
                                if (iz < 0 || iz >= id.d || iy < 0 || iy >= id.h) {
                                    std::fill_n(dst, od.w, T(0));
                                    continue;
                                }
                                const T* row = src + (iz * id.h + iy) * id.w;
                                if (opt_.stride == 1) {
                                    const int64_t shift = kx * opt_.dilation - opt_.padding;
                                    std::fill(dst, dst + lo, T(0));
                                    std::copy(row + lo + shift, row + hi + shift, dst + lo);
                                    std::fill(dst + hi, dst + od.w, T(0));
                                } else {
                                    for (int64_t ox = 0; ox < od.w; ++ox) {
                                        const int64_t ix = ox * opt_.stride - opt_.padding + kx * opt_.dilation;
                                        dst[ox] = (ix >= 0 && ix < id.w) ? row[ix] : T(0);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im(const T* col, Tensor<T>& gx, int64_t b, int64_t c0, int64_t cin_g, Dims3 od, int64_t l0,
                int64_t l1) const
    {
        const Dims3 id = gx.spatial();
        const int K = opt_.kernel;
        const int64_t cols = (l1 - l0) * od.w;
        for (int64_t ci = 0; ci < cin_g; ++ci) {
            T* dst = gx.channel(b, c0 + ci);
            for (int kz = 0; kz < K; ++kz) {
                for (int ky = 0; ky < K; ++ky) {
                    for (int kx = 0; kx < K; ++kx) {
                        const T* src = col + (((ci * K + kz) * K + ky) * K + kx) * cols;
                        int64_t lo = 0, hi = 0;
                        if (opt_.stride == 1) unit_stride_range(kx, id.w, od.w, lo, hi);
                        for (int64_t line = l0; line < l1; ++line, src += od.w) {
                            const int64_t oz = line / od.h, oy = line % od.h;
                            const int64_t iz = oz * opt_.stride - opt_.padding + kz * opt_.dilation;
                            {
                                const int64_t iy = oy * opt_.stride - opt_.padding + ky * opt_.dilation;
                                if (iz < 0 || iz >= id.d || iy < 0 || iy >= id.h) continue;
                                T* row = dst + (iz * id.h + iy) * id.w;
                                if (opt_.stride == 1) {
                                    const int64_t shift = kx * opt_.dilation - opt_.padding;
                                    for (int64_t ox = lo; ox < hi; ++ox) row[ox + shift] += src[ox];
                                } else {
                                    for (int64_t ox = 0; ox < od.w; ++ox) {
                                        const int64_t ix = ox * opt_.stride - opt_.padding + kx * opt_.dilation;
                                        if (ix >= 0 && ix < id.w) row[ix] += src[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    static constexpr int64_t kColBudget = int64_t(1) << 18;  // im2col elements per chunk

    ConvOptions opt_{};
    Parameter<T> weight_;
    Parameter<T> bias_;
    Tensor<T> input_;
};

/// Transposed convolution with kernel 2 and stride 2 (exact spatial doubling, no overlap).
/// Weight is stored as an (out_channels * 8) x in_channels matrix.
template <typename T>
class ConvTranspose3d {
public:
    ConvTranspose3d() = default;
    ConvTranspose3d(int64_t in_channels, int64_t out_channels, bool bias = false)
        : in_(in_channels), out_(out_channels), has_bias_(bias)
    {
        if (in_channels < 1 || out_channels < 1) throw ConfigError("ConvTranspose3d: invalid channel counts");
        weight_ = Parameter<T>(ParamKind::ConvWeight, {out_channels * 8, in_channels, 1, 1, 1}, out_channels * 8,
                               in_channels * 8);
        if (bias) bias_ = Parameter<T>(ParamKind::Bias, {1, out_channels, 1, 1, 1});
    }

    int64_t out_channels() const { return out_; }
    Parameter<T>& weight() { return weight_; }

    void collect(ParamList<T>& list, const std::string& prefix)
    {
        list.add(prefix, weight_, "weight");
        if (has_bias_) list.add(prefix, bias_, "bias");
    }

    Tensor<T> forward(const Tensor<T>& x)
    {
        input_ = x;
        return apply(x);
    }

    Tensor<T> apply(const Tensor<T>& x) const
    {
        if (x.c() != in_) throw ShapeError("ConvTranspose3d: unexpected input " + x.shape().str());
        const Dims3 id = x.spatial();
        const int64_t n_in = id.count();
        Tensor<T> y(x.n(), out_, id.d * 2, id.h * 2, id.w * 2);
        RowMatrix<T> tmp(out_ * 8, n_in);
        for (int64_t b = 0; b < x.n(); ++b) {
            ConstMatrixMap<T> xin(x.channel(b, 0), in_, n_in, Eigen::OuterStride<>(n_in));
            tmp.noalias() = weight_map() * xin;
            for (int64_t o = 0; o < out_; ++o) {
                T* dst = y.channel(b, o);
                for (int tap = 0; tap < 8; ++tap) {
                    const T* src = tmp.data() + (o * 8 + tap) * n_in;
                    scatter_tap(src, dst, id, tap);
                }
                if (has_bias_) {
                    const T bv = bias_.value[o];
                    for (int64_t i = 0; i < n_in * 8; ++i) dst[i] += bv;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy)
    {
        const Tensor<T>& x = input_;
        const Dims3 id = x.spatial();
        const int64_t n_in = id.count();
        if (gy.n() != x.n() || gy.c() != out_ || gy.spatial() != Dims3{id.d * 2, id.h * 2, id.w * 2}) {
            throw ShapeError("ConvTranspose3d::backward: gradient shape " + gy.shape().str());
        }
        Tensor<T> gx(x.shape());
        RowMatrix<T> gtmp(out_ * 8, n_in);
        MatrixMap<T> gw(weight_.grad.data(), out_ * 8, in_, Eigen::OuterStride<>(in_));
        for (int64_t b = 0; b < x.n(); ++b) {
            for (int64_t o = 0; o < out_; ++o) {
                const T* src = gy.channel(b, o);
                for (int tap = 0; tap < 8; ++tap) gather_tap(src, gtmp.data() + (o * 8 + tap) * n_in, id, tap);
                if (has_bias_) {
                    T s = 0;
                    for (int64_t i = 0; i < n_in * 8; ++i) s += src[i];
                    bias_.grad[o] += s;
                }
            }
            ConstMatrixMap<T> xin(x.channel(b, 0), in_, n_in, Eigen::OuterStride<>(n_in));
            gw.noalias() += gtmp * xin.transpose();
            MatrixMap<T> gi(gx.channel(b, 0), in_, n_in, Eigen::OuterStride<>(n_in));
            gi.noalias() = weight_map().transpose() * gtmp;
        }
        return gx;
    }

    void release() { input_ = Tensor<T>(); }

private:
    ConstMatrixMap<T> weight_map() const
    {
        return ConstMatrixMap<T>(weight_.value.data(), out_ * 8, in_, Eigen::OuterStride<>(in_));
    }

    static void scatter_tap(const T* src, T* dst, Dims3 id, int tap)
    {
        const int a = tap >> 2, bb = (tap >> 1) & 1, c = tap & 1;
        const int64_t oh = id.h * 2, ow = id.w * 2;
        for (int64_t z = 0; z < id.d; ++z)
            for (int64_t y = 0; y < id.h; ++y) {
                T* row = dst + ((2 * z + a) * oh + 2 * y + bb) * ow + c;
                for (int64_t x = 0; x < id.w; ++x) row[2 * x] = *src++;
            }
    }

    static void gather_tap(const T* src, T* dst, Dims3 id, int tap)
    {
        const int a = tap >> 2, bb = (tap >> 1) & 1, c = tap & 1;
        const int64_t oh = id.h * 2, ow = id.w * 2;
        for (int64_t z = 0; z < id.d; ++z)
            for (int64_t y = 0; y < id.h; ++y) {
                const T* row = src + ((2 * z + a) * oh + 2 * y + bb) * ow + c;
                for (int64_t x = 0; x < id.w; ++x) *dst++ = row[2 * x];
            }
    }

    int64_t in_ = 0, out_ = 0;
    bool has_bias_ = false;
    Parameter<T> weight_;
    Parameter<T> bias_;
    Tensor<T> input_;
};

}  // namespace cenet::nn
