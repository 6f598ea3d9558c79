#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cenet/nn/conv.hpp"
#include "cenet/nn/parameter.hpp"
#include "cenet/tensor.hpp"

namespace cenet::nn {

enum class Mode { Train, Eval };

/// Per-channel batch normalisation over (batch, depth, height, width).
template <typename T>
class BatchNorm3d {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm3d() = default;
    explicit BatchNorm3d(int64_t channels)
        : channels_(channels),
          scale_(ParamKind::BnScale, {1, channels, 1, 1, 1}),
          shift_(ParamKind::BnShift, {1, channels, 1, 1, 1}),
          running_mean_(static_cast<size_t>(channels), T(0)),
          running_var_(static_cast<size_t>(channels), T(1))
    {
        scale_.value.fill(T(1));
    }

    void collect(ParamList<T>& list, const std::string& prefix)
    {
        list.add(prefix, scale_, "scale");
        list.add(prefix, shift_, "shift");
        list.add_buffer(prefix, running_mean_, "running_mean");
        list.add_buffer(prefix, running_var_, "running_var");
    }

    Parameter<T>& scale() { return scale_; }
    Parameter<T>& shift() { return shift_; }
    const std::vector<T>& running_mean() const { return running_mean_; }
    const std::vector<T>& running_var() const { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (x.c() != channels_) throw ShapeError("BatchNorm3d: unexpected input " + x.shape().str());
        const int64_t vox = x.voxels();
        const int64_t count = x.n() * vox;
        Tensor<T> y(x.shape());
        if (mode == Mode::Train) {
            xhat_ = Tensor<T>(x.shape());
            inv_std_.assign(static_cast<size_t>(channels_), T(0));
        }
        for (int64_t c = 0; c < channels_; ++c) {
            double mean = 0, var = 0;
            if (mode == Mode::Train) {
                for (int64_t b = 0; b < x.n(); ++b) {
                    const T* p = x.channel(b, c);
                    for (int64_t i = 0; i < vox; ++i) mean += p[i];
                }
                mean /= double(count);
                for (int64_t b = 0; b < x.n(); ++b) {
                    const T* p = x.channel(b, c);
                    for (int64_t i = 0; i < vox; ++i) {
                        const double d = double(p[i]) - mean;
                        var += d * d;
                    }
                }
                const double unbiased = count > 1 ? var / double(count - 1) : 0.0;
                var /= double(count);
                running_mean_[c] = T((1 - kMomentum) * running_mean_[c] + kMomentum * mean);
                running_var_[c] = T((1 - kMomentum) * running_var_[c] + kMomentum * unbiased);
            } else {
                mean = running_mean_[c];
                var = running_var_[c];
            }
            const T istd = T(1.0 / std::sqrt(var + kEps));
            const T m = T(mean);
            const T g = scale_.value[c];
            const T s = shift_.value[c];
            if (mode == Mode::Train) inv_std_[c] = istd;
            for (int64_t b = 0; b < x.n(); ++b) {
                const T* p = x.channel(b, c);
                T* q = y.channel(b, c);
                if (mode == Mode::Train) {
                    T* h = xhat_.channel(b, c);
                    for (int64_t i = 0; i < vox; ++i) {
                        h[i] = (p[i] - m) * istd;
                        q[i] = g * h[i] + s;
                    }
                } else {
                    for (int64_t i = 0; i < vox; ++i) q[i] = g * (p[i] - m) * istd + s;
                }
            }
        }
        return y;
    }

    /// Backward through training-mode statistics.
    Tensor<T> backward(const Tensor<T>& gy)
    {
        require_same_shape(gy, xhat_, "BatchNorm3d::backward");
        const int64_t vox = gy.voxels();
        const double count = double(gy.n() * vox);
        Tensor<T> gx(gy.shape());
        for (int64_t c = 0; c < channels_; ++c) {
            double sum_g = 0, sum_gh = 0;
            for (int64_t b = 0; b < gy.n(); ++b) {
                const T* g = gy.channel(b, c);
                const T* h = xhat_.channel(b, c);
                for (int64_t i = 0; i < vox; ++i) {
                    sum_g += g[i];
                    sum_gh += double(g[i]) * h[i];
                }
            }
            shift_.grad[c] += T(sum_g);
            scale_.grad[c] += T(sum_gh);
            const T k = scale_.value[c] * inv_std_[c];
            const T mg = T(sum_g / count);
            const T mgh = T(sum_gh / count);
            for (int64_t b = 0; b < gy.n(); ++b) {
                const T* g = gy.channel(b, c);
                const T* h = xhat_.channel(b, c);
                T* o = gx.channel(b, c);
                for (int64_t i = 0; i < vox; ++i) o[i] = k * (g[i] - mg - h[i] * mgh);
            }
        }
        return gx;
    }

    void release() { xhat_ = Tensor<T>(); }

private:
    int64_t channels_ = 0;
    Parameter<T> scale_;
    Parameter<T> shift_;
    std::vector<T> running_mean_;
    std::vector<T> running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x)
    {
        Tensor<T> y(x.shape());
        active_.resize(static_cast<size_t>(x.numel()));
        for (int64_t i = 0; i < x.numel(); ++i) {
            const bool on = x[i] > T(0);
            active_[static_cast<size_t>(i)] = on;
            y[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
        }
        return y;
    }

    static Tensor<T> apply(Tensor<T> x)
    {
        for (auto& v : x.storage()) v = v < T(0) ? T(0) : v;
        return x;
    }

    Tensor<T> backward(Tensor<T> gy) const
    {
        for (int64_t i = 0; i < gy.numel(); ++i)
            if (!active_[static_cast<size_t>(i)]) gy[i] = T(0);
        return gy;
    }

    void release() { active_ = {}; }

private:
    std::vector<uint8_t> active_;
};

/// conv -> batch norm -> ReLU
template <typename T>
class ConvBnRelu {
public:
    ConvBnRelu() = default;
    explicit ConvBnRelu(ConvOptions opt) : conv_(opt), bn_(opt.out_channels) {}

    void collect(ParamList<T>& list, const std::string& prefix)
    {
        conv_.collect(list, prefix + "conv.");
        bn_.collect(list, prefix + "bn.");
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (mode == Mode::Eval) return ReLU<T>::apply(bn_.forward(conv_.apply(x), mode));
        return relu_.forward(bn_.forward(conv_.forward(x), mode));
    }

    Tensor<T> backward(const Tensor<T>& gy) { return conv_.backward(bn_.backward(relu_.backward(gy))); }

    void release()
    {
        conv_.release();
        bn_.release();
        relu_.release();
    }

    Conv3d<T>& conv() { return conv_; }
    BatchNorm3d<T>& bn() { return bn_; }

private:
    Conv3d<T> conv_;
    BatchNorm3d<T> bn_;
    ReLU<T> relu_;
};

/// Linear resampling of spatial axes by integer factors using half-pixel centres
/// (corner alignment disabled); applied axis by axis so the result is trilinear.
template <typename T>
class LinearUpsample {
public:
    static Tensor<T> forward(const Tensor<T>& x, Dims3 factor)
    {
        Tensor<T> y = x;
        for (int axis = 0; axis < 3; ++axis)
            if (factor[axis] != 1) y = resize_axis(y, axis, y.spatial()[axis] * factor[axis], false);
        return y;
    }

    /// Adjoint of forward: maps a gradient on the upsampled grid back to the input grid.
    static Tensor<T> backward(const Tensor<T>& gy, Dims3 factor)
    {
        Tensor<T> g = gy;
        for (int axis = 2; axis >= 0; --axis)
            if (factor[axis] != 1) g = resize_axis(g, axis, g.spatial()[axis] / factor[axis], true);
        return g;
    }

private:
    struct Tap {
        int64_t i0, i1;
        double w1;
    };

    static Tap tap(int64_t out_idx, int64_t in_len, int64_t out_len)
    {
        double src = (double(out_idx) + 0.5) * double(in_len) / double(out_len) - 0.5;
        if (src < 0) src = 0;
        int64_t i0 = static_cast<int64_t>(std::floor(src));
        if (i0 > in_len - 1) i0 = in_len - 1;
        const int64_t i1 = std::min(i0 + 1, in_len - 1);
        return {i0, i1, src - double(i0)};
    }

    // Forward: resize `axis` of x to `len`. Adjoint: x lives on the fine grid and is pulled
    // back onto a grid of extent `len`.
    static Tensor<T> resize_axis(const Tensor<T>& x, int axis, int64_t len, bool adjoint)
    {
        Shape5 s = x.shape();
        const int64_t in_len = s.spatial()[axis];
        Shape5 os = s;
        (axis == 0 ? os.d : axis == 1 ? os.h : os.w) = len;
        Tensor<T> y(os);
        const int64_t fine = adjoint ? in_len : len;
        const int64_t coarse = adjoint ? len : in_len;
        std::vector<Tap> taps(static_cast<size_t>(fine));
        for (int64_t i = 0; i < fine; ++i) taps[static_cast<size_t>(i)] = tap(i, coarse, fine);

        // Decompose into (outer, axis, inner) strides.
        const Dims3 id = s.spatial(), od = os.spatial();
        const int64_t inner = axis == 0 ? id.h * id.w : (axis == 1 ? id.w : 1);
        const int64_t outer_per_plane = axis == 0 ? 1 : (axis == 1 ? id.d : id.d * id.h);
        const int64_t planes = s.n * s.c;
        for (int64_t p = 0; p < planes; ++p) {
            const T* src = x.data() + p * id.count();
            T* dst = y.data() + p * od.count();
            for (int64_t o = 0; o < outer_per_plane; ++o) {
                const T* sb = src + o * in_len * inner;
                T* db = dst + o * len * inner;
                for (int64_t f = 0; f < fine; ++f) {
                    const Tap& t = taps[static_cast<size_t>(f)];
                    const T w1 = T(t.w1), w0 = T(1.0 - t.w1);
                    if (!adjoint) {
                        const T* a = sb + t.i0 * inner;
                        const T* b = sb + t.i1 * inner;
                        T* d = db + f * inner;
                        for (int64_t k = 0; k < inner; ++k) d[k] = w0 * a[k] + w1 * b[k];
                    } else {
                        const T* g = sb + f * inner;
                        T* a = db + t.i0 * inner;
                        T* b = db + t.i1 * inner;
                        for (int64_t k = 0; k < inner; ++k) {
                            a[k] += w0 * g[k];
                            b[k] += w1 * g[k];
                        }
                    }
                }
            }
        }
        return y;
    }
};

/// Foreground probability of a two-channel logit tensor: softmax(x)[1] = sigmoid(x1 - x0).
/// Returns an (n, 1, d, h, w) tensor.
template <typename T>
Tensor<T> foreground_probability(const Tensor<T>& logits)
{
    if (logits.c() != 2) throw ShapeError("foreground_probability: expected 2 channels, got " + logits.shape().str());
    const Dims3 sd = logits.spatial();
    Tensor<T> p(logits.n(), 1, sd.d, sd.h, sd.w);
    const int64_t vox = logits.voxels();
    for (int64_t b = 0; b < logits.n(); ++b) {
        const T* l0 = logits.channel(b, 0);
        const T* l1 = logits.channel(b, 1);
        T* out = p.channel(b, 0);
        for (int64_t i = 0; i < vox; ++i) {
            const T z = l1[i] - l0[i];
            out[i] = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
        }
    }
    return p;
}

/// Two-channel softmax (background, foreground).
template <typename T>
Tensor<T> softmax2(const Tensor<T>& logits)
{
    Tensor<T> fg = foreground_probability(logits);
    Tensor<T> out(logits.shape());
    const int64_t vox = logits.voxels();
    for (int64_t b = 0; b < logits.n(); ++b) {
        const T* p = fg.channel(b, 0);
        T* o0 = out.channel(b, 0);
        T* o1 = out.channel(b, 1);
        for (int64_t i = 0; i < vox; ++i) {
            o1[i] = p[i];
            o0[i] = T(1) - p[i];
        }
    }
    return out;
}

/// Chain rule from d/d(prob_fg) to d/d(logits) for the two-channel softmax.
template <typename T>
Tensor<T> foreground_probability_backward(const Tensor<T>& prob_fg, const Tensor<T>& grad_prob)
{
    require_same_shape(prob_fg, grad_prob, "foreground_probability_backward");
    const Dims3 sd = prob_fg.spatial();
    Tensor<T> g(prob_fg.n(), 2, sd.d, sd.h, sd.w);
    const int64_t vox = prob_fg.voxels();
    for (int64_t b = 0; b < prob_fg.n(); ++b) {
        const T* p = prob_fg.channel(b, 0);
        const T* gp = grad_prob.channel(b, 0);
        T* g0 = g.channel(b, 0);
        T* g1 = g.channel(b, 1);
        for (int64_t i = 0; i < vox; ++i) {
            const T d = gp[i] * p[i] * (T(1) - p[i]);
            g1[i] = d;
            g0[i] = -d;
        }
    }
    return g;
}

}  // namespace cenet::nn
