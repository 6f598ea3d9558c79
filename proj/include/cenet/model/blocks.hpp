#pragma once

#include <array>
#include <string>
#include <vector>

#include "cenet/nn/conv.hpp"
#include "cenet/nn/layers.hpp"
#include "cenet/tensor.hpp"

namespace cenet::model {

using nn::Mode;

inline void require_even(const Dims3& d, const char* what)
{
    if (d.d % 2 || d.h % 2 || d.w % 2) {
        throw ShapeError(std::string(what) + ": spatial dims " + d.str() + " must all be even");
    }
}

/// Densely connected block: three stages of grouped 3x3x3 conv -> 1x1x1 conv (k features)
/// -> BN -> ReLU. Stage s sees the block input concatenated with stages 0..s-1; the block
/// emits the concatenation of the three stage outputs (3k channels).
template <typename T>
class DBlock {
public:
    DBlock() = default;
    DBlock(int64_t in_channels, int64_t growth_k, int64_t group_n, bool separable = true)
        : in_(in_channels), k_(growth_k)
    {
        if (growth_k < 1 || group_n < 1) throw ConfigError("DBlock: growth_k and group_n must be >= 1");
        for (int s = 0; s < 3; ++s) {
            const int64_t c = in_channels + s * growth_k;
            if (separable && c % group_n != 0) {
                throw ConfigError("DBlock: group size n = " + std::to_string(group_n) +
                                  " does not divide stage input channel count " + std::to_string(c));
            }
            nn::ConvOptions sep{.in_channels = c, .out_channels = c, .kernel = 3, .padding = 1,
                                .groups = separable ? c / group_n : 1};
            nn::ConvOptions proj{.in_channels = c, .out_channels = growth_k, .kernel = 1, .padding = 0};
            stages_[s].separable = nn::Conv3d<T>(sep);
            stages_[s].project = nn::ConvBnRelu<T>(proj);
        }
    }

    int64_t in_channels() const { return in_; }
    int64_t out_channels() const { return 3 * k_; }

    void collect(nn::ParamList<T>& list, const std::string& prefix)
    {
        for (int s = 0; s < 3; ++s) {
            const std::string p = prefix + "stage" + std::to_string(s) + ".";
            stages_[s].separable.collect(list, p + "sep.");
            stages_[s].project.collect(list, p + "proj.");
        }
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (x.c() != in_) {
            throw ShapeError("DBlock: expected " + std::to_string(in_) + " channels, got " + x.shape().str());
        }
        std::array<Tensor<T>, 3> outs;
        for (int s = 0; s < 3; ++s) {
            std::vector<const Tensor<T>*> parts{&x};
            for (int j = 0; j < s; ++j) parts.push_back(&outs[j]);
            Tensor<T> in = concat_channels<T>(std::span<const Tensor<T>* const>(parts));
            Tensor<T> sep = mode == Mode::Train ? stages_[s].separable.forward(in) : stages_[s].separable.apply(in);
            outs[s] = stages_[s].project.forward(sep, mode);
        }
        return concat_channels<T>({&outs[0], &outs[1], &outs[2]});
    }

    Tensor<T> backward(const Tensor<T>& gy)
    {
        std::array<Tensor<T>, 3> g;
        for (int s = 0; s < 3; ++s) g[s] = slice_channels(gy, s * k_, k_);
        Tensor<T> gx;
        for (int s = 2; s >= 0; --s) {
            Tensor<T> gin = stages_[s].separable.backward(stages_[s].project.backward(g[s]));
            Tensor<T> part = slice_channels(gin, 0, in_);
            if (gx.empty()) {
                gx = std::move(part);
            } else {
                gx += part;
            }
            for (int j = 0; j < s; ++j) g[j] += slice_channels(gin, in_ + j * k_, k_);
        }
        return gx;
    }

    void release()
    {
        for (auto& s : stages_) {
            s.separable.release();
            s.project.release();
        }
    }

private:
    struct Stage {
        nn::Conv3d<T> separable;
        nn::ConvBnRelu<T> project;
    };
    int64_t in_ = 0, k_ = 0;
    std::array<Stage, 3> stages_;
};

/// Stride-2 3x3x3 convolution (+BN+ReLU) halving every spatial dim; channel count preserved.
template <typename T>
class DownTransition {
public:
    DownTransition() = default;
    explicit DownTransition(int64_t channels)
        : layer_(nn::ConvOptions{.in_channels = channels, .out_channels = channels, .kernel = 3, .stride = 2,
                                 .padding = 1})
    {
    }

    void collect(nn::ParamList<T>& list, const std::string& prefix) { layer_.collect(list, prefix); }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        require_even(x.spatial(), "down_transition");
        return layer_.forward(x, mode);
    }
    Tensor<T> backward(const Tensor<T>& gy) { return layer_.backward(gy); }
    void release() { layer_.release(); }

private:
    nn::ConvBnRelu<T> layer_;
};

/// Transposed convolution (kernel 2, stride 2) + BN + ReLU doubling every spatial dim and
/// mapping to the channel count of the skip-connected layer.
template <typename T>
class UpTransition {
public:
    UpTransition() = default;
    UpTransition(int64_t in_channels, int64_t skip_channels)
        : deconv_(in_channels, skip_channels), bn_(skip_channels)
    {
        if (skip_channels < 1) throw ConfigError("up_transition: skip_channels must be >= 1");
    }

    void collect(nn::ParamList<T>& list, const std::string& prefix)
    {
        deconv_.collect(list, prefix + "deconv.");
        bn_.collect(list, prefix + "bn.");
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (mode == Mode::Eval) return nn::ReLU<T>::apply(bn_.forward(deconv_.apply(x), mode));
        return relu_.forward(bn_.forward(deconv_.forward(x), mode));
    }
    Tensor<T> backward(const Tensor<T>& gy) { return deconv_.backward(bn_.backward(relu_.backward(gy))); }
    void release()
    {
        deconv_.release();
        bn_.release();
        relu_.release();
    }

private:
    nn::ConvTranspose3d<T> deconv_;
    nn::BatchNorm3d<T> bn_;
    nn::ReLU<T> relu_;
};

enum class TransitionKind { Contour, Shape };

/// Deep (contour or shape) transition: 3x3x3 conv -> stride-2 down -> dilated 3x3x3 conv (d=2)
/// -> transposed-conv up, summed with the pre-down features -> 1x1x1 conv to two channels.
/// Every conv except the last is followed by BN and ReLU.
template <typename T>
class DeepTransition {
public:
    DeepTransition() = default;
    DeepTransition(int64_t in_channels, int64_t width, TransitionKind kind)
        : kind_(kind),
          in_(in_channels),
          entry_({.in_channels = in_channels, .out_channels = width, .kernel = 3, .padding = 1}),
          down_({.in_channels = width, .out_channels = width, .kernel = 3, .stride = 2, .padding = 1}),
          dilated_({.in_channels = width, .out_channels = width, .kernel = 3, .padding = 2, .dilation = 2}),
          up_(width, width),
          head_({.in_channels = width, .out_channels = 2, .kernel = 1, .padding = 0, .bias = true})
    {
    }

    TransitionKind kind() const { return kind_; }

    void collect(nn::ParamList<T>& list, const std::string& prefix)
    {
        entry_.collect(list, prefix + "entry.");
        down_.collect(list, prefix + "down.");
        dilated_.collect(list, prefix + "dilated.");
        up_.collect(list, prefix + "up.");
        head_.collect(list, prefix + "head.");
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        require_even(x.spatial(), "deep_transition");
        if (x.c() != in_) {
            throw ShapeError("deep_transition: expected " + std::to_string(in_) + " channels, got " +
                             x.shape().str());
        }
        Tensor<T> e = entry_.forward(x, mode);
        Tensor<T> u = up_.forward(dilated_.forward(down_.forward(e, mode), mode), mode);
        u += e;
        return mode == Mode::Train ? head_.forward(u) : head_.apply(u);
    }

    Tensor<T> backward(const Tensor<T>& gy)
    {
        Tensor<T> gu = head_.backward(gy);
        Tensor<T> ge = down_.backward(dilated_.backward(up_.backward(gu)));
        ge += gu;
        return entry_.backward(ge);
    }

    void release()
    {
        entry_.release();
        down_.release();
        dilated_.release();
        up_.release();
        head_.release();
    }

private:
    TransitionKind kind_ = TransitionKind::Shape;
    int64_t in_ = 0;
    nn::ConvBnRelu<T> entry_;
    nn::ConvBnRelu<T> down_;
    nn::ConvBnRelu<T> dilated_;
    UpTransition<T> up_;
    nn::Conv3d<T> head_;
};

/// Out-transition: two densely connected 3x3x3 conv/BN/ReLU stages followed by a 1x1x1
/// convolution over the concatenation of the input and both stage outputs.
template <typename T>
class OutTransition {
public:
    OutTransition() = default;
    OutTransition(int64_t in_channels, int64_t growth, int64_t out_channels)
        : in_(in_channels),
          growth_(growth),
          stage0_({.in_channels = in_channels, .out_channels = growth, .kernel = 3, .padding = 1}),
          stage1_({.in_channels = in_channels + growth, .out_channels = growth, .kernel = 3, .padding = 1}),
          head_({.in_channels = in_channels + 2 * growth, .out_channels = out_channels, .kernel = 1, .padding = 0,
                 .bias = true})
    {
    }

    int64_t in_channels() const { return in_; }
    nn::Conv3d<T>& head() { return head_; }
    nn::ConvBnRelu<T>& stage(int s) { return s == 0 ? stage0_ : stage1_; }

    void collect(nn::ParamList<T>& list, const std::string& prefix)
    {
        stage0_.collect(list, prefix + "stage0.");
        stage1_.collect(list, prefix + "stage1.");
        head_.collect(list, prefix + "head.");
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (x.c() != in_) {
            throw ShapeError("out_transition: expected " + std::to_string(in_) + " channels, got " +
                             x.shape().str());
        }
        Tensor<T> o0 = stage0_.forward(x, mode);
        Tensor<T> c1 = concat_channels<T>({&x, &o0});
        Tensor<T> o1 = stage1_.forward(c1, mode);
        Tensor<T> c2 = concat_channels<T>({&x, &o0, &o1});
        return mode == Mode::Train ? head_.forward(c2) : head_.apply(c2);
    }

    Tensor<T> backward(const Tensor<T>& gy)
    {
        Tensor<T> g2 = head_.backward(gy);
        Tensor<T> g_o1 = slice_channels(g2, in_ + growth_, growth_);
        Tensor<T> g1 = stage1_.backward(g_o1);
        Tensor<T> g_o0 = slice_channels(g2, in_, growth_);
        g_o0 += slice_channels(g1, in_, growth_);
        Tensor<T> gx = slice_channels(g2, 0, in_);
        gx += slice_channels(g1, 0, in_);
        gx += stage0_.backward(g_o0);
        return gx;
    }

    void release()
    {
        stage0_.release();
        stage1_.release();
        head_.release();
    }

private:
    int64_t in_ = 0, growth_ = 0;
    nn::ConvBnRelu<T> stage0_;
    nn::ConvBnRelu<T> stage1_;
    nn::Conv3d<T> head_;
};

/// f_shape0 - f_shape1
template <typename T>
Tensor<T> residual_shape(const Tensor<T>& f_shape0, const Tensor<T>& f_shape1)
{
    require_same_shape(f_shape0, f_shape1, "residual_shape");
    return f_shape0 - f_shape1;
}

}  // namespace cenet::model
