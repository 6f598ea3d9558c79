#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cenet/model/blocks.hpp"
#include "cenet/model/config.hpp"
#include "cenet/nn/layers.hpp"
#include "cenet/nn/parameter.hpp"

namespace cenet::model {

/// The supervised outputs of one forward pass. Tensors belonging to an ablated branch are empty.
template <typename T>
struct FeatureBundle {
    Tensor<T> f_out;      // final out-transition logits
    Tensor<T> f_shape0;   // first shape transition
    Tensor<T> f_shape1;   // second shape transition
    Tensor<T> f_contour;  // contour transition
    Tensor<T> shape;      // shape estimate: f_shape0 - f_shape1 (f_shape1 when stacked)
    Tensor<T> prob;       // softmax(f_out), two channels

    bool has_shape() const { return !shape.empty(); }
    bool has_contour() const { return !f_contour.empty(); }
};

/// Gradients of a scalar objective with respect to the supervised outputs. Empty tensors
/// stand for zero gradient.
template <typename T>
struct BundleGrad {
    Tensor<T> f_out;
    Tensor<T> shape;
    Tensor<T> f_contour;
};

template <typename T>
class CENet {
public:
    CENet() = default;
    explicit CENet(NetworkConfig cfg) : cfg_(cfg)
    {
        cfg_.validate();
        const int64_t bc = cfg_.block_channels();
        stem_ = nn::ConvBnRelu<T>({.in_channels = 1, .out_channels = cfg_.base_channels, .kernel = 3, .padding = 1});
        for (int64_t l = 0; l < cfg_.levels; ++l) {
            encoders_.emplace_back(l == 0 ? cfg_.base_channels : bc, cfg_.growth_k, cfg_.group_n, cfg_.separable);
            downs_.emplace_back(bc);
            ups_.emplace_back(bc, bc);
            decoders_.emplace_back(bc, cfg_.growth_k, cfg_.group_n, cfg_.separable);
        }
        bottom_ = DBlock<T>(bc, cfg_.growth_k, cfg_.group_n, cfg_.separable);

        const int64_t fused = fused_channels();
        const int64_t tw = cfg_.transition_channels;
        if (has_shape_branch(cfg_.ablation)) {
            shape0_ = DeepTransition<T>(fused, tw, TransitionKind::Shape);
            const int64_t in1 = cfg_.ablation == Ablation::RNoResidual ? 2 : fused;
            shape1_ = DeepTransition<T>(in1, tw, TransitionKind::Shape);
        }
        if (has_contour_branch(cfg_.ablation)) contour_ = DeepTransition<T>(fused, tw, TransitionKind::Contour);
        const int64_t out1_in = fused + (has_contour_branch(cfg_.ablation) ? 2 : 0);
        out1_ = OutTransition<T>(out1_in, cfg_.out_growth, cfg_.out_hidden);
        const int64_t out2_in = cfg_.out_hidden + (has_shape_branch(cfg_.ablation) ? 2 : 0);
        out2_ = OutTransition<T>(out2_in, cfg_.out_growth, 2);
    }

    const NetworkConfig& config() const { return cfg_; }

    /// Channels of the fused deep features: the top decoder output plus every lower level
    /// upsampled to full resolution, in increasing depth order.
    int64_t fused_channels() const { return cfg_.block_channels() * (cfg_.levels + 1); }

    nn::ParamList<T> parameters()
    {
        nn::ParamList<T> list;
        stem_.collect(list, "stem.");
        for (size_t l = 0; l < encoders_.size(); ++l) {
            const std::string lv = std::to_string(l);
            encoders_[l].collect(list, "enc" + lv + ".");
            downs_[l].collect(list, "down" + lv + ".");
        }
        bottom_.collect(list, "bottom.");
        for (size_t l = encoders_.size(); l-- > 0;) {
            const std::string lv = std::to_string(l);
            ups_[l].collect(list, "up" + lv + ".");
            decoders_[l].collect(list, "dec" + lv + ".");
        }
        if (has_shape_branch(cfg_.ablation)) {
            shape0_.collect(list, "shape0.");
            shape1_.collect(list, "shape1.");
        }
        if (has_contour_branch(cfg_.ablation)) contour_.collect(list, "contour.");
        out1_.collect(list, "out1.");
        out2_.collect(list, "out2.");
        return list;
    }

    int64_t parameter_count()
    {
        int64_t total = 0;
        for (auto* p : parameters().params) total += p->value.numel();
        return total;
    }

    /// Glorot-uniform for every convolution weight, zero biases, BN scale 1 / shift 0.
    void xavier_init(uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        for (auto* p : parameters().params) {
            switch (p->kind) {
            case nn::ParamKind::ConvWeight: {
                const double limit = std::sqrt(6.0 / double(p->fan_in + p->fan_out));
                std::uniform_real_distribution<double> dist(-limit, limit);
                for (auto& v : p->value.storage()) v = T(dist(rng));
                break;
            }
            case nn::ParamKind::BnScale: p->value.fill(T(1)); break;
            case nn::ParamKind::Bias:
            case nn::ParamKind::BnShift: p->value.fill(T(0)); break;
            }
            p->zero_grad();
        }
        for (auto& b : parameters().buffers) {
            const bool is_var = b.name.size() >= 3 && b.name.compare(b.name.size() - 3, 3, "var") == 0;
            std::fill(b.values->begin(), b.values->end(), is_var ? T(1) : T(0));
        }
    }

    FeatureBundle<T> forward(const Tensor<T>& x, Mode mode)
    {
        if (x.c() != 1) throw ShapeError("cenet_forward: expected one input channel, got " + x.shape().str());
        if (x.spatial() != cfg_.input_shape) {
            throw ShapeError("cenet_forward: input " + x.shape().str() + " does not match configured shape " +
                             cfg_.input_shape.str());
        }
        const int64_t L = cfg_.levels;
        Tensor<T> h = stem_.forward(x, mode);
        std::vector<Tensor<T>> skips(static_cast<size_t>(L));
        for (int64_t l = 0; l < L; ++l) {
            skips[l] = encoders_[l].forward(h, mode);
            h = downs_[l].forward(skips[l], mode);
        }
        std::vector<Tensor<T>> levels_out(static_cast<size_t>(L + 1));
        levels_out[L] = bottom_.forward(h, mode);
        h = levels_out[L];
        for (int64_t l = L - 1; l >= 0; --l) {
            Tensor<T> u = ups_[l].forward(h, mode);
            u += skips[l];
            levels_out[l] = decoders_[l].forward(u, mode);
            h = levels_out[l];
        }
        std::vector<Tensor<T>> upscaled(static_cast<size_t>(L + 1));
        std::vector<const Tensor<T>*> parts;
        for (int64_t l = 0; l <= L; ++l) {
            if (l == 0) {
                parts.push_back(&levels_out[0]);
            } else {
                const int64_t f = int64_t(1) << l;
                upscaled[l] = nn::LinearUpsample<T>::forward(levels_out[l], {f, f, f});
                parts.push_back(&upscaled[l]);
            }
        }
        Tensor<T> fused = concat_channels<T>(std::span<const Tensor<T>* const>(parts));
        levels_out.clear();
        upscaled.clear();

        FeatureBundle<T> out;
        if (has_shape_branch(cfg_.ablation)) {
            out.f_shape0 = shape0_.forward(fused, mode);
            if (cfg_.ablation == Ablation::RNoResidual) {
                out.f_shape1 = shape1_.forward(out.f_shape0, mode);
                out.shape = out.f_shape1;
            } else {
                out.f_shape1 = shape1_.forward(fused, mode);
                out.shape = residual_shape(out.f_shape0, out.f_shape1);
            }
        }
        Tensor<T> o1;
        if (has_contour_branch(cfg_.ablation)) {
            out.f_contour = contour_.forward(fused, mode);
            o1 = out1_.forward(concat_channels<T>({&fused, &out.f_contour}), mode);
        } else {
            o1 = out1_.forward(fused, mode);
        }
        out.f_out = out.has_shape() ? out2_.forward(concat_channels<T>({&o1, &out.shape}), mode)
                                    : out2_.forward(o1, mode);
        out.prob = nn::softmax2(out.f_out);
        return out;
    }

    /// Back-propagates through the last training-mode forward pass; parameter gradients are
    /// accumulated and the gradient with respect to the input is returned.
    Tensor<T> backward(const BundleGrad<T>& g)
    {
        const int64_t L = cfg_.levels;
        const int64_t fused_c = fused_channels();
        if (g.f_out.empty()) throw ShapeError("cenet backward: missing output gradient");

        Tensor<T> g_o2in = out2_.backward(g.f_out);
        Tensor<T> g_o1 = slice_channels(g_o2in, 0, cfg_.out_hidden);
        Tensor<T> g_shape;
        if (has_shape_branch(cfg_.ablation)) {
            g_shape = slice_channels(g_o2in, cfg_.out_hidden, 2);
            if (!g.shape.empty()) g_shape += g.shape;
        }
        Tensor<T> g_o1in = out1_.backward(g_o1);
        Tensor<T> g_fused = slice_channels(g_o1in, 0, fused_c);
        if (has_contour_branch(cfg_.ablation)) {
            Tensor<T> g_c = slice_channels(g_o1in, fused_c, 2);
            if (!g.f_contour.empty()) g_c += g.f_contour;
            g_fused += contour_.backward(g_c);
        }
        if (has_shape_branch(cfg_.ablation)) {
            if (cfg_.ablation == Ablation::RNoResidual) {
                Tensor<T> g_s0 = shape1_.backward(g_shape);
                g_fused += shape0_.backward(g_s0);
            } else {
                g_fused += shape0_.backward(g_shape);
                g_shape *= T(-1);
                g_fused += shape1_.backward(g_shape);
            }
        }

        const int64_t bc = cfg_.block_channels();
        Tensor<T> g_h = slice_channels(g_fused, 0, bc);  // gradient w.r.t. decoder level-0 output
        std::vector<Tensor<T>> g_level(static_cast<size_t>(L + 1));
        for (int64_t l = 1; l <= L; ++l) {
            const int64_t f = int64_t(1) << l;
            g_level[l] = nn::LinearUpsample<T>::backward(slice_channels(g_fused, l * bc, bc), {f, f, f});
        }
        g_fused = Tensor<T>();

        std::vector<Tensor<T>> g_skip(static_cast<size_t>(L));
        for (int64_t l = 0; l < L; ++l) {
            Tensor<T> g_u = decoders_[l].backward(g_h);
            g_skip[l] = g_u;
            g_h = ups_[l].backward(g_u);
            g_h += g_level[l + 1];
        }
        g_h = bottom_.backward(g_h);
        for (int64_t l = L - 1; l >= 0; --l) {
            Tensor<T> g_s = downs_[l].backward(g_h);
            g_s += g_skip[l];
            g_h = encoders_[l].backward(g_s);
        }
        Tensor<T> gx = stem_.backward(g_h);
        release();
        return gx;
    }

    void zero_grad()
    {
        for (auto* p : parameters().params) p->zero_grad();
    }

    /// Drops activations cached for backward.
    void release()
    {
        stem_.release();
        for (auto& e : encoders_) e.release();
        for (auto& d : downs_) d.release();
        for (auto& u : ups_) u.release();
        for (auto& d : decoders_) d.release();
        bottom_.release();
        shape0_.release();
        shape1_.release();
        contour_.release();
        out1_.release();
        out2_.release();
    }

    OutTransition<T>& out1() { return out1_; }

private:
    NetworkConfig cfg_{};
    nn::ConvBnRelu<T> stem_;
    std::vector<DBlock<T>> encoders_;
    std::vector<DownTransition<T>> downs_;
    std::vector<UpTransition<T>> ups_;
    std::vector<DBlock<T>> decoders_;
    DBlock<T> bottom_;
    DeepTransition<T> shape0_, shape1_, contour_;
    OutTransition<T> out1_, out2_;
};

/// Trainable scalar count of the network described by `cfg`.
inline int64_t count_parameters(const NetworkConfig& cfg)
{
    CENet<float> net(cfg);
    return net.parameter_count();
}

}  // namespace cenet::model
