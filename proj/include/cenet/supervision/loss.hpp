#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "cenet/model/cenet.hpp"
#include "cenet/nn/layers.hpp"
#include "cenet/nn/parameter.hpp"
#include "cenet/supervision/contour.hpp"

namespace cenet::supervision {

inline constexpr double kDiceEpsilon = 1e-5;

struct ClassWeights {
    double background = 1.0;
    double foreground = 1.0;
};

struct LossWeights {
    double alpha = 1.0;  // shape dice term
    double beta = 1.0;   // contour cross-entropy term
    double gamma = 0.1;  // L2 on convolution weights
    std::optional<ClassWeights> class_weights;  // unset: derived from each batch's contour target

    void validate() const
    {
        for (double v : {alpha, beta, gamma}) {
            if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and >= 0");
        }
        if (class_weights) {
            for (double v : {class_weights->background, class_weights->foreground}) {
                if (!std::isfinite(v) || v < 0) throw ConfigError("loss.class_weights must be finite and >= 0");
            }
        }
    }
};

template <typename T, typename M>
void require_target_shape(const Tensor<T>& x, const Tensor<M>& target, int64_t channels, const char* what)
{
    if (x.c() != channels || target.c() != 1 || x.n() != target.n() || x.spatial() != target.spatial()) {
        throw ShapeError(std::string(what) + ": input " + x.shape().str() + " vs target " + target.shape().str());
    }
}

/// Soft dice loss 1 - (2 sum(p t) + eps) / (sum(p^2) + sum(t^2) + eps), evaluated per sample and
/// averaged over the batch. prob_fg has one channel. When `grad` is given it receives dL/dprob_fg.
template <typename T>
T soft_dice_loss(const Tensor<T>& prob_fg, const MaskBatch& target, Tensor<T>* grad = nullptr)
{
    require_target_shape(prob_fg, target, 1, "soft_dice_loss");
    const int64_t vox = prob_fg.voxels();
    const double inv_n = 1.0 / double(prob_fg.n());
    if (grad) *grad = Tensor<T>(prob_fg.shape());
    double total = 0;
    for (int64_t b = 0; b < prob_fg.n(); ++b) {
        const T* p = prob_fg.channel(b, 0);
        const uint8_t* t = target.channel(b, 0);
        double inter = 0, pp = 0, tt = 0;
        for (int64_t i = 0; i < vox; ++i) {
            inter += double(p[i]) * t[i];
            pp += double(p[i]) * p[i];
            tt += t[i];
        }
        const double num = 2 * inter + kDiceEpsilon;
        const double den = pp + tt + kDiceEpsilon;
        total += 1.0 - num / den;
        if (grad) {
            T* g = grad->channel(b, 0);
            for (int64_t i = 0; i < vox; ++i) {
                g[i] = T(-inv_n * (2.0 * t[i] * den - num * 2.0 * p[i]) / (den * den));
            }
        }
    }
    return T(total * inv_n);
}

/// Inverse relative class frequency N / (2 N_c), clamped to [0.1, 10]; an absent class gets 10.
inline ClassWeights class_weights_from_target(const MaskBatch& target)
{
    const double n = double(target.numel());
    double fg = 0;
    for (uint8_t v : target.storage()) fg += v;
    auto weight = [n](double count) { return count > 0 ? std::clamp(n / (2.0 * count), 0.1, 10.0) : 10.0; };
    return {weight(n - fg), weight(fg)};
}

/// Mean over voxels of -w_t log softmax(logits)_t for two-channel logits. When `grad` is given it
/// receives dL/dlogits.
template <typename T>
T weighted_softmax_cross_entropy(const Tensor<T>& logits, const MaskBatch& target, ClassWeights w,
                                 Tensor<T>* grad = nullptr)
{
    require_target_shape(logits, target, 2, "weighted_softmax_cross_entropy");
    const int64_t vox = logits.voxels();
    const double inv_m = 1.0 / double(logits.n() * vox);
    if (grad) *grad = Tensor<T>(logits.shape());
    auto softplus = [](double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); };
    double total = 0;
    for (int64_t b = 0; b < logits.n(); ++b) {
        const T* l0 = logits.channel(b, 0);
        const T* l1 = logits.channel(b, 1);
        const uint8_t* t = target.channel(b, 0);
        for (int64_t i = 0; i < vox; ++i) {
            const double z = double(l1[i]) - double(l0[i]);  // log-odds of foreground
            const double wt = t[i] ? w.foreground : w.background;
            if (wt == 0) continue;
            total += wt * (t[i] ? softplus(-z) : softplus(z));
            if (grad) {
                const double p1 = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                const double d1 = wt * inv_m * (p1 - (t[i] ? 1.0 : 0.0));
                grad->channel(b, 1)[i] = T(d1);
                grad->channel(b, 0)[i] = T(-d1);
            }
        }
    }
    return T(total * inv_m);
}

/// sum of squared convolution weights (biases and BN parameters excluded). With `gamma` > 0 and
/// `accumulate_grad`, adds 2 gamma W to every weight gradient.
template <typename T>
double l2_penalty(nn::ParamList<T>& params, double gamma, bool accumulate_grad)
{
    double sum = 0;
    for (auto* p : params.params) {
        if (p->kind != nn::ParamKind::ConvWeight) continue;
        for (T v : p->value.storage()) sum += double(v) * v;
        if (accumulate_grad && gamma > 0) {
            auto& g = p->grad.storage();
            const auto& v = p->value.storage();
            for (size_t i = 0; i < v.size(); ++i) g[i] += T(2 * gamma * v[i]);
        }
    }
    return sum;
}

struct LossTerms {
    double dice_out = 0;    // D(F_o, y)
    double dice_shape = 0;  // D(F_s^0 - F_s^1, y)
    double contour_ce = 0;  // chi(F_c, modified contour target)
    double l2 = 0;          // ||W||^2, before scaling by gamma
    double total = 0;
};

template <typename T>
struct LossEvaluation {
    LossTerms terms;
    model::BundleGrad<T> grad;  // filled when gradients were requested
};

/// D(F_o, y) + alpha D(shape, y) + beta chi(F_c, contour_target) + gamma ||W||^2. Terms whose branch
/// is absent from the bundle are dropped. With `want_grad`, the returned bundle gradient feeds
/// CENet::backward and the L2 gradient is added directly to the parameter gradients.
template <typename T>
LossEvaluation<T> total_loss(const model::FeatureBundle<T>& bundle, const MaskBatch& y, const MaskBatch& contour_target,
                             const LossWeights& w, nn::ParamList<T>& params, bool want_grad)
{
    LossEvaluation<T> out;
    Tensor<T> g_prob;
    const Tensor<T> p_out = nn::foreground_probability(bundle.f_out);
    out.terms.dice_out = soft_dice_loss(p_out, y, want_grad ? &g_prob : nullptr);
    if (want_grad) out.grad.f_out = nn::foreground_probability_backward(p_out, g_prob);

    if (bundle.has_shape() && w.alpha > 0) {
        const Tensor<T> p_shape = nn::foreground_probability(bundle.shape);
        out.terms.dice_shape = soft_dice_loss(p_shape, y, want_grad ? &g_prob : nullptr);
        if (want_grad) {
            out.grad.shape = nn::foreground_probability_backward(p_shape, g_prob);
            out.grad.shape *= T(w.alpha);
        }
    }
    if (bundle.has_contour() && w.beta > 0) {
        const ClassWeights cw = w.class_weights ? *w.class_weights : class_weights_from_target(contour_target);
        Tensor<T> g_c;
        out.terms.contour_ce = weighted_softmax_cross_entropy(bundle.f_contour, contour_target, cw,
                                                              want_grad ? &g_c : nullptr);
        if (want_grad) {
            g_c *= T(w.beta);
            out.grad.f_contour = std::move(g_c);
        }
    }
    out.terms.l2 = l2_penalty(params, w.gamma, want_grad);
    out.terms.total = out.terms.dice_out + w.alpha * out.terms.dice_shape + w.beta * out.terms.contour_ce +
                      w.gamma * out.terms.l2;
    return out;
}

}  // namespace cenet::supervision
