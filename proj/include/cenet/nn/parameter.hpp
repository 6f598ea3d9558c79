#pragma once

#include <string>
#include <vector>

#include "cenet/tensor.hpp"

namespace cenet::nn {

enum class ParamKind {
    ConvWeight,  // counted by the L2 term and Xavier-initialised
    Bias,
    BnScale,
    BnShift,
};

template <typename T>
struct Parameter {
    std::string name;
    ParamKind kind = ParamKind::ConvWeight;
    Tensor<T> value;
    Tensor<T> grad;
    int64_t fan_in = 0;
    int64_t fan_out = 0;

    Parameter() = default;
    Parameter(ParamKind k, Shape5 shape, int64_t fin = 0, int64_t fout = 0)
        : kind(k), value(shape), grad(shape), fan_in(fin), fan_out(fout)
    {
    }

    void zero_grad() { grad.fill(T(0)); }
};

/// Non-trainable state that still belongs in a checkpoint (batch-norm running statistics).
template <typename T>
struct Buffer {
    std::string name;
    std::vector<T>* values = nullptr;
};

template <typename T>
struct ParamList {
    std::vector<Parameter<T>*> params;
    std::vector<Buffer<T>> buffers;

    void add(const std::string& prefix, Parameter<T>& p, const std::string& leaf)
    {
        p.name = prefix + leaf;
        params.push_back(&p);
    }
    void add_buffer(const std::string& prefix, std::vector<T>& v, const std::string& leaf)
    {
        buffers.push_back({prefix + leaf, &v});
    }
};

}  // namespace cenet::nn
