#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

#include "cenet/tensor.hpp"

// Register-blocked unit-stride convolution kernels for float tensors. A block of output
// channels is accumulated in vector registers for 16 consecutive output voxels of one line;
// the input is first copied into a zero-padded buffer so the inner loops carry no bounds checks.

namespace cenet::nn::detail {

struct DirectGeometry {
    int64_t cin_g = 1, cout_g = 1, groups = 1;
    int kernel = 3, padding = 1, dilation = 1;
};

#if defined(__GNUC__)
#define CENET_HAVE_VECTOR_KERNELS 1

typedef float vf16 __attribute__((vector_size(64)));
constexpr int64_t kLanes = 16;

inline vf16 load16(const float* p)
{
    vf16 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline void store16(float* p, vf16 v, int64_t count)
{
    if (count >= kLanes) {
        std::memcpy(p, &v, sizeof(v));
    } else {
        float tmp[kLanes];
        std::memcpy(tmp, &v, sizeof(v));
        std::memcpy(p, tmp, sizeof(float) * static_cast<size_t>(count));
    }
}

inline float hsum(vf16 v)
{
    float tmp[kLanes];
    std::memcpy(tmp, &v, sizeof(v));
    float s = 0;
    for (float t : tmp) s += t;
    return s;
}

/// Zero-padded copy of `count` channels starting at `c0`. Rows carry kLanes of slack so
/// vector loads past the last column stay inside the buffer.
struct PaddedVolume {
    Dims3 dims{};  // padded extents; dims.w includes the slack
    int64_t pad = 0;
    std::vector<float> data;

    float* channel(int64_t c) { return data.data() + c * dims.count(); }
    const float* channel(int64_t c) const { return data.data() + c * dims.count(); }

    void assign(const Tensor<float>& x, int64_t b, int64_t c0, int64_t count, int64_t p)
    {
        const Dims3 id = x.spatial();
        pad = p;
        dims = {id.d + 2 * p, id.h + 2 * p, id.w + 2 * p + kLanes};
        data.assign(static_cast<size_t>(count * dims.count()), 0.0f);
        for (int64_t c = 0; c < count; ++c) {
            const float* src = x.channel(b, c0 + c);
            float* dst = channel(c);
            for (int64_t z = 0; z < id.d; ++z)
                for (int64_t y = 0; y < id.h; ++y)
                    std::copy_n(src + (z * id.h + y) * id.w, id.w, dst + ((z + p) * dims.h + y + p) * dims.w + p);
        }
    }
};

// acc[r][c] over 16-voxel tiles of NR consecutive output rows; weights laid out as [ci][tap][NB].
template <int NB, int NR>
inline void forward_tile(const PaddedVolume& in, const float* wr, int64_t cin, int K, int dil, int64_t oz,
                         int64_t oy, int64_t x0, vf16 (&acc)[NR][NB])
{
    for (int r = 0; r < NR; ++r)
        for (int c = 0; c < NB; ++c) acc[r][c] = vf16{};
    const int64_t taps = int64_t(K) * K * K;
    const int64_t rs = in.dims.w;
    for (int64_t ci = 0; ci < cin; ++ci) {
        const float* base = in.channel(ci);
        const float* w_ci = wr + ci * taps * NB;
        for (int kz = 0; kz < K; ++kz) {
            for (int ky = 0; ky < K; ++ky) {
                const float* row = base + ((oz + kz * dil) * in.dims.h + oy + ky * dil) * rs + x0;
                const float* wt = w_ci + (int64_t(kz) * K + ky) * K * NB;
                for (int kx = 0; kx < K; ++kx) {
                    for (int r = 0; r < NR; ++r) {
                        const vf16 v = load16(row + r * rs + kx * dil);
                        for (int c = 0; c < NB; ++c) acc[r][c] += wt[kx * NB + c] * v;
                    }
                }
            }
        }
    }
}

template <int NB, int NR>
void forward_rows(const PaddedVolume& in, const float* wr, int64_t cin, int K, int dil, Tensor<float>& y,
                  int64_t b, int64_t co0, int64_t nvalid, int64_t oz, int64_t oy)
{
    const Dims3 od = y.spatial();
    vf16 acc[NR][NB];
    for (int64_t x0 = 0; x0 < od.w; x0 += kLanes) {
        forward_tile<NB, NR>(in, wr, cin, K, dil, oz, oy, x0, acc);
        const int64_t n = std::min(kLanes, od.w - x0);
        for (int r = 0; r < NR; ++r)
            for (int64_t c = 0; c < nvalid; ++c)
                store16(y.channel(b, co0 + c) + (oz * od.h + oy + r) * od.w + x0, acc[r][c], n);
    }
}

// Eight accumulators or more per tile keep the FMA pipelines busy; narrow channel blocks
// make up the difference with extra rows.
template <int NB>
void forward_block(const PaddedVolume& in, const float* wr, int64_t cin, int K, int dil, Tensor<float>& y,
                   int64_t b, int64_t co0, int64_t nvalid)
{
    constexpr int NR = NB >= 8 ? 1 : 8 / NB;
    const Dims3 od = y.spatial();
    for (int64_t oz = 0; oz < od.d; ++oz) {
        int64_t oy = 0;
        for (; oy + NR <= od.h; oy += NR) forward_rows<NB, NR>(in, wr, cin, K, dil, y, b, co0, nvalid, oz, oy);
        for (; oy < od.h; ++oy) forward_rows<NB, 1>(in, wr, cin, K, dil, y, b, co0, nvalid, oz, oy);
    }
}

inline int channel_block(int64_t n) { return n <= 2 ? 2 : n <= 4 ? 4 : 8; }

/// y = conv(x, w), unit stride. Weight layout (cout, cin_g, k, k, k).
inline void direct_conv_forward(const Tensor<float>& x, const float* w, const DirectGeometry& g, Tensor<float>& y)
{
    const int K = g.kernel;
    const int64_t taps = int64_t(K) * K * K;
    constexpr int NB = 8;
    PaddedVolume in;
    std::vector<float> wr;
    for (int64_t b = 0; b < x.n(); ++b) {
        for (int64_t grp = 0; grp < g.groups; ++grp) {
            in.assign(x, b, grp * g.cin_g, g.cin_g, g.padding);
            for (int64_t c0 = 0; c0 < g.cout_g; c0 += NB) {
                const int64_t nb = std::min<int64_t>(NB, g.cout_g - c0);
                const int block = channel_block(nb);
                wr.assign(static_cast<size_t>(g.cin_g * taps * block), 0.0f);
                for (int64_t c = 0; c < nb; ++c)
                    for (int64_t ci = 0; ci < g.cin_g; ++ci)
                        for (int64_t t = 0; t < taps; ++t)
                            wr[static_cast<size_t>((ci * taps + t) * block + c)] =
                                w[((grp * g.cout_g + c0 + c) * g.cin_g + ci) * taps + t];
                const int64_t co0 = grp * g.cout_g + c0;
                switch (block) {
                case 2: forward_block<2>(in, wr.data(), g.cin_g, K, g.dilation, y, b, co0, nb); break;
                case 4: forward_block<4>(in, wr.data(), g.cin_g, K, g.dilation, y, b, co0, nb); break;
                default: forward_block<NB>(in, wr.data(), g.cin_g, K, g.dilation, y, b, co0, nb); break;
                }
            }
        }
    }
}

/// Input gradient: unit-stride convolution of gy with the flipped, channel-transposed kernel.
inline void direct_conv_backward_input(const Tensor<float>& gy, const float* w, const DirectGeometry& g,
                                       Tensor<float>& gx)
{
    const int K = g.kernel;
    const int64_t taps = int64_t(K) * K * K;
    std::vector<float> flipped(static_cast<size_t>(g.groups * g.cin_g * g.cout_g * taps));
    for (int64_t grp = 0; grp < g.groups; ++grp)
        for (int64_t co = 0; co < g.cout_g; ++co)
            for (int64_t ci = 0; ci < g.cin_g; ++ci)
                for (int64_t t = 0; t < taps; ++t)
                    flipped[static_cast<size_t>(((grp * g.cin_g + ci) * g.cout_g + co) * taps + (taps - 1 - t))] =
                        w[((grp * g.cout_g + co) * g.cin_g + ci) * taps + t];
    DirectGeometry t = g;
    std::swap(t.cin_g, t.cout_g);
    t.padding = g.dilation * (K - 1) - g.padding;
    direct_conv_forward(gy, flipped.data(), t, gx);
}

template <int NB>
void weight_block(const PaddedVolume& in, const std::vector<float>& go, int64_t wo_pad, Dims3 od, int K, int dil,
                  int64_t cin, int64_t nvalid, float* gw_block /* [c][ci][tap] */)
{
    const int64_t taps = int64_t(K) * K * K;
    const int64_t lines = od.d * od.h;
    const int64_t chunk = std::max<int64_t>(1, 512 / wo_pad);
    const int64_t cstride = lines * wo_pad;
    for (int64_t l0 = 0; l0 < lines; l0 += chunk) {
        const int64_t l1 = std::min(lines, l0 + chunk);
        for (int64_t ci = 0; ci < cin; ++ci) {
            const float* base = in.channel(ci);
            for (int kz = 0; kz < K; ++kz) {
                for (int ky = 0; ky < K; ++ky) {
                    const int64_t tap0 = (int64_t(kz) * K + ky) * K;
                    if (K == 3) {
                        // The three x-taps share every output-gradient load.
                        vf16 acc[3][NB];
                        for (int t = 0; t < 3; ++t)
                            for (int c = 0; c < NB; ++c) acc[t][c] = vf16{};
                        for (int64_t line = l0; line < l1; ++line) {
                            const int64_t oz = line / od.h, oy = line % od.h;
                            const float* row = base + ((oz + kz * dil) * in.dims.h + oy + ky * dil) * in.dims.w;
                            const float* g = go.data() + line * wo_pad;
                            for (int64_t x0 = 0; x0 < wo_pad; x0 += kLanes) {
                                vf16 gv[NB];
                                for (int c = 0; c < NB; ++c) gv[c] = load16(g + c * cstride + x0);
                                for (int t = 0; t < 3; ++t) {
                                    const vf16 v = load16(row + x0 + t * dil);
                                    for (int c = 0; c < NB; ++c) acc[t][c] += gv[c] * v;
                                }
                            }
                        }
                        for (int t = 0; t < 3; ++t)
                            for (int64_t c = 0; c < nvalid; ++c)
                                gw_block[(c * cin + ci) * taps + tap0 + t] += hsum(acc[t][c]);
                        continue;
                    }
                    for (int kx = 0; kx < K; ++kx) {
                        vf16 acc[NB];
                        for (int c = 0; c < NB; ++c) acc[c] = vf16{};
                        for (int64_t line = l0; line < l1; ++line) {
                            const int64_t oz = line / od.h, oy = line % od.h;
                            const float* row =
                                base + ((oz + kz * dil) * in.dims.h + oy + ky * dil) * in.dims.w + kx * dil;
                            const float* g = go.data() + line * wo_pad;
                            for (int64_t x0 = 0; x0 < wo_pad; x0 += kLanes) {
                                const vf16 v = load16(row + x0);
                                for (int c = 0; c < NB; ++c) acc[c] += load16(g + c * cstride + x0) * v;
                            }
                        }
                        for (int64_t c = 0; c < nvalid; ++c) gw_block[(c * cin + ci) * taps + tap0 + kx] += hsum(acc[c]);
                    }
                }
            }
        }
    }
}

/// gw += dL/dw for a unit-stride convolution.
inline void direct_conv_backward_weight(const Tensor<float>& x, const Tensor<float>& gy, const DirectGeometry& g,
                                        float* gw)
{
    const int K = g.kernel;
    const int64_t taps = int64_t(K) * K * K;
    const Dims3 od = gy.spatial();
    const int64_t lines = od.d * od.h;
    const int64_t wo_pad = (od.w + kLanes - 1) / kLanes * kLanes;
    constexpr int NB = 8;
    PaddedVolume in;
    std::vector<float> go;
    for (int64_t b = 0; b < x.n(); ++b) {
        for (int64_t grp = 0; grp < g.groups; ++grp) {
            in.assign(x, b, grp * g.cin_g, g.cin_g, g.padding);
            for (int64_t c0 = 0; c0 < g.cout_g; c0 += NB) {
                const int64_t nb = std::min<int64_t>(NB, g.cout_g - c0);
                const int block = channel_block(nb);
                // Output gradient rows, zero-padded to whole vectors; channels beyond nb stay zero.
                go.assign(static_cast<size_t>(block * lines * wo_pad), 0.0f);
                for (int64_t c = 0; c < nb; ++c) {
                    const float* src = gy.channel(b, grp * g.cout_g + c0 + c);
                    for (int64_t l = 0; l < lines; ++l)
                        std::copy_n(src + l * od.w, od.w, go.data() + (c * lines + l) * wo_pad);
                }
                float* dst = gw + (grp * g.cout_g + c0) * g.cin_g * taps;
                switch (block) {
                case 2: weight_block<2>(in, go, wo_pad, od, K, g.dilation, g.cin_g, nb, dst); break;
                case 4: weight_block<4>(in, go, wo_pad, od, K, g.dilation, g.cin_g, nb, dst); break;
                default: weight_block<NB>(in, go, wo_pad, od, K, g.dilation, g.cin_g, nb, dst); break;
                }
            }
        }
    }
}

#endif

}  // namespace cenet::nn::detail
