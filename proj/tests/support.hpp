#pragma once

// Test helpers: seeded random data, central finite differences, and brute-force oracles that are
// written independently of the library implementations they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cenet/tensor.hpp"

namespace testing_support {

using cenet::Dims3;
using cenet::Mask3;
using cenet::Tensor;

template <typename T>
Tensor<T> random_tensor(std::mt19937_64& rng, int64_t n, int64_t c, int64_t d, int64_t h, int64_t w, double lo = -1,
                        double hi = 1)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(n, c, d, h, w);
    for (auto& v : t.storage()) v = T(dist(rng));
    return t;
}

inline Mask3 random_mask(std::mt19937_64& rng, Dims3 d, double density, std::array<double, 3> spacing = {1, 1, 1})
{
    std::bernoulli_distribution bit(density);
    Mask3 m(d, 0, spacing);
    for (auto& v : m.values) v = bit(rng) ? 1 : 0;
    return m;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b)
{
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) s += double(a.data()[i]) * double(b.data()[i]);
    return s;
}

/// Largest relative error between `analytic` and central differences of `f` with respect to
/// the scalars in `x` (each perturbed in place and restored). Relative error uses
/// |a - n| / max(|a|, |n|, floor).
inline double max_fd_error(std::vector<double*> x, const std::vector<double>& analytic, const std::function<double()>& f,
                           double h = 1e-6, double floor = 1e-6)
{
    double worst = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = *x[i];
        *x[i] = saved + h;
        const double fp = f();
        *x[i] = saved - h;
        const double fm = f();
        *x[i] = saved;
        const double numeric = (fp - fm) / (2 * h);
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
    return worst;
}

/// Up to `count` distinct indices in [0, n), evenly spread.
inline std::vector<size_t> sample_indices(size_t n, size_t count)
{
    std::vector<size_t> out;
    if (n <= count) {
        for (size_t i = 0; i < n; ++i) out.push_back(i);
        return out;
    }
    for (size_t k = 0; k < count; ++k) out.push_back(k * n / count);
    return out;
}

// ---- direct-definition oracles ----

/// Direct 7-loop convolution (zero padding) with groups, stride, dilation.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias, int K, int stride, int pad,
                     int dil, int64_t groups)
{
    const int64_t cout = w.shape().n, cin_g = w.shape().c;
    const int64_t cout_g = cout / groups;
    auto ext = [&](int64_t n) { return (n + 2 * pad - dil * (K - 1) - 1) / stride + 1; };
    const Dims3 id = x.spatial();
    Tensor<T> y(x.n(), cout, ext(id.d), ext(id.h), ext(id.w));
    for (int64_t b = 0; b < x.n(); ++b)
        for (int64_t o = 0; o < cout; ++o) {
            const int64_t g = o / cout_g;
            for (int64_t z = 0; z < y.spatial().d; ++z)
                for (int64_t yy = 0; yy < y.spatial().h; ++yy)
                    for (int64_t xx = 0; xx < y.spatial().w; ++xx) {
                        double s = bias.empty() ? 0.0 : double(bias[size_t(o)]);
                        for (int64_t ci = 0; ci < cin_g; ++ci)
                            for (int kz = 0; kz < K; ++kz)
                                for (int ky = 0; ky < K; ++ky)
                                    for (int kx = 0; kx < K; ++kx) {
                                        const int64_t iz = z * stride - pad + kz * dil;
                                        const int64_t iy = yy * stride - pad + ky * dil;
                                        const int64_t ix = xx * stride - pad + kx * dil;
                                        if (iz < 0 || iy < 0 || ix < 0 || iz >= id.d || iy >= id.h || ix >= id.w) continue;
                                        s += double(w.at(o, ci, kz, ky, kx)) * double(x.at(b, g * cin_g + ci, iz, iy, ix));
                                    }
                        y.at(b, o, z, yy, xx) = T(s);
                    }
        }
    return y;
}

/// Kernel-2 stride-2 transposed convolution: y[o, 2z+a, 2y+b, 2x+c] = sum_i W[o][a,b,c][i] x[i, z, y, x].
/// `w` is indexed (o * 8 + tap, i) with tap = 4a + 2b + c.
template <typename T>
Tensor<T> naive_conv_transpose(const Tensor<T>& x, const Tensor<T>& w, int64_t cout)
{
    const Dims3 id = x.spatial();
    Tensor<T> y(x.n(), cout, 2 * id.d, 2 * id.h, 2 * id.w);
    for (int64_t b = 0; b < x.n(); ++b)
        for (int64_t o = 0; o < cout; ++o)
            for (int64_t z = 0; z < 2 * id.d; ++z)
                for (int64_t yy = 0; yy < 2 * id.h; ++yy)
                    for (int64_t xx = 0; xx < 2 * id.w; ++xx) {
                        const int tap = int((z % 2) * 4 + (yy % 2) * 2 + (xx % 2));
                        double s = 0;
                        for (int64_t i = 0; i < x.c(); ++i)
                            s += double(w.data()[(o * 8 + tap) * x.c() + i]) * double(x.at(b, i, z / 2, yy / 2, xx / 2));
                        y.at(b, o, z, yy, xx) = T(s);
                    }
    return y;
}

/// Brute-force surface: mask voxels with a face neighbour that is background or off-grid.
inline std::vector<std::array<int64_t, 3>> oracle_surface(const Mask3& m)
{
    std::vector<std::array<int64_t, 3>> out;
    const Dims3 d = m.dims;
    const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (int64_t z = 0; z < d.d; ++z)
        for (int64_t y = 0; y < d.h; ++y)
            for (int64_t x = 0; x < d.w; ++x) {
                if (!m(z, y, x)) continue;
                bool surface = false;
                for (auto& o : off) {
                    const int64_t a = z + o[0], b = y + o[1], c = x + o[2];
                    if (!m.inside(a, b, c) || !m(a, b, c)) surface = true;
                }
                if (surface) out.push_back({z, y, x});
            }
    return out;
}

/// For each surface voxel of `a`, the exhaustive minimum distance (mm) to the surface of `b`.
inline std::vector<double> oracle_directed(const Mask3& a, const Mask3& b)
{
    const auto sa = oracle_surface(a), sb = oracle_surface(b);
    std::vector<double> out;
    for (const auto& p : sa) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : sb) {
            double s = 0;
            for (int k = 0; k < 3; ++k) {
                const double dk = double(p[k] - q[k]) * a.spacing[k];
                s += dk * dk;
            }
            best = std::min(best, s);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

/// Linear-interpolated percentile over sorted values (rank q/100 * (n - 1)).
inline double oracle_percentile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double rank = q / 100.0 * double(v.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

inline double oracle_hd95(const Mask3& x, const Mask3& y)
{
    return std::max(oracle_percentile(oracle_directed(x, y), 95), oracle_percentile(oracle_directed(y, x), 95));
}

inline double oracle_assd(const Mask3& x, const Mask3& y)
{
    const auto a = oracle_directed(x, y), b = oracle_directed(y, x);
    double s = 0;
    for (double v : a) s += v;
    for (double v : b) s += v;
    return s / double(a.size() + b.size());
}

struct Counts {
    int64_t tp = 0, fp = 0, fn = 0;
};

inline Counts oracle_counts(const Mask3& pred, const Mask3& gt)
{
    Counts c;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        if (pred.values[i] && gt.values[i]) ++c.tp;
        if (pred.values[i] && !gt.values[i]) ++c.fp;
        if (!pred.values[i] && gt.values[i]) ++c.fn;
    }
    return c;
}

/// 6-connected erosion by definition: a voxel survives iff it and all six face neighbours are in
/// the label (off-grid neighbours count as background).
inline Mask3 oracle_erode(const Mask3& m)
{
    Mask3 out(m.dims, 0, m.spacing);
    const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (int64_t z = 0; z < m.dims.d; ++z)
        for (int64_t y = 0; y < m.dims.h; ++y)
            for (int64_t x = 0; x < m.dims.w; ++x) {
                bool keep = m(z, y, x) != 0;
                for (auto& o : off) {
                    const int64_t a = z + o[0], b = y + o[1], c = x + o[2];
                    keep = keep && m.inside(a, b, c) && m(a, b, c);
                }
                out(z, y, x) = keep ? 1 : 0;
            }
    return out;
}

/// Fresh scratch directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("cenet_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_support
