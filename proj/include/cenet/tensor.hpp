#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cenet {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument values outside an operation's domain (non-binary mask, p outside (0, 1], ...).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, missing or malformed input files.
class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A surface distance was requested against an empty surface.
class UndefinedDistanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or activations during training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Spatial extent in voxels, ordered (depth, height, width); width is the fastest axis.
struct Dims3 {
    int64_t d = 1, h = 1, w = 1;

    int64_t count() const { return d * h * w; }
    int64_t operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
    int64_t& operator[](int axis) { return axis == 0 ? d : (axis == 1 ? h : w); }
    bool operator==(const Dims3&) const = default;

    std::string str() const
    {
        return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

/// (batch, channel, depth, height, width)
struct Shape5 {
    int64_t n = 0, c = 0, d = 0, h = 0, w = 0;

    Dims3 spatial() const { return {d, h, w}; }
    int64_t voxels() const { return d * h * w; }
    int64_t numel() const { return n * c * d * h * w; }
    bool operator==(const Shape5&) const = default;

    std::string str() const
    {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(d) + ", " +
               std::to_string(h) + ", " + std::to_string(w) + ")";
    }
};

/// Dense NCDHW tensor with value semantics.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape5 shape, T fill = T(0))
        : shape_(shape), data_(static_cast<size_t>(check_shape(shape).numel()), fill)
    {
    }
    Tensor(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w, T fill = T(0))
        : Tensor(Shape5{n, c, d, h, w}, fill)
    {
    }

    const Shape5& shape() const { return shape_; }
    int64_t n() const { return shape_.n; }
    int64_t c() const { return shape_.c; }
    Dims3 spatial() const { return shape_.spatial(); }
    int64_t voxels() const { return shape_.voxels(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    /// Contiguous voxels of one (sample, channel) plane.
    T* channel(int64_t b, int64_t ch) { return data_.data() + (b * shape_.c + ch) * shape_.voxels(); }
    const T* channel(int64_t b, int64_t ch) const
    {
        return data_.data() + (b * shape_.c + ch) * shape_.voxels();
    }

    T& at(int64_t b, int64_t ch, int64_t z, int64_t y, int64_t x)
    {
        return data_[static_cast<size_t>((((b * shape_.c + ch) * shape_.d + z) * shape_.h + y) * shape_.w + x)];
    }
    T at(int64_t b, int64_t ch, int64_t z, int64_t y, int64_t x) const
    {
        return data_[static_cast<size_t>((((b * shape_.c + ch) * shape_.d + z) * shape_.h + y) * shape_.w + x)];
    }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o)
    {
        require_same_shape(*this, o, "tensor +=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator-=(const Tensor& o)
    {
        require_same_shape(*this, o, "tensor -=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s)
    {
        for (auto& v : data_) v *= s;
        return *this;
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const
    {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
    {
        if (!(a.shape_ == b.shape_)) {
            throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_.str() + " vs " + b.shape_.str());
        }
    }

private:
    static Shape5 check_shape(Shape5 s)
    {
        if (s.n < 0 || s.c < 0 || s.d < 0 || s.h < 0 || s.w < 0) {
            throw ShapeError("negative tensor dimension " + s.str());
        }
        return s;
    }

    Shape5 shape_{};
    std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b)
{
    a += b;
    return a;
}

template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b)
{
    a -= b;
    return a;
}

/// Concatenate along the channel axis.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts)
{
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape5 first = parts.front()->shape();
    int64_t channels = 0;
    for (const auto* p : parts) {
        const Shape5& s = p->shape();
        if (s.n != first.n || s.spatial() != first.spatial()) {
            throw ShapeError("concat_channels: incompatible " + s.str() + " vs " + first.str());
        }
        channels += s.c;
    }
    Tensor<T> out(first.n, channels, first.d, first.h, first.w);
    const int64_t vox = first.voxels();
    for (int64_t b = 0; b < first.n; ++b) {
        int64_t offset = 0;
        for (const auto* p : parts) {
            std::copy_n(p->channel(b, 0), p->c() * vox, out.channel(b, offset));
            offset += p->c();
        }
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts)
{
    std::vector<const Tensor<T>*> v(parts);
    return concat_channels<T>(std::span<const Tensor<T>* const>(v));
}

/// Channels [begin, begin + count) of every sample.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t begin, int64_t count)
{
    if (begin < 0 || count < 0 || begin + count > x.c()) {
        throw ShapeError("slice_channels: range out of bounds for " + x.shape().str());
    }
    Tensor<T> out(x.n(), count, x.spatial().d, x.spatial().h, x.spatial().w);
    const int64_t vox = x.voxels();
    for (int64_t b = 0; b < x.n(); ++b) std::copy_n(x.channel(b, begin), count * vox, out.channel(b, 0));
    return out;
}

/// dst[:, begin:begin+src.c] += src
template <typename T>
void add_into_channels(Tensor<T>& dst, int64_t begin, const Tensor<T>& src)
{
    if (src.n() != dst.n() || src.spatial() != dst.spatial() || begin + src.c() > dst.c()) {
        throw ShapeError("add_into_channels: incompatible " + src.shape().str() + " into " + dst.shape().str());
    }
    const int64_t len = src.c() * src.voxels();
    for (int64_t b = 0; b < src.n(); ++b) {
        T* d = dst.channel(b, begin);
        const T* s = src.channel(b, 0);
        for (int64_t i = 0; i < len; ++i) d[i] += s[i];
    }
}

/// Dense 3D grid (one channel) with physical spacing in mm.
template <typename T>
struct Grid3 {
    Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm along (d, h, w)
    std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm, position of voxel (0, 0, 0)
    std::vector<T> values;

    Grid3() = default;
    explicit Grid3(Dims3 d, T fill = T(0), std::array<double, 3> sp = {1.0, 1.0, 1.0})
        : dims(d), spacing(sp), values(static_cast<size_t>(d.count()), fill)
    {
    }

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * dims.h + y) * dims.w + x; }
    T& operator()(int64_t z, int64_t y, int64_t x) { return values[static_cast<size_t>(index(z, y, x))]; }
    T operator()(int64_t z, int64_t y, int64_t x) const { return values[static_cast<size_t>(index(z, y, x))]; }
    bool inside(int64_t z, int64_t y, int64_t x) const
    {
        return z >= 0 && y >= 0 && x >= 0 && z < dims.d && y < dims.h && x < dims.w;
    }
};

using Mask3 = Grid3<uint8_t>;

inline int64_t count_nonzero(const Mask3& m)
{
    return std::count_if(m.values.begin(), m.values.end(), [](uint8_t v) { return v != 0; });
}

/// Copy of channel `c` of batch item `b`.
template <typename T>
Grid3<T> sample_grid(const Tensor<T>& t, int64_t b, int64_t c = 0, std::array<double, 3> spacing = {1.0, 1.0, 1.0})
{
    Grid3<T> g;
    g.dims = t.spatial();
    g.spacing = spacing;
    const T* src = t.channel(b, c);
    g.values.assign(src, src + t.voxels());
    return g;
}

template <typename T>
void store_grid(Tensor<T>& t, int64_t b, int64_t c, const Grid3<T>& g)
{
    if (g.dims != t.spatial()) throw ShapeError("store_grid: grid " + g.dims.str() + " vs tensor " + t.shape().str());
    std::copy(g.values.begin(), g.values.end(), t.channel(b, c));
}

}  // namespace cenet
