#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cenet/data/volume.hpp"

// NIfTI-1 single-file images (.nii, optionally gzip-compressed). Grid axes map to NIfTI axes as
// w = i (x), h = j (y), d = k (z).

namespace cenet::data {

namespace nifti {

inline constexpr int32_t kHeaderSize = 348;
inline constexpr int64_t kDataOffset = 352;

enum DataType : int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUInt16 = 512,
    kUInt32 = 768,
};

inline bool is_gzip_path(const std::filesystem::path& p)
{
    const std::string s = p.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw IngestionError("no such file: " + path.string());
    std::vector<uint8_t> bytes;
    if (is_gzip_path(path)) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw IngestionError("cannot open " + path.string());
        uint8_t buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
        const bool failed = n < 0;
        gzclose(f);
        if (failed) throw IngestionError("corrupt gzip stream in " + path.string());
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IngestionError("cannot open " + path.string());
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes)
{
    if (is_gzip_path(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw IngestionError("cannot write " + path.string());
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (n != static_cast<int>(bytes.size()) || rc != Z_OK) throw IngestionError("write failed: " + path.string());
    } else {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IngestionError("write failed: " + path.string());
    }
}

template <typename V>
V get(const std::vector<uint8_t>& b, size_t off, bool swap)
{
    V v;
    std::memcpy(&v, b.data() + off, sizeof(V));
    if (swap) {
        auto* p = reinterpret_cast<uint8_t*>(&v);
        std::reverse(p, p + sizeof(V));
    }
    return v;
}

template <typename V>
void put(std::vector<uint8_t>& b, size_t off, V v)
{
    std::memcpy(b.data() + off, &v, sizeof(V));
}

struct Image {
    Dims3 dims{};
    std::array<double, 3> spacing{1, 1, 1};
    std::array<double, 3> origin{0, 0, 0};
    std::vector<double> values;  // scaled by scl_slope / scl_inter
};

inline Image decode(const std::vector<uint8_t>& b, const std::string& name)
{
    if (b.size() < size_t(kHeaderSize)) throw IngestionError(name + ": truncated NIfTI header");
    bool swap = false;
    int32_t hdr = get<int32_t>(b, 0, false);
    if (hdr != kHeaderSize) {
        swap = true;
        hdr = get<int32_t>(b, 0, true);
        if (hdr != kHeaderSize) throw IngestionError(name + ": not a NIfTI-1 file (sizeof_hdr)");
    }
    if (std::memcmp(b.data() + 344, "n+1", 4) != 0) throw IngestionError(name + ": unsupported NIfTI magic (need single-file n+1)");
    std::array<int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = get<int16_t>(b, 40 + 2 * i, swap);
    if (dim[0] < 3 || dim[0] > 7) throw IngestionError(name + ": image is " + std::to_string(dim[0]) + "-D, expected 3-D");
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] != 1) throw IngestionError(name + ": image has extent " + std::to_string(dim[i]) + " along axis " + std::to_string(i));
    }
    for (int i = 1; i <= 3; ++i) {
        if (dim[i] < 1) throw IngestionError(name + ": non-positive extent in header");
    }
    const auto type = get<int16_t>(b, 70, swap);
    std::array<float, 8> pixdim{};
    for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(b, 76 + 4 * i, swap);
    const auto offset = static_cast<int64_t>(get<float>(b, 108, swap));
    float slope = get<float>(b, 112, swap);
    const float inter = get<float>(b, 116, swap);
    if (slope == 0 || !std::isfinite(slope)) slope = 1;
    const int16_t qform = get<int16_t>(b, 252, swap);
    const int16_t sform = get<int16_t>(b, 254, swap);

    Image img;
    img.dims = {dim[3], dim[2], dim[1]};
    img.spacing = {std::abs(pixdim[3]), std::abs(pixdim[2]), std::abs(pixdim[1])};
    for (double& s : img.spacing) {
        if (!(s > 0)) s = 1.0;
    }
    if (qform > 0) {
        img.origin = {get<float>(b, 276, swap), get<float>(b, 272, swap), get<float>(b, 268, swap)};
    } else if (sform > 0) {
        img.origin = {get<float>(b, 324, swap), get<float>(b, 308, swap), get<float>(b, 292, swap)};
    }

    int bytes = 0;
    switch (type) {
    case kUInt8:
    case kInt8: bytes = 1; break;
    case kInt16:
    case kUInt16: bytes = 2; break;
    case kInt32:
    case kUInt32:
    case kFloat32: bytes = 4; break;
    case kFloat64: bytes = 8; break;
    default: throw IngestionError(name + ": unsupported datatype " + std::to_string(type));
    }
    const int64_t n = img.dims.count();
    const int64_t start = std::max<int64_t>(offset, kDataOffset);
    if (int64_t(b.size()) < start + n * bytes) throw IngestionError(name + ": truncated voxel data");
    img.values.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const size_t off = static_cast<size_t>(start + i * bytes);
        double v = 0;
        switch (type) {
        case kUInt8: v = b[off]; break;
        case kInt8: v = static_cast<int8_t>(b[off]); break;
        case kInt16: v = get<int16_t>(b, off, swap); break;
        case kUInt16: v = get<uint16_t>(b, off, swap); break;
        case kInt32: v = get<int32_t>(b, off, swap); break;
        case kUInt32: v = get<uint32_t>(b, off, swap); break;
        case kFloat32: v = get<float>(b, off, swap); break;
        case kFloat64: v = get<double>(b, off, swap); break;
        }
        img.values[static_cast<size_t>(i)] = v * slope + inter;
    }
    return img;
}

/// Little-endian NIfTI-1 with an axis-aligned qform (and matching sform).
inline std::vector<uint8_t> encode(const Dims3& dims, const std::array<double, 3>& spacing,
                                   const std::array<double, 3>& origin, int16_t type, const void* data)
{
    const int bytes = type == kUInt8 ? 1 : 4;
    std::vector<uint8_t> b(static_cast<size_t>(kDataOffset + dims.count() * bytes), 0);
    put<int32_t>(b, 0, kHeaderSize);
    const int16_t dim[8] = {3, int16_t(dims.w), int16_t(dims.h), int16_t(dims.d), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put<int16_t>(b, 40 + 2 * i, dim[i]);
    put<int16_t>(b, 70, type);
    put<int16_t>(b, 72, int16_t(bytes * 8));
    const float pixdim[8] = {1.0f, float(spacing[2]), float(spacing[1]), float(spacing[0]), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, pixdim[i]);
    put<float>(b, 108, float(kDataOffset));
    put<float>(b, 112, 1.0f);
    put<uint8_t>(b, 123, 10);  // xyzt_units: mm, s
    put<int16_t>(b, 252, 1);
    put<int16_t>(b, 254, 1);
    put<float>(b, 268, float(origin[2]));
    put<float>(b, 272, float(origin[1]));
    put<float>(b, 276, float(origin[0]));
    const float srow[12] = {float(spacing[2]), 0, 0, float(origin[2]), 0, float(spacing[1]), 0, float(origin[1]),
                            0, 0, float(spacing[0]), float(origin[0])};
    for (int i = 0; i < 12; ++i) put<float>(b, 280 + 4 * i, srow[i]);
    std::memcpy(b.data() + 344, "n+1", 4);
    std::memcpy(b.data() + kDataOffset, data, static_cast<size_t>(dims.count() * bytes));
    return b;
}

}  // namespace nifti

inline Volume read_volume(const std::filesystem::path& path)
{
    nifti::Image img = nifti::decode(nifti::read_file(path), path.string());
    Volume v(img.dims, 0.0f, img.spacing);
    v.origin = img.origin;
    for (size_t i = 0; i < img.values.size(); ++i) v.values[i] = float(img.values[i]);
    return v;
}

/// Any nonzero voxel is foreground.
inline LabelVolume read_label(const std::filesystem::path& path)
{
    nifti::Image img = nifti::decode(nifti::read_file(path), path.string());
    LabelVolume l(img.dims, 0, img.spacing);
    l.origin = img.origin;
    for (size_t i = 0; i < img.values.size(); ++i) l.values[i] = img.values[i] != 0 ? 1 : 0;
    return l;
}

inline void write_volume(const std::filesystem::path& path, const Grid3<float>& v)
{
    nifti::write_file(path, nifti::encode(v.dims, v.spacing, v.origin, nifti::kFloat32, v.values.data()));
}

inline void write_label(const std::filesystem::path& path, const Mask3& l)
{
    nifti::write_file(path, nifti::encode(l.dims, l.spacing, l.origin, nifti::kUInt8, l.values.data()));
}

/// `<id>_label.nii.gz` (or `.nii`) next to `<id>.nii[.gz]`.
inline std::filesystem::path label_path_for(const std::filesystem::path& image)
{
    std::string name = image.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string e = ext;
        if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
            name.resize(name.size() - e.size());
            break;
        }
    }
    const auto gz = image.parent_path() / (name + "_label.nii.gz");
    if (std::filesystem::exists(gz)) return gz;
    return image.parent_path() / (name + "_label.nii");
}

/// Image plus its label when one exists under the naming convention.
inline std::pair<Volume, std::optional<LabelVolume>> load_volume(const std::filesystem::path& path)
{
    Volume v = read_volume(path);
    std::optional<LabelVolume> label;
    const auto lp = label_path_for(path);
    if (std::filesystem::exists(lp)) {
        label = read_label(lp);
        if (label->dims != v.dims) throw IngestionError("label " + lp.string() + " does not match image grid");
    }
    return {std::move(v), std::move(label)};
}

}  // namespace cenet::data
