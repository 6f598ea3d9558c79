#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cenet/data/volume.hpp"

// Preprocessed volumes cached as raw little-endian float32 (`<stem>.f32`) with a JSON sidecar
// (`<stem>.json`) holding {shape, spacing, window}.

namespace cenet::data {

static_assert(std::endian::native == std::endian::little, "cache blobs are written in native byte order");

inline void write_cache(const std::filesystem::path& stem, const Volume& v, const PreprocessSpec& spec)
{
    std::filesystem::path blob = stem, meta = stem;
    blob += ".f32";
    meta += ".json";
    {
        std::ofstream out(blob, std::ios::binary);
        out.write(reinterpret_cast<const char*>(v.values.data()), static_cast<std::streamsize>(v.values.size() * sizeof(float)));
        if (!out) throw IngestionError("write failed: " + blob.string());
    }
    nlohmann::json j;
    j["shape"] = {v.dims.d, v.dims.h, v.dims.w};
    j["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
    j["origin"] = {v.origin[0], v.origin[1], v.origin[2]};
    if (v.normalized) {
        j["window"] = {spec.lower(), spec.upper()};
    } else {
        j["window"] = nullptr;
    }
    std::ofstream out(meta);
    out << j.dump(2) << '\n';
    if (!out) throw IngestionError("write failed: " + meta.string());
}

inline Volume read_cache(const std::filesystem::path& stem)
{
    std::filesystem::path blob = stem, meta = stem;
    blob += ".f32";
    meta += ".json";
    std::ifstream min(meta);
    if (!min) throw IngestionError("cannot open " + meta.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(min);
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(meta.string() + ": " + e.what());
    }
    if (!j.contains("shape") || j["shape"].size() != 3 || !j.contains("spacing") || j["spacing"].size() != 3) {
        throw IngestionError(meta.string() + ": sidecar needs shape and spacing");
    }
    Volume v(Dims3{j["shape"][0].get<int64_t>(), j["shape"][1].get<int64_t>(), j["shape"][2].get<int64_t>()});
    for (int i = 0; i < 3; ++i) v.spacing[i] = j["spacing"][i].get<double>();
    if (j.contains("origin") && j["origin"].size() == 3)
        for (int i = 0; i < 3; ++i) v.origin[i] = j["origin"][i].get<double>();
    v.normalized = j.contains("window") && !j["window"].is_null();
    std::ifstream in(blob, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + blob.string());
    in.read(reinterpret_cast<char*>(v.values.data()), static_cast<std::streamsize>(v.values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(v.values.size() * sizeof(float))) {
        throw IngestionError(blob.string() + ": blob shorter than the sidecar shape");
    }
    return v;
}

}  // namespace cenet::data
