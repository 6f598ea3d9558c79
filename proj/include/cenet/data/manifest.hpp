#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cenet/tensor.hpp"

namespace cenet::data {

struct ManifestEntry {
    std::string case_id;
    std::filesystem::path image_path;
    std::filesystem::path label_path;  // may be empty
};

/// CSV with header `case_id,image_path,label_path`; relative paths resolve against the manifest's
/// directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IngestionError("empty manifest " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "case_id,image_path,label_path") {
        throw IngestionError("manifest " + path.string() + ": expected header case_id,image_path,label_path");
    }
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (line.back() == ',') cols.emplace_back();
        if (cols.size() != 3 || cols[0].empty() || cols[1].empty()) {
            throw IngestionError("manifest " + path.string() + ": malformed row " + std::to_string(row));
        }
        auto resolve = [&](const std::string& p) -> std::filesystem::path {
            if (p.empty()) return {};
            std::filesystem::path q(p);
            return q.is_absolute() ? q : base / q;
        };
        out.push_back({cols[0], resolve(cols[1]), resolve(cols[2])});
    }
    return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries)
{
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write manifest " + path.string());
    out << "case_id,image_path,label_path\n";
    for (const auto& e : entries) out << e.case_id << ',' << e.image_path.generic_string() << ',' << e.label_path.generic_string() << '\n';
    if (!out) throw IngestionError("write failed: " + path.string());
}

}  // namespace cenet::data
