#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "cenet/model/cenet.hpp"
#include "cenet/train/config.hpp"

// Checkpoint layout (little-endian):
//   "CENETCK1"  u64 config_hash  i64 epoch  f64 val_dice_loss  f64 val_dsc
//   u64 len + run_id   u64 len + resolved config text
//   u64 tensor count, then per tensor: u64 len + name, u64 count, count x f32

namespace cenet::train {

struct CheckpointMeta {
    std::string run_id;
    int64_t epoch = 0;
    uint64_t config_hash = 0;
    double val_dice_loss = 0;
    double val_dsc = 0;
};

struct Checkpoint {
    CheckpointMeta meta;
    TrainConfig config;
    std::shared_ptr<model::CENet<float>> net;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'N', 'E', 'T', 'C', 'K', '1'};

template <typename V>
void write_pod(std::ostream& os, V v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

inline void write_string(std::ostream& os, const std::string& s)
{
    write_pod<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename V>
V read_pod(std::istream& is, const std::string& path)
{
    V v;
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IngestionError("truncated checkpoint " + path);
    return v;
}

inline std::string read_string(std::istream& is, const std::string& path)
{
    const auto n = read_pod<uint64_t>(is, path);
    if (n > (uint64_t(1) << 32)) throw IngestionError("corrupt checkpoint " + path);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IngestionError("truncated checkpoint " + path);
    return s;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, model::CENet<float>& net, const TrainConfig& cfg,
                            const CheckpointMeta& meta)
{
    using namespace detail;
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IngestionError("cannot write checkpoint " + path.string());
        os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        write_pod<uint64_t>(os, config_hash(cfg));
        write_pod<int64_t>(os, meta.epoch);
        write_pod<double>(os, meta.val_dice_loss);
        write_pod<double>(os, meta.val_dsc);
        write_string(os, meta.run_id);
        write_string(os, resolved_config_text(cfg));
        auto list = net.parameters();
        write_pod<uint64_t>(os, list.params.size() + list.buffers.size());
        for (auto* p : list.params) {
            write_string(os, p->name);
            write_pod<uint64_t>(os, uint64_t(p->value.numel()));
            os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
        }
        for (auto& b : list.buffers) {
            write_string(os, b.name);
            write_pod<uint64_t>(os, b.values->size());
            os.write(reinterpret_cast<const char*>(b.values->data()), static_cast<std::streamsize>(b.values->size() * sizeof(float)));
        }
        if (!os) throw IngestionError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Rebuilds the network from the embedded configuration and restores every tensor by name.
inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    using namespace detail;
    const std::string ps = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open checkpoint " + ps);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IngestionError(ps + " is not a checkpoint");
    Checkpoint ck;
    ck.meta.config_hash = read_pod<uint64_t>(is, ps);
    ck.meta.epoch = read_pod<int64_t>(is, ps);
    ck.meta.val_dice_loss = read_pod<double>(is, ps);
    ck.meta.val_dsc = read_pod<double>(is, ps);
    ck.meta.run_id = read_string(is, ps);
    apply_config_text(ck.config, read_string(is, ps), ps);
    if (config_hash(ck.config) != ck.meta.config_hash) throw IngestionError(ps + ": configuration hash mismatch");
    ck.net = std::make_shared<model::CENet<float>>(ck.config.net);
    auto list = ck.net->parameters();
    std::map<std::string, std::pair<float*, size_t>> slots;
    for (auto* p : list.params) slots[p->name] = {p->value.data(), size_t(p->value.numel())};
    for (auto& b : list.buffers) slots[b.name] = {b.values->data(), b.values->size()};
    const auto count = read_pod<uint64_t>(is, ps);
    if (count != slots.size()) throw IngestionError(ps + ": tensor count does not match the network");
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(is, ps);
        const auto n = read_pod<uint64_t>(is, ps);
        const auto it = slots.find(name);
        if (it == slots.end() || it->second.second != n) throw IngestionError(ps + ": unexpected tensor " + name);
        is.read(reinterpret_cast<char*>(it->second.first), static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw IngestionError("truncated checkpoint " + ps);
    }
    return ck;
}

}  // namespace cenet::train
