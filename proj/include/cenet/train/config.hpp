#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cenet/data/augment.hpp"
#include "cenet/data/phantom.hpp"
#include "cenet/data/rng.hpp"
#include "cenet/data/volume.hpp"
#include "cenet/model/config.hpp"
#include "cenet/supervision/loss.hpp"
#include "cenet/supervision/schedule.hpp"

namespace cenet::train {

struct OptimSettings {
    int64_t epochs = 300;
    int64_t batch_size = 4;
    double lr_initial = 0.001;
    double lr_decay_factor = 0.1;
    int64_t lr_decay_every = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    std::string device = "cpu";
    std::string run_id;          // empty: derived from ablation and seed
    bool augment = true;
    int64_t checkpoint_every = 50;  // 0 keeps only the final and best checkpoints
    double stop_at_val_dsc = 0;      // > 0 ends training once validation DSC reaches it
};

struct DataSettings {
    std::string manifest;
    int folds = 8;
    int fold = 0;
    uint64_t fold_seed = 0;
    int64_t train_count = 0;  // > 0 selects the inverted protocol (train on this many cases)
};

struct SynthSettings {
    int64_t count = 20;
};

/// Every experiment setting, addressable by dotted key.
struct TrainConfig {
    NetworkConfig net = desk_network();
    OptimSettings train;
    supervision::LossWeights loss;
    supervision::PSchedule p_schedule;
    data::PreprocessSpec preprocess;  // the target shape always follows net.input_shape
    data::AugmentSpec augment;
    DataSettings data;
    data::PhantomSpec phantom;
    SynthSettings synth;

    /// Reduced widths used for desk-scale runs on 64x64x32 volumes.
    static NetworkConfig desk_network()
    {
        NetworkConfig n;
        n.growth_k = 4;
        n.group_n = 4;
        n.levels = 3;
        n.base_channels = 8;
        n.transition_channels = 8;
        n.out_growth = 4;
        n.out_hidden = 8;
        n.input_shape = {64, 64, 32};
        return n;
    }

    data::PreprocessSpec preprocess_spec() const
    {
        data::PreprocessSpec p = preprocess;
        p.target_shape = net.input_shape;
        return p;
    }

    std::string run_id() const
    {
        if (!train.run_id.empty()) return train.run_id;
        std::string a = to_string(net.ablation);
        for (char& c : a) c = char(std::tolower(static_cast<unsigned char>(c)));
        return a + "_s" + std::to_string(train.seed);
    }

    void validate() const
    {
        net.validate();
        if (train.epochs < 1 || train.batch_size < 1 || train.lr_decay_every < 1 || train.checkpoint_every < 0) {
            throw ConfigError("train: epochs, batch_size and lr_decay_every must be >= 1");
        }
        if (!(train.lr_initial > 0) || !(train.lr_decay_factor > 0 && train.lr_decay_factor <= 1)) {
            throw ConfigError("train: lr_initial must be > 0 and lr_decay_factor in (0, 1]");
        }
        if (!(train.adam_beta1 >= 0 && train.adam_beta1 < 1 && train.adam_beta2 >= 0 && train.adam_beta2 < 1 &&
              train.adam_eps > 0)) {
            throw ConfigError("train: adam betas must lie in [0, 1) and adam_eps be > 0");
        }
        if (train.device != "cpu") throw ConfigError("train.device: only 'cpu' is available in this build");
        loss.validate();
        p_schedule.validate();
        augment.validate();
        if (data.folds < 1 || data.fold < 0 || data.fold >= data.folds || data.train_count < 0) {
            throw ConfigError("data: need folds >= 1, 0 <= fold < folds, train_count >= 0");
        }
        if (synth.count < 0) throw ConfigError("synth.count must be >= 0");
    }
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& text)
{
    V v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ConfigError("bad value '" + text + "' for key " + key);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text)
{
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("bad boolean '" + text + "' for key " + key);
}

inline std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

inline Dims3 parse_dims(const std::string& key, const std::string& text)
{
    const auto parts = split(text, ',');
    if (parts.size() != 3) throw ConfigError("key " + key + " expects D,H,W");
    return {parse_number<int64_t>(key, parts[0]), parse_number<int64_t>(key, parts[1]), parse_number<int64_t>(key, parts[2])};
}

inline std::array<double, 3> parse_triple(const std::string& key, const std::string& text)
{
    const auto parts = split(text, ',');
    if (parts.size() != 3) throw ConfigError("key " + key + " expects three comma-separated values");
    return {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1]), parse_number<double>(key, parts[2])};
}

}  // namespace detail

struct Field {
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

/// The dotted-key registry, in key order.
inline const std::map<std::string, Field>& config_fields()
{
    static const std::map<std::string, Field> fields = [] {
        using namespace detail;
        std::map<std::string, Field> f;
        auto integer = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); },
                      [member, key](TrainConfig& c, const std::string& v) {
                          member(c) = parse_number<std::remove_reference_t<decltype(member(c))>>(key, v);
                      }};
        };
        auto real = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) { return format_double(member(const_cast<TrainConfig&>(c))); },
                      [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_number<double>(key, v); }};
        };
        auto boolean = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) { return std::string(member(const_cast<TrainConfig&>(c)) ? "true" : "false"); },
                      [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
        };
        auto text = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) { return member(const_cast<TrainConfig&>(c)); },
                      [member](TrainConfig& c, const std::string& v) { member(c) = v; }};
        };
        auto dims = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) {
                          const Dims3 d = member(const_cast<TrainConfig&>(c));
                          return std::to_string(d.d) + "," + std::to_string(d.h) + "," + std::to_string(d.w);
                      },
                      [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_dims(key, v); }};
        };
        auto triple = [&f](const std::string& key, auto member) {
            f[key] = {[member](const TrainConfig& c) {
                          const auto t = member(const_cast<TrainConfig&>(c));
                          return format_double(t[0]) + "," + format_double(t[1]) + "," + format_double(t[2]);
                      },
                      [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_triple(key, v); }};
        };
#define CENET_FIELD(kind, key, expr) kind(key, [](TrainConfig& c) -> auto& { return c.expr; })
        CENET_FIELD(integer, "net.growth_k", net.growth_k);
        CENET_FIELD(integer, "net.group_n", net.group_n);
        CENET_FIELD(integer, "net.levels", net.levels);
        CENET_FIELD(integer, "net.base_channels", net.base_channels);
        CENET_FIELD(integer, "net.transition_channels", net.transition_channels);
        CENET_FIELD(integer, "net.out_growth", net.out_growth);
        CENET_FIELD(integer, "net.out_hidden", net.out_hidden);
        CENET_FIELD(boolean, "net.separable", net.separable);
        CENET_FIELD(dims, "net.input_shape", net.input_shape);
        f["net.ablation"] = {[](const TrainConfig& c) { return to_string(c.net.ablation); },
                             [](TrainConfig& c, const std::string& v) { c.net.ablation = parse_ablation(v); }};
        // A preset replaces every width at once; later keys may still refine it.
        f["net.preset"] = {[](const TrainConfig&) { return std::string("custom"); },
                           [](TrainConfig& c, const std::string& v) {
                               const Ablation a = c.net.ablation;
                               if (v == "paper") {
                                   c.net = NetworkConfig::paper_scale();
                               } else if (v == "desk") {
                                   c.net = TrainConfig::desk_network();
                               } else if (v != "custom") {
                                   throw ConfigError("net.preset must be desk, paper or custom");
                               }
                               c.net.ablation = a;
                           }};

        CENET_FIELD(integer, "train.epochs", train.epochs);
        CENET_FIELD(integer, "train.batch_size", train.batch_size);
        CENET_FIELD(real, "train.lr_initial", train.lr_initial);
        CENET_FIELD(real, "train.lr_decay_factor", train.lr_decay_factor);
        CENET_FIELD(integer, "train.lr_decay_every", train.lr_decay_every);
        CENET_FIELD(real, "train.adam_beta1", train.adam_beta1);
        CENET_FIELD(real, "train.adam_beta2", train.adam_beta2);
        CENET_FIELD(real, "train.adam_eps", train.adam_eps);
        CENET_FIELD(integer, "train.seed", train.seed);
        CENET_FIELD(text, "train.device", train.device);
        CENET_FIELD(text, "train.run_id", train.run_id);
        CENET_FIELD(boolean, "train.augment", train.augment);
        CENET_FIELD(integer, "train.checkpoint_every", train.checkpoint_every);
        CENET_FIELD(real, "train.stop_at_val_dsc", train.stop_at_val_dsc);

        CENET_FIELD(real, "loss.alpha", loss.alpha);
        CENET_FIELD(real, "loss.beta", loss.beta);
        CENET_FIELD(real, "loss.gamma", loss.gamma);
        f["loss.class_weights"] = {
            [](const TrainConfig& c) {
                if (!c.loss.class_weights) return std::string("auto");
                return format_double(c.loss.class_weights->background) + "," + format_double(c.loss.class_weights->foreground);
            },
            [](TrainConfig& c, const std::string& v) {
                if (v == "auto") {
                    c.loss.class_weights.reset();
                    return;
                }
                const auto parts = split(v, ',');
                if (parts.size() != 2) throw ConfigError("loss.class_weights expects 'auto' or w_background,w_foreground");
                c.loss.class_weights = supervision::ClassWeights{parse_number<double>("loss.class_weights", parts[0]),
                                                                 parse_number<double>("loss.class_weights", parts[1])};
            }};

        CENET_FIELD(real, "p_schedule.p_initial", p_schedule.p_initial);
        CENET_FIELD(integer, "p_schedule.hold_epochs", p_schedule.hold_epochs);
        CENET_FIELD(real, "p_schedule.decay_factor", p_schedule.decay_factor);
        CENET_FIELD(integer, "p_schedule.decay_every", p_schedule.decay_every);
        CENET_FIELD(real, "p_schedule.p_min", p_schedule.p_min);

        CENET_FIELD(real, "preprocess.window_level", preprocess.window_level);
        CENET_FIELD(real, "preprocess.window_width", preprocess.window_width);

        CENET_FIELD(real, "augment.affine_prob", augment.affine_prob);
        CENET_FIELD(real, "augment.cutout_prob", augment.cutout_prob);
        CENET_FIELD(real, "augment.cutout_frac_min", augment.cutout_frac_min);
        CENET_FIELD(real, "augment.cutout_frac_max", augment.cutout_frac_max);
        CENET_FIELD(real, "augment.rotation_deg", augment.rotation_deg);
        CENET_FIELD(real, "augment.scale_min", augment.scale_min);
        CENET_FIELD(real, "augment.scale_max", augment.scale_max);
        CENET_FIELD(real, "augment.translation_frac", augment.translation_frac);
        CENET_FIELD(integer, "augment.rng_seed", augment.rng_seed);

        CENET_FIELD(text, "data.manifest", data.manifest);
        CENET_FIELD(integer, "data.folds", data.folds);
        CENET_FIELD(integer, "data.fold", data.fold);
        CENET_FIELD(integer, "data.fold_seed", data.fold_seed);
        CENET_FIELD(integer, "data.train_count", data.train_count);

        CENET_FIELD(dims, "phantom.shape", phantom.shape);
        CENET_FIELD(triple, "phantom.spacing", phantom.spacing);
        CENET_FIELD(integer, "phantom.min_ellipsoids", phantom.min_ellipsoids);
        CENET_FIELD(integer, "phantom.max_ellipsoids", phantom.max_ellipsoids);
        CENET_FIELD(real, "phantom.background_hu", phantom.background_hu);
        CENET_FIELD(real, "phantom.foreground_hu", phantom.foreground_hu);
        CENET_FIELD(real, "phantom.distractor_hu", phantom.distractor_hu);
        CENET_FIELD(boolean, "phantom.distractor", phantom.distractor);
        CENET_FIELD(real, "phantom.noise_sigma_hu", phantom.noise_sigma_hu);
        CENET_FIELD(real, "phantom.min_fraction", phantom.min_fraction);
        CENET_FIELD(real, "phantom.max_fraction", phantom.max_fraction);
        CENET_FIELD(integer, "synth.count", synth.count);
#undef CENET_FIELD
        return f;
    }();
    return fields;
}

/// Applies one `key=value` assignment; unknown keys are rejected with the key in the message.
inline void apply_override(TrainConfig& cfg, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    const std::string value = detail::trim(assignment.substr(eq + 1));
    const auto& fields = config_fields();
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, value);
}

/// `key = value` lines; blank lines and `#` comments are ignored.
inline void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& source = "config")
{
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            apply_override(cfg, line);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

inline TrainConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    TrainConfig cfg;
    apply_config_text(cfg, ss.str(), path.string());
    return cfg;
}

/// Every key with its effective value, one per line in key order. Loading this text into a
/// default TrainConfig reproduces `cfg`.
inline std::string resolved_config_text(const TrainConfig& cfg)
{
    std::string out;
    for (const auto& [key, field] : config_fields()) {
        if (key == "net.preset") continue;
        out += key + " = " + field.get(cfg) + "\n";
    }
    return out;
}

inline uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(resolved_config_text(cfg)); }

}  // namespace cenet::train
