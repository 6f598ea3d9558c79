#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cenet/data/manifest.hpp"
#include "cenet/data/nifti.hpp"
#include "cenet/data/phantom.hpp"
#include "cenet/metrics/report.hpp"
#include "cenet/supervision/contour.hpp"
#include "cenet/supervision/schedule.hpp"
#include "cenet/train/checkpoint.hpp"
#include "cenet/train/config.hpp"
#include "cenet/train/trainer.hpp"

// Exit codes: 0 success, 1 unexpected failure, 2 configuration or input error, 3 numerical abort.

namespace cenet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

struct CommandSpec {
    std::string command;
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::string out;
    std::string checkpoint;
    bool overwrite = false;
    int parallel = 1;
    bool oracle = false;
    bool training_grid = false;
    bool quiet = false;
    std::vector<std::string> inputs;
};

/// Config file first, then each `--set key=value` in order, then `--seed`.
inline train::TrainConfig effective_config(const CommandSpec& spec)
{
    train::TrainConfig cfg;
    if (!spec.config_path.empty()) cfg = train::load_config(spec.config_path);
    for (const auto& o : spec.overrides) train::apply_override(cfg, o);
    if (spec.seed) cfg.train.seed = *spec.seed;
    cfg.validate();
    return cfg;
}

/// `--out`, else $CENET_RUNS_DIR, else ./runs.
inline std::filesystem::path runs_root(const CommandSpec& spec)
{
    if (!spec.out.empty()) return spec.out;
    if (const char* env = std::getenv("CENET_RUNS_DIR"); env && *env) return env;
    return "runs";
}

inline std::vector<data::ManifestEntry> require_manifest(const train::TrainConfig& cfg)
{
    if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is not set");
    return data::read_manifest(cfg.data.manifest);
}

inline void refuse_clobber(const std::filesystem::path& p, bool overwrite)
{
    if (std::filesystem::exists(p) && !overwrite) throw ConfigError(p.string() + " already exists (use --overwrite)");
}

inline train::Checkpoint require_checkpoint(const CommandSpec& spec)
{
    if (spec.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (!std::filesystem::exists(spec.checkpoint)) throw IngestionError("no such checkpoint: " + spec.checkpoint);
    return train::load_checkpoint(spec.checkpoint);
}

/// Trains one fold of the manifest (data.fold of data.folds; a single fold trains and validates on
/// every case).
inline int cmd_train(const CommandSpec& spec)
{
    const train::TrainConfig cfg = effective_config(spec);
    const auto entries = require_manifest(cfg);
    const auto cases = train::load_cases(entries, cfg.preprocess_spec());
    std::vector<train::Case> train_cases, val_cases;
    if (cfg.data.folds <= 1) {
        train_cases = val_cases = cases;
    } else {
        std::vector<std::string> ids;
        for (const auto& c : cases) ids.push_back(c.id);
        const auto split = data::make_folds(ids, cfg.data.folds, cfg.data.fold_seed,
                                            cfg.data.train_count > 0 ? std::optional<int64_t>(cfg.data.train_count) : std::nullopt);
        const auto tr = split.training_cases(cfg.data.fold);
        const auto va = split.validation_cases(cfg.data.fold);
        for (const auto& c : cases) {
            if (std::find(tr.begin(), tr.end(), c.id) != tr.end()) train_cases.push_back(c);
            if (std::find(va.begin(), va.end(), c.id) != va.end()) val_cases.push_back(c);
        }
    }
    const auto dir = runs_root(spec) / cfg.run_id();
    train::prepare_output_dir(dir, spec.overwrite);
    const auto r = train::train(cfg, train_cases, val_cases, dir, {.verbose = !spec.quiet, .hook = {}});
    std::ofstream out(dir / "metrics.csv");
    metrics::write_metrics_csv(out, r.final_validation.reports);
    std::printf("%s: best epoch %lld, val dice loss %.6f\n", dir.string().c_str(), static_cast<long long>(r.best_epoch),
                r.best_val_dice_loss);
    return kExitOk;
}

inline int cmd_cross_validate(const CommandSpec& spec)
{
    const train::TrainConfig cfg = effective_config(spec);
    const auto entries = require_manifest(cfg);
    const auto cases = train::load_cases(entries, cfg.preprocess_spec());
    const auto dir = runs_root(spec) / cfg.run_id();
    train::prepare_output_dir(dir, spec.overwrite);
    {
        std::ofstream out(dir / "config.resolved");
        out << train::resolved_config_text(cfg);
    }
    const auto rows = train::cross_validate(cfg, cases, dir, {.parallel = spec.parallel, .verbose = !spec.quiet});
    std::vector<double> d;
    for (const auto& r : rows) d.push_back(r.report.dsc);
    const auto s = metrics::summarize(d);
    std::printf("%s: %zu cases, DSC mean %.4f std %.4f median %.4f\n", (dir / "metrics.csv").string().c_str(), rows.size(),
                s.mean, s.std, s.median);
    return kExitOk;
}

/// Per-case metrics for every labelled manifest case, against the checkpoint's predictions or,
/// with --oracle, against the labels themselves.
inline int cmd_evaluate(const CommandSpec& spec)
{
    const train::TrainConfig cfg = effective_config(spec);
    const auto entries = require_manifest(cfg);
    std::optional<train::Checkpoint> ck;
    if (!spec.oracle) ck = require_checkpoint(spec);
    const std::filesystem::path out_dir = spec.out.empty() ? std::filesystem::path(".") : std::filesystem::path(spec.out);
    const auto out_path = out_dir / "metrics.csv";
    refuse_clobber(out_path, spec.overwrite);
    std::vector<metrics::CaseResult> rows;
    for (const auto& e : entries) {
        if (e.label_path.empty()) throw IngestionError("case " + e.case_id + " has no label");
        const auto gt = data::read_label(e.label_path);
        data::LabelVolume pred;
        if (ck) {
            pred = train::predict_volume(*ck->net, data::read_volume(e.image_path), ck->config.preprocess_spec(), true);
        } else {
            pred = gt;
        }
        rows.push_back({e.case_id, 0, metrics::evaluate_case(pred, gt)});
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_path);
    metrics::write_metrics_csv(out, rows);
    if (!out) throw IngestionError("write failed: " + out_path.string());
    std::printf("%s: %zu cases\n", out_path.string().c_str(), rows.size());
    return kExitOk;
}

inline std::string volume_stem(const std::filesystem::path& p)
{
    std::string name = p.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string e = ext;
        if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) return name.substr(0, name.size() - e.size());
    }
    return p.stem().string();
}

inline int cmd_predict(const CommandSpec& spec)
{
    if (spec.inputs.empty()) throw ConfigError("predict needs at least one input volume");
    auto ck = require_checkpoint(spec);
    const std::filesystem::path out_dir = spec.out.empty() ? std::filesystem::path(".") : std::filesystem::path(spec.out);
    std::filesystem::create_directories(out_dir);
    for (const auto& in : spec.inputs) {
        const auto out_path = out_dir / (volume_stem(in) + "_pred.nii.gz");
        refuse_clobber(out_path, spec.overwrite);
        const auto pred = train::predict_volume(*ck.net, data::read_volume(in), ck.config.preprocess_spec(), !spec.training_grid);
        data::write_label(out_path, pred);
        std::printf("%s\n", out_path.string().c_str());
    }
    return kExitOk;
}

/// synth.count phantoms as NIfTI pairs plus manifest.csv; the series is fixed by --seed.
inline int cmd_synth(const CommandSpec& spec)
{
    const train::TrainConfig cfg = effective_config(spec);
    if (spec.out.empty()) throw ConfigError("synth needs --out DIR");
    const std::filesystem::path dir = spec.out;
    refuse_clobber(dir / "manifest.csv", spec.overwrite);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IngestionError("cannot create output directory " + dir.string());
    std::vector<data::ManifestEntry> entries;
    for (int64_t i = 0; i < cfg.synth.count; ++i) {
        const auto [image, label] = data::phantom_case(cfg.phantom, cfg.train.seed, uint64_t(i));
        const std::string id = data::phantom_id(uint64_t(i));
        data::write_volume(dir / (id + ".nii.gz"), image);
        data::write_label(dir / (id + "_label.nii.gz"), label);
        entries.push_back({id, id + ".nii.gz", id + "_label.nii.gz"});
    }
    data::write_manifest(dir / "manifest.csv", entries);
    std::printf("%s: %zu cases\n", (dir / "manifest.csv").string().c_str(), entries.size());
    return kExitOk;
}

/// Exports, on the training grid of one case: the contour target, its modified form at the
/// checkpoint epoch's p, the contour branch's foreground probability and the shape estimate's
/// foreground channel.
inline int cmd_contour_debug(const CommandSpec& spec)
{
    if (spec.inputs.size() != 1) throw ConfigError("contour-debug needs exactly one input volume");
    auto ck = require_checkpoint(spec);
    const std::filesystem::path image_path = spec.inputs.front();
    const auto label_path = data::label_path_for(image_path);
    if (!std::filesystem::exists(label_path)) throw IngestionError("no label next to " + image_path.string());
    const auto pre = ck.config.preprocess_spec();
    const auto c = train::prepare_case(volume_stem(image_path), data::read_volume(image_path), data::read_label(label_path), pre);
    if (!has_contour_branch(ck.config.net.ablation)) throw ConfigError("checkpoint has no contour branch");

    const std::filesystem::path out_dir = spec.out.empty() ? std::filesystem::path(".") : std::filesystem::path(spec.out);
    const std::string names[4] = {"contour_target", "contour_target_modified", "contour_prob", "shape_fg"};
    for (const auto& n : names) refuse_clobber(out_dir / (c.id + "_" + n + ".nii.gz"), spec.overwrite);
    std::filesystem::create_directories(out_dir);

    Tensor<float> x;
    supervision::MaskBatch y;
    train::assemble_batch({&c.image}, {&c.label}, x, y);
    const auto bundle = ck.net->forward(x, nn::Mode::Eval);
    const double p = supervision::p_at_epoch(ck.meta.epoch, ck.config.p_schedule);
    const Mask3 gamma = supervision::extract_contour(c.label);
    const Grid3<float> prob = sample_grid(slice_channels(bundle.prob, 1, 1), 0, 0, c.image.spacing);
    const Mask3 modified = supervision::modify_contour_target(gamma, prob, p);
    const Grid3<float> contour_prob = sample_grid(nn::foreground_probability(bundle.f_contour), 0, 0, c.image.spacing);

    auto place = [&](auto g) {
        g.spacing = c.image.spacing;
        g.origin = c.image.origin;
        return g;
    };
    const auto path = [&](int i) { return out_dir / (c.id + "_" + names[i] + ".nii.gz"); };
    data::write_label(path(0), place(gamma));
    data::write_label(path(1), place(modified));
    data::write_volume(path(2), place(contour_prob));
    if (bundle.has_shape()) {
        data::write_volume(path(3), place(sample_grid(bundle.shape, 0, 1, c.image.spacing)));
    } else {
        std::fprintf(stderr, "checkpoint has no shape branch; %s not written\n", path(3).string().c_str());
    }
    std::printf("p = %.6g (epoch %lld), outputs in %s\n", p, static_cast<long long>(ck.meta.epoch), out_dir.string().c_str());
    return kExitOk;
}

inline int dispatch(const CommandSpec& spec)
{
    if (spec.command == "train") return cmd_train(spec);
    if (spec.command == "cross-validate") return cmd_cross_validate(spec);
    if (spec.command == "evaluate") return cmd_evaluate(spec);
    if (spec.command == "predict") return cmd_predict(spec);
    if (spec.command == "synth") return cmd_synth(spec);
    if (spec.command == "contour-debug") return cmd_contour_debug(spec);
    throw ConfigError("unknown command '" + spec.command + "'");
}

/// Parses `args` (without the program name), runs the command and maps failures to exit codes.
inline int run(std::vector<std::string> args)
{
    CLI::App app{"CENet: contour-embedded volumetric segmentation"};
    app.require_subcommand(1);
    CommandSpec spec;
    std::optional<uint64_t> seed;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", spec.config_path, "key = value configuration file");
        sub->add_option("--set", spec.overrides, "override a dotted key (key=value), repeatable")->allow_extra_args(false);
        sub->add_option("--seed", seed, "training / synthesis seed");
        sub->add_option("--out", spec.out, "output directory");
        sub->add_flag("--overwrite", spec.overwrite, "replace existing outputs");
        sub->add_flag("--quiet", spec.quiet, "no per-epoch progress");
    };
    auto* train_cmd = app.add_subcommand("train", "train one fold of the manifest");
    auto* cv_cmd = app.add_subcommand("cross-validate", "train and evaluate every fold");
    auto* eval_cmd = app.add_subcommand("evaluate", "metrics CSV for the manifest cases");
    auto* pred_cmd = app.add_subcommand("predict", "segment volumes with a checkpoint");
    auto* synth_cmd = app.add_subcommand("synth", "write synthetic phantoms and a manifest");
    auto* debug_cmd = app.add_subcommand("contour-debug", "export contour supervision volumes for one case");
    for (auto* s : {train_cmd, cv_cmd, eval_cmd, pred_cmd, synth_cmd, debug_cmd}) common(s);
    cv_cmd->add_option("--parallel", spec.parallel, "folds trained concurrently")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--checkpoint", spec.checkpoint, "checkpoint file");
    eval_cmd->add_flag("--oracle", spec.oracle, "score the labels against themselves");
    pred_cmd->add_option("--checkpoint", spec.checkpoint, "checkpoint file");
    pred_cmd->add_flag("--training-grid", spec.training_grid, "keep predictions on the training grid");
    pred_cmd->add_option("inputs", spec.inputs, "NIfTI volumes");
    debug_cmd->add_option("--checkpoint", spec.checkpoint, "checkpoint file");
    debug_cmd->add_option("input", spec.inputs, "NIfTI volume with a sibling <id>_label file");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }
    for (auto* s : app.get_subcommands()) spec.command = s->get_name();
    spec.seed = seed;

    try {
        return dispatch(spec);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const IngestionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
}

inline int run(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(std::move(args));
}

}  // namespace cenet::cli
