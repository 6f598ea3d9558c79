#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <sys/wait.h>
#include <unistd.h>

#include "cenet/data/augment.hpp"
#include "cenet/data/folds.hpp"
#include "cenet/data/manifest.hpp"
#include "cenet/data/nifti.hpp"
#include "cenet/metrics/report.hpp"
#include "cenet/model/cenet.hpp"
#include "cenet/supervision/contour.hpp"
#include "cenet/supervision/loss.hpp"
#include "cenet/train/checkpoint.hpp"
#include "cenet/train/optim.hpp"

namespace cenet::train {

/// Keeps large activation buffers in the heap between iterations instead of returning them to
/// the kernel after every free (page faults otherwise dominate small networks).
inline void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

/// A labelled case on the training grid, plus its label on the original grid for evaluation.
struct Case {
    std::string id;
    data::Volume image;               // normalized, training grid
    data::LabelVolume label;          // training grid
    data::LabelVolume native_label;   // original grid
};

inline Case prepare_case(std::string id, const data::Volume& raw, const data::LabelVolume& raw_label,
                         const data::PreprocessSpec& spec)
{
    if (raw.dims != raw_label.dims) throw IngestionError("case " + id + ": image and label grids differ");
    Case c;
    c.id = std::move(id);
    c.image = data::preprocess(raw, spec);
    c.label = data::resample_label(raw_label, spec.target_shape);
    c.native_label = raw_label;
    return c;
}

inline std::vector<Case> load_cases(const std::vector<data::ManifestEntry>& entries, const data::PreprocessSpec& spec)
{
    std::vector<Case> out;
    for (const auto& e : entries) {
        if (e.label_path.empty()) throw IngestionError("case " + e.case_id + " has no label");
        out.push_back(prepare_case(e.case_id, data::read_volume(e.image_path), data::read_label(e.label_path), spec));
    }
    return out;
}

struct EpochLog {
    int64_t epoch = 0;
    double train_dice_loss = 0;
    double val_dice_loss = 0;
    double val_dsc = 0;
    double p_value = 1;
    double lr = 0;
    double wall_time_s = 0;
};

// curve.csv carries only quantities that are a function of (seed, config, data), so identical
// runs produce identical files; wall-clock time goes to timing.csv.
inline const char* kCurveHeader = "epoch,train_dice_loss,val_dice_loss,val_dsc,p_value,lr";
inline const char* kTimingHeader = "epoch,wall_time_s";

inline std::string curve_row(const EpochLog& e)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(e.epoch), e.train_dice_loss,
                  e.val_dice_loss, e.val_dsc, e.p_value, e.lr);
    return buf;
}

inline std::string timing_row(const EpochLog& e)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%lld,%.3f", static_cast<long long>(e.epoch), e.wall_time_s);
    return buf;
}

/// Batch of images (N, 1, D, H, W) and labels from a list of volumes.
inline void assemble_batch(const std::vector<const data::Volume*>& images, const std::vector<const data::LabelVolume*>& labels,
                           Tensor<float>& x, supervision::MaskBatch& y)
{
    const Dims3 d = images.front()->dims;
    const auto n = static_cast<int64_t>(images.size());
    x = Tensor<float>(n, 1, d.d, d.h, d.w);
    y = supervision::MaskBatch(n, 1, d.d, d.h, d.w);
    for (int64_t b = 0; b < n; ++b) {
        std::copy(images[b]->values.begin(), images[b]->values.end(), x.channel(b, 0));
        std::copy(labels[b]->values.begin(), labels[b]->values.end(), y.channel(b, 0));
    }
}

/// Binary prediction by argmax over the two output channels (ties go to background).
inline data::LabelVolume argmax_prediction(const Tensor<float>& f_out, int64_t b, const data::LabelVolume& like)
{
    data::LabelVolume m(f_out.spatial(), 0, like.spacing);
    m.origin = like.origin;
    const float* l0 = f_out.channel(b, 0);
    const float* l1 = f_out.channel(b, 1);
    for (int64_t i = 0; i < f_out.voxels(); ++i) m.values[static_cast<size_t>(i)] = l1[i] > l0[i] ? 1 : 0;
    return m;
}

/// Nearest-neighbour map of a training-grid prediction onto the grid of `native`.
inline data::LabelVolume to_native_grid(const data::LabelVolume& pred, const data::LabelVolume& native)
{
    data::LabelVolume out = data::resample_label(pred, native.dims);
    out.spacing = native.spacing;
    out.origin = native.origin;
    return out;
}

struct ValidationResult {
    double dice_loss = 0;  // mean soft dice loss of the final output, training grid
    double dsc = 0;        // mean DSC of the argmax prediction, training grid
    std::vector<metrics::CaseResult> reports;  // native grid, when requested
};

/// Evaluation-mode pass over `cases` (no augmentation, no target modification).
inline ValidationResult validate(model::CENet<float>& net, const std::vector<Case>& cases, bool with_reports, int fold = 0)
{
    if (cases.empty()) throw ValidationError("validate: empty case list");
    ValidationResult r;
    for (const auto& c : cases) {
        Tensor<float> x;
        supervision::MaskBatch y;
        assemble_batch({&c.image}, {&c.label}, x, y);
        const auto bundle = net.forward(x, nn::Mode::Eval);
        const Tensor<float> prob = nn::foreground_probability(bundle.f_out);
        r.dice_loss += supervision::soft_dice_loss(prob, y);
        const data::LabelVolume pred = argmax_prediction(bundle.f_out, 0, c.label);
        r.dsc += metrics::dsc(pred, c.label);
        if (with_reports) r.reports.push_back({c.id, fold, metrics::evaluate_case(to_native_grid(pred, c.native_label), c.native_label)});
    }
    r.dice_loss /= double(cases.size());
    r.dsc /= double(cases.size());
    return r;
}

struct TrainState {
    TrainConfig cfg;
    model::CENet<float> net;
    nn::ParamList<float> params;
    std::unique_ptr<Adam<float>> optimizer;

    explicit TrainState(const TrainConfig& c) : cfg(c), net(c.net)
    {
        net.xavier_init(c.train.seed);
        params = net.parameters();
        optimizer = std::make_unique<Adam<float>>(params, c.train.adam_beta1, c.train.adam_beta2, c.train.adam_eps);
    }
};

/// Observes each iteration: epoch, iteration, p handed to target modification, loss terms.
using IterationHook = std::function<void(int64_t, int64_t, double, const supervision::LossTerms&)>;

/// One pass over `cases` in a seeded random order. Every iteration recomputes the modified contour
/// target from the batch's own forward pass before evaluating the loss.
inline EpochLog train_epoch(TrainState& s, const std::vector<Case>& cases, int64_t epoch, const IterationHook& hook = {})
{
    if (cases.empty()) throw ValidationError("train_epoch: no training cases");
    const TrainConfig& cfg = s.cfg;
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.p_value = supervision::p_at_epoch(epoch, cfg.p_schedule);
    log.lr = lr_at_epoch(epoch, cfg.train);

    std::vector<size_t> order(cases.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.train.seed, 0x5eed, uint64_t(epoch)));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[size_t(uniform_int(shuffle_rng, 0, int64_t(i) - 1))]);

    const uint64_t aug_seed = derive_seed(cfg.train.seed, 0xa06, cfg.augment.rng_seed);
    const auto bs = static_cast<size_t>(cfg.train.batch_size);
    double dice_sum = 0;
    int64_t iterations = 0;
    for (size_t start = 0; start < order.size(); start += bs) {
        const size_t end = std::min(order.size(), start + bs);
        std::vector<data::Volume> images;
        std::vector<data::LabelVolume> labels;
        std::string ids;
        for (size_t k = start; k < end; ++k) {
            const Case& c = cases[order[k]];
            ids += (ids.empty() ? "" : ",") + c.id;
            if (cfg.train.augment) {
                Rng rng(derive_seed(aug_seed, uint64_t(epoch), order[k]));
                auto [v, l] = data::augment(c.image, c.label, cfg.augment, rng);
                images.push_back(std::move(v));
                labels.push_back(std::move(l));
            } else {
                images.push_back(c.image);
                labels.push_back(c.label);
            }
        }
        std::vector<const data::Volume*> ip;
        std::vector<const data::LabelVolume*> lp;
        for (size_t k = 0; k < images.size(); ++k) {
            ip.push_back(&images[k]);
            lp.push_back(&labels[k]);
        }
        Tensor<float> x;
        supervision::MaskBatch y;
        assemble_batch(ip, lp, x, y);

        s.net.zero_grad();
        const auto bundle = s.net.forward(x, nn::Mode::Train);
        supervision::MaskBatch contour_target;
        if (bundle.has_contour()) {
            const supervision::MaskBatch gamma_c = supervision::extract_contour(y);
            if (cfg.net.ablation == Ablation::AFullContour) {
                contour_target = gamma_c;
            } else {
                contour_target = supervision::modify_contour_target(gamma_c, slice_channels(bundle.prob, 1, 1), log.p_value);
            }
        }
        auto loss = supervision::total_loss(bundle, y, contour_target, cfg.loss, s.params, true);
        if (!std::isfinite(loss.terms.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at epoch " << epoch << " iteration " << iterations << " (cases " << ids
                << "): dice_out=" << loss.terms.dice_out << " dice_shape=" << loss.terms.dice_shape
                << " contour_ce=" << loss.terms.contour_ce << " l2=" << loss.terms.l2;
            s.net.release();
            throw NumericalError(msg.str());
        }
        if (hook) hook(epoch, iterations, log.p_value, loss.terms);
        s.net.backward(loss.grad);
        s.optimizer->step(log.lr);
        dice_sum += loss.terms.dice_out;
        ++iterations;
    }
    log.train_dice_loss = dice_sum / double(iterations);
    log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
}

struct TrainResult {
    std::vector<EpochLog> logs;
    int64_t best_epoch = -1;
    double best_val_dice_loss = INFINITY;
    double best_val_dsc = 0;
    ValidationResult final_validation;  // last epoch, with native-grid reports
};

struct TrainOptions {
    bool verbose = false;
    IterationHook hook;
};

/// Prepares an output directory: refuses a non-empty one unless `overwrite`, in which case its
/// contents are removed.
inline void prepare_output_dir(const std::filesystem::path& dir, bool overwrite)
{
    namespace fs = std::filesystem;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!overwrite) throw ConfigError("output " + dir.string() + " already exists (use --overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

/// Full training run writing `run_dir`/{config.resolved, curve.csv, timing.csv, checkpoints/}. The directory
/// must already be prepared.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Case>& train_cases, const std::vector<Case>& val_cases,
                         const std::filesystem::path& run_dir, const TrainOptions& opt = {})
{
    namespace fs = std::filesystem;
    cfg.validate();
    tune_allocator();
    fs::create_directories(run_dir / "checkpoints");
    {
        std::ofstream out(run_dir / "config.resolved");
        out << resolved_config_text(cfg);
    }
    std::ofstream curve(run_dir / "curve.csv");
    std::ofstream timing(run_dir / "timing.csv");
    curve << kCurveHeader << '\n';
    timing << kTimingHeader << '\n';

    TrainState state(cfg);
    TrainResult result;
    for (int64_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        EpochLog log = train_epoch(state, train_cases, epoch, opt.hook);
        const auto t0 = std::chrono::steady_clock::now();
        const bool last = epoch + 1 == cfg.train.epochs;
        ValidationResult val = validate(state.net, val_cases, false);
        log.val_dice_loss = val.dice_loss;
        log.val_dsc = val.dsc;
        log.wall_time_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        curve << curve_row(log) << '\n' << std::flush;
        timing << timing_row(log) << '\n' << std::flush;
        result.logs.push_back(log);
        if (opt.verbose) {
            std::fprintf(stderr, "[%s] epoch %lld  train_dice %.4f  val_dice %.4f  val_dsc %.4f  p %.3f  lr %.2g  %.1fs\n",
                         cfg.run_id().c_str(), static_cast<long long>(epoch), log.train_dice_loss, log.val_dice_loss,
                         log.val_dsc, log.p_value, log.lr, log.wall_time_s);
        }

        CheckpointMeta meta{cfg.run_id(), epoch, config_hash(cfg), val.dice_loss, val.dsc};
        if (val.dice_loss < result.best_val_dice_loss) {
            result.best_val_dice_loss = val.dice_loss;
            result.best_epoch = epoch;
            save_checkpoint(run_dir / "checkpoints" / "best.ckpt", state.net, cfg, meta);
        }
        result.best_val_dsc = std::max(result.best_val_dsc, val.dsc);
        const bool stop = cfg.train.stop_at_val_dsc > 0 && val.dsc >= cfg.train.stop_at_val_dsc;
        const bool periodic = cfg.train.checkpoint_every > 0 && (epoch + 1) % cfg.train.checkpoint_every == 0;
        if (last || stop || periodic) {
            save_checkpoint(run_dir / "checkpoints" / (std::to_string(epoch) + ".ckpt"), state.net, cfg, meta);
        }
        if (last || stop) {
            result.final_validation = validate(state.net, val_cases, true, cfg.data.fold);
            break;
        }
    }
    return result;
}

/// Preprocess, forward, argmax; optionally mapped back onto the volume's own grid.
inline data::LabelVolume predict_volume(model::CENet<float>& net, const data::Volume& volume, const data::PreprocessSpec& spec,
                                        bool native_grid)
{
    const int64_t step = int64_t(1) << net.config().levels;
    const data::Volume v = data::preprocess(volume, spec);
    for (int a = 0; a < 3; ++a) {
        if (v.dims[a] % step != 0) {
            throw ShapeError("predict_volume: preprocessed shape " + v.dims.str() + " not divisible by 2^levels");
        }
    }
    Tensor<float> x(1, 1, v.dims.d, v.dims.h, v.dims.w);
    std::copy(v.values.begin(), v.values.end(), x.data());
    const auto bundle = net.forward(x, nn::Mode::Eval);
    data::LabelVolume like(v.dims, 0, v.spacing);
    like.origin = v.origin;
    data::LabelVolume pred = argmax_prediction(bundle.f_out, 0, like);
    if (!native_grid) return pred;
    data::LabelVolume native(volume.dims, 0, volume.spacing);
    native.origin = volume.origin;
    return to_native_grid(pred, native);
}

/// Per-case metrics rows (aggregate rows skipped) from a CSV written by write_metrics_csv.
inline std::vector<metrics::CaseResult> read_metrics_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<metrics::CaseResult> out;
    while (std::getline(in, line)) {
        const auto cols = detail::split(line, ',');
        if (!cols.empty() && (cols[0] == "mean" || cols[0] == "std" || cols[0] == "median")) continue;
        if (cols.size() != 7) throw IngestionError(path.string() + ": malformed row '" + line + "'");
        metrics::CaseResult r;
        r.case_id = cols[0];
        r.fold = std::stoi(cols[1]);
        auto opt = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        r.report.dsc = std::stod(cols[2]);
        r.report.hd95_mm = opt(cols[3]);
        r.report.assd_mm = opt(cols[4]);
        r.report.sensitivity = std::stod(cols[5]);
        r.report.precision = std::stod(cols[6]);
        out.push_back(r);
    }
    return out;
}

struct CrossValidationOptions {
    int parallel = 1;  // folds trained concurrently in child processes
    bool verbose = false;
};

/// Trains and evaluates one fold into `root`/fold<f>/, including that fold's metrics.csv.
inline std::vector<metrics::CaseResult> run_fold(const TrainConfig& base, const std::vector<Case>& cases,
                                                 const data::FoldSplit& split, int fold, const std::filesystem::path& root,
                                                 bool verbose)
{
    TrainConfig cfg = base;
    cfg.data.fold = fold;
    cfg.train.run_id = base.run_id() + "_fold" + std::to_string(fold);
    std::map<std::string, const Case*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;
    std::vector<Case> train_cases, val_cases;
    for (const auto& id : split.training_cases(fold)) train_cases.push_back(*by_id.at(id));
    for (const auto& id : split.validation_cases(fold)) val_cases.push_back(*by_id.at(id));
    const auto dir = root / ("fold" + std::to_string(fold));
    std::filesystem::create_directories(dir);
    TrainResult r = train(cfg, train_cases, val_cases, dir, {.verbose = verbose, .hook = {}});
    std::ofstream out(dir / "metrics.csv");
    metrics::write_metrics_csv(out, r.final_validation.reports);
    return r.final_validation.reports;
}

/// Every fold with a fresh initialization; per-fold outputs under `root`/fold<f>/ and the merged
/// per-case table with aggregate rows in `root`/metrics.csv.
inline std::vector<metrics::CaseResult> cross_validate(const TrainConfig& cfg, const std::vector<Case>& cases,
                                                       const std::filesystem::path& root, const CrossValidationOptions& opt = {})
{
    namespace fs = std::filesystem;
    if (int64_t(cases.size()) < cfg.data.folds) {
        throw ValidationError("cross_validate: " + std::to_string(cases.size()) + " cases for " + std::to_string(cfg.data.folds) + " folds");
    }
    std::vector<std::string> ids;
    for (const auto& c : cases) ids.push_back(c.id);
    const data::FoldSplit split = data::make_folds(ids, cfg.data.folds, cfg.data.fold_seed,
                                                   cfg.data.train_count > 0 ? std::optional<int64_t>(cfg.data.train_count) : std::nullopt);
    fs::create_directories(root);
    if (opt.parallel <= 1) {
        for (int f = 0; f < split.fold_count; ++f) run_fold(cfg, cases, split, f, root, opt.verbose);
    } else {
        std::set<pid_t> running;
        int failed_status = 0;
        auto reap_one = [&] {
            int status = 0;
            const pid_t pid = ::wait(&status);
            if (pid <= 0) return;
            running.erase(pid);
            if (!(WIFEXITED(status) && WEXITSTATUS(status) == 0) && failed_status == 0)
                failed_status = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
        };
        for (int f = 0; f < split.fold_count; ++f) {
            while (int(running.size()) >= opt.parallel) reap_one();
            std::fflush(nullptr);
            const pid_t pid = ::fork();
            if (pid < 0) throw std::runtime_error("cross_validate: fork failed");
            if (pid == 0) {
                int code = 0;
                try {
                    run_fold(cfg, cases, split, f, root, opt.verbose);
                } catch (const NumericalError& e) {
                    std::fprintf(stderr, "fold %d: %s\n", f, e.what());
                    code = 3;
                } catch (const std::exception& e) {
                    std::fprintf(stderr, "fold %d: %s\n", f, e.what());
                    code = 1;
                }
                std::fflush(nullptr);
                ::_exit(code);
            }
            running.insert(pid);
        }
        while (!running.empty()) reap_one();
        if (failed_status == 3) throw NumericalError("cross_validate: a fold aborted on a non-finite loss");
        if (failed_status != 0) throw std::runtime_error("cross_validate: a fold process failed");
    }
    std::vector<metrics::CaseResult> all;
    for (int f = 0; f < split.fold_count; ++f) {
        auto rows = read_metrics_csv(root / ("fold" + std::to_string(f)) / "metrics.csv");
        all.insert(all.end(), rows.begin(), rows.end());
    }
    std::ofstream out(root / "metrics.csv");
    metrics::write_metrics_csv(out, all);
    return all;
}

}  // namespace cenet::train
