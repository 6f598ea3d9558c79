// Acceptance gate: runs the eight acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is 0 only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cenet/train/trainer.hpp"
#include "support.hpp"

using namespace cenet;
using namespace testing_support;
using supervision::MaskBatch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Mask3 nonempty_random(std::mt19937_64& rng, Dims3 d, double density, std::array<double, 3> spacing)
{
    Mask3 m = random_mask(rng, d, density, spacing);
    if (count_nonzero(m) == 0) m.values[rng() % m.values.size()] = 1;
    return m;
}

// ---- 1: metrics against brute force ----

Outcome metric_oracles()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> dens(0.02, 0.9);
    const std::array<double, 3> spacings[3] = {{1, 1, 1}, {2.5, 0.7, 0.7}, {0.5, 1.25, 3}};
    const int trials = 1000;
    int ratio_mismatch = 0;
    double worst_distance = 0;
    for (int t = 0; t < trials; ++t) {
        const auto sp = spacings[t % 3];
        const Mask3 x = nonempty_random(rng, {8, 8, 8}, dens(rng), sp);
        const Mask3 y = nonempty_random(rng, {8, 8, 8}, dens(rng), sp);
        const Counts c = oracle_counts(x, y);
        const double d = double(2 * c.tp) / double(2 * c.tp + c.fp + c.fn);
        const double s = double(c.tp) / double(c.tp + c.fn);
        const double p = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 1.0;
        const metrics::MetricReport r = metrics::evaluate_case(x, y);
        ratio_mismatch += r.dsc != d || r.sensitivity != s || r.precision != p;
        worst_distance = std::max({worst_distance, std::abs(*r.hd95_mm - oracle_hd95(x, y)), std::abs(*r.assd_mm - oracle_assd(x, y))});
    }
    const double dt = seconds_since(t0);
    Outcome o;
    o.pass = ratio_mismatch == 0 && worst_distance <= 1e-9 && dt < 120;
    o.detail = fmt("%.0f pairs, ratio mismatches %.0f, max distance error %.2e mm, %.1f s", trials, ratio_mismatch, worst_distance, dt);
    return o;
}

// ---- 2: loss gradients against central differences ----

double fd_error_over(Tensor<double>& leaf, const Tensor<double>& grad, const std::function<double()>& f)
{
    std::vector<double*> ptrs;
    for (int64_t i = 0; i < leaf.numel(); ++i) ptrs.push_back(leaf.data() + i);
    return max_fd_error(ptrs, grad.storage(), f, 1e-5);
}

Outcome loss_gradients()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    double worst_dice = 0, worst_ce = 0, worst_total = 0;
    for (int trial = 0; trial < 5; ++trial) {
        MaskBatch y(2, 1, 4, 4, 4);
        for (auto& v : y.storage()) v = rng() % 3 == 0;
        const MaskBatch contour = supervision::extract_contour(y);

        auto p = random_tensor<double>(rng, 2, 1, 4, 4, 4, 0, 1);
        Tensor<double> gp;
        supervision::soft_dice_loss(p, y, &gp);
        worst_dice = std::max(worst_dice, fd_error_over(p, gp, [&] { return double(supervision::soft_dice_loss(p, y)); }));

        auto logits = random_tensor<double>(rng, 2, 2, 4, 4, 4, -3, 3);
        const supervision::ClassWeights w{0.4, 2.5};
        Tensor<double> gl;
        supervision::weighted_softmax_cross_entropy(logits, y, w, &gl);
        worst_ce = std::max(worst_ce, fd_error_over(logits, gl, [&] { return double(supervision::weighted_softmax_cross_entropy(logits, y, w)); }));

        model::FeatureBundle<double> b;
        b.f_out = random_tensor<double>(rng, 2, 2, 4, 4, 4, -2, 2);
        b.f_shape0 = random_tensor<double>(rng, 2, 2, 4, 4, 4, -2, 2);
        b.f_shape1 = random_tensor<double>(rng, 2, 2, 4, 4, 4, -2, 2);
        b.shape = model::residual_shape(b.f_shape0, b.f_shape1);
        b.f_contour = random_tensor<double>(rng, 2, 2, 4, 4, 4, -2, 2);
        b.prob = nn::softmax2(b.f_out);
        nn::Parameter<double> weight(nn::ParamKind::ConvWeight, {3, 2, 1, 1, 1});
        for (auto& v : weight.value.storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        weight.zero_grad();
        nn::ParamList<double> params;
        params.add("w.", weight, "weight");
        const supervision::LossWeights lw{0.7, 1.3, 0.1, std::nullopt};
        const auto eval = supervision::total_loss(b, y, contour, lw, params, true);
        auto total = [&] { return supervision::total_loss(b, y, contour, lw, params, false).terms.total; };
        worst_total = std::max(worst_total, fd_error_over(b.f_out, eval.grad.f_out, total));
        worst_total = std::max(worst_total, fd_error_over(b.shape, eval.grad.shape, total));
        worst_total = std::max(worst_total, fd_error_over(b.f_contour, eval.grad.f_contour, total));
        worst_total = std::max(worst_total, fd_error_over(weight.value, weight.grad, total));
    }
    const double dt = seconds_since(t0);
    Outcome o;
    o.pass = worst_dice < 1e-4 && worst_ce < 1e-4 && worst_total < 1e-4 && dt < 60;
    o.detail = fmt("max relative error dice %.2e, cross-entropy %.2e, total %.2e, %.1f s", worst_dice, worst_ce, worst_total, dt);
    return o;
}

// ---- 3: contour target modification invariants ----

Outcome contour_invariants()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(0, 1);
    int violations = 0;
    const int cases = 500;
    auto subset = [](const Mask3& a, const Mask3& b) {
        for (size_t i = 0; i < a.values.size(); ++i)
            if (a.values[i] && !b.values[i]) return false;
        return true;
    };
    for (int t = 0; t < cases; ++t) {
        const Dims3 d{int64_t(2 + t % 7), int64_t(3 + t % 5), int64_t(2 + t % 6)};
        const Mask3 gamma = supervision::extract_contour(random_mask(rng, d, u(rng)));
        Grid3<double> prob(d);
        for (auto& v : prob.values) v = u(rng);
        double p1 = std::max(1e-3, u(rng)), p2 = std::max(1e-3, u(rng));
        if (p1 > p2) std::swap(p1, p2);
        const Mask3 m1 = supervision::modify_contour_target(gamma, prob, p1);
        const Mask3 m2 = supervision::modify_contour_target(gamma, prob, p2);
        const bool ok = subset(m1, gamma) && subset(m2, gamma) && subset(m1, m2) &&
                        supervision::modify_contour_target(gamma, Grid3<double>(d, 0.0), p2).values == gamma.values &&
                        count_nonzero(supervision::modify_contour_target(gamma, Grid3<double>(d, 1.0), p1)) == 0;
        violations += !ok;
    }
    const double dt = seconds_since(t0);
    Outcome o;
    o.pass = violations == 0 && dt < 30;
    o.detail = fmt("%.0f random cases, %.0f violations, %.2f s", cases, violations, dt);
    return o;
}

// ---- 4: schedules ----

Outcome schedules()
{
    const supervision::PSchedule ps;
    const train::OptimSettings os;
    bool ok = true;
    for (int64_t e = 0; e <= 99; ++e) ok = ok && supervision::p_at_epoch(e, ps) == 1.0;
    for (int64_t e = 100; e <= 109; ++e) ok = ok && supervision::p_at_epoch(e, ps) == 0.9;
    int64_t floor_epoch = -1;
    for (int64_t e = 0; e <= 1000; ++e) {
        const double p = supervision::p_at_epoch(e, ps);
        if (p == 0.5 && floor_epoch < 0) floor_epoch = e;
        if (floor_epoch >= 0) ok = ok && p == 0.5;
    }
    ok = ok && floor_epoch >= 0 && floor_epoch <= 300;
    ok = ok && train::lr_at_epoch(0, os) == 0.001 && train::lr_at_epoch(50, os) == 0.001 * 0.1 &&
         train::lr_at_epoch(100, os) == 0.001 * 0.1 * 0.1;
    Outcome o;
    o.pass = ok;
    o.detail = fmt("p floor 0.5 first reached at epoch %.0f; lr(0,50,100) = %g, %g, %g", double(floor_epoch), train::lr_at_epoch(0, os),
                   train::lr_at_epoch(50, os), train::lr_at_epoch(100, os));
    return o;
}

// ---- 5: architecture shapes and ablations ----

Outcome architecture()
{
    const auto t0 = Clock::now();
    const NetworkConfig cfg = train::TrainConfig::desk_network();
    const Dims3 s = cfg.input_shape;
    std::mt19937_64 rng(505);
    const auto x = random_tensor<float>(rng, 1, 1, s.d, s.h, s.w, 0, 1);
    MaskBatch y(1, 1, s.d, s.h, s.w);
    for (int64_t z = s.d / 4; z < 3 * s.d / 4; ++z)
        for (int64_t r = s.h / 4; r < 3 * s.h / 4; ++r)
            for (int64_t c = s.w / 4; c < 3 * s.w / 4; ++c) y.data()[(z * s.h + r) * s.w + c] = 1;
    const MaskBatch contour = supervision::extract_contour(y);

    bool shapes_ok = true;
    {
        model::CENet<float> net(cfg);
        net.xavier_init(1);
        const auto b = net.forward(x, nn::Mode::Eval);
        for (const Tensor<float>* t : {&b.f_out, &b.f_shape0, &b.f_shape1, &b.shape, &b.f_contour, &b.prob})
            shapes_ok = shapes_ok && t->n() == 1 && t->c() == 2 && t->spatial() == s;
    }

    bool dblock_ok = true;
    for (int64_t k : {2, 4, 16}) {
        model::DBlock<float> blk(3 * k, k, k >= 4 ? 4 : 2);
        dblock_ok = dblock_ok && blk.forward(random_tensor<float>(rng, 1, 3 * k, 4, 4, 4), nn::Mode::Eval).c() == 3 * k;
    }

    NetworkConfig dense = cfg;
    dense.separable = false;
    const int64_t n_sep = model::count_parameters(cfg), n_dense = model::count_parameters(dense);

    bool ablations_ok = true;
    std::string trained;
    for (auto a : {Ablation::AFullContour, Ablation::CNoContour, Ablation::SNoShape, Ablation::RNoResidual}) {
        NetworkConfig c = cfg;
        c.ablation = a;
        try {
            model::CENet<float> net(c);
            net.xavier_init(2);
            auto params = net.parameters();
            train::Adam<float> opt(params);
            net.zero_grad();
            const auto b = net.forward(x, nn::Mode::Train);
            const auto loss = supervision::total_loss(b, y, contour, {}, params, true);
            net.backward(loss.grad);
            opt.step(1e-3);
            net.release();
            ablations_ok = ablations_ok && std::isfinite(loss.terms.total);
            trained += (trained.empty() ? "" : " ") + to_string(a);
        } catch (const std::exception& e) {
            ablations_ok = false;
            trained += std::string(" ") + to_string(a) + " failed: " + e.what();
        }
    }
    const double dt = seconds_since(t0);
    Outcome o;
    o.pass = shapes_ok && dblock_ok && n_sep < n_dense && ablations_ok && dt < 120;
    o.detail = "bundle shapes " + std::string(shapes_ok ? "ok" : "WRONG") + ", D_Block 3k " + (dblock_ok ? "ok" : "WRONG") +
               ", parameters separable " + std::to_string(n_sep) + " < dense " + std::to_string(n_dense) + ", trained one step: " +
               trained + fmt(", %.1f s", dt);
    return o;
}

// ---- 6: cutout geometry ----

Outcome cutout_geometry()
{
    const data::AugmentSpec spec;
    const Dims3 d{64, 64, 64};
    const int draws = 1000;
    const int64_t lo = 13 * 13 * 13, hi = 16 * 16 * 16;
    Rng rng(606);
    int applied = 0, in_bounds = 0, out_of_range = 0;
    for (int i = 0; i < draws; ++i) {
        const auto box = data::draw_cutout(d, spec, rng);
        if (!box) continue;
        ++applied;
        if (box->voxels() != box->nominal[0] * box->nominal[1] * box->nominal[2]) continue;
        data::Volume v(d, 1.0f);
        data::apply_cutout(v, *box);
        int64_t zeros = 0;
        for (float x : v.values) zeros += x == 0.0f;
        ++in_bounds;
        out_of_range += zeros < lo || zeros > hi;
    }
    const double rate = double(applied) / draws;
    Outcome o;
    o.pass = out_of_range == 0 && in_bounds > 0 && std::abs(rate - 0.8) <= 0.03;
    o.detail = fmt("application rate %.3f, %.0f in-bounds masks, %.0f outside [13^3, 16^3]", rate, in_bounds, out_of_range);
    return o;
}

// ---- 7 and 8: phantom integration run and determinism ----

// Reduced FULL configuration and budget for the phantom comparison.
#ifndef CENET_ACCEPTANCE_EPOCHS
#define CENET_ACCEPTANCE_EPOCHS 150
#endif
constexpr int64_t kEpochs = CENET_ACCEPTANCE_EPOCHS;
constexpr int kSeeds = 5;
constexpr uint64_t kPhantomSeed = 1;

train::TrainConfig integration_config(Ablation a, uint64_t seed)
{
    train::TrainConfig cfg;
    cfg.net.growth_k = 2;
    cfg.net.group_n = 2;
    cfg.net.base_channels = 4;
    cfg.net.transition_channels = 4;
    cfg.net.out_growth = 2;
    cfg.net.out_hidden = 4;
    cfg.net.ablation = a;
    cfg.train.epochs = kEpochs;
    cfg.train.seed = seed;
    cfg.train.checkpoint_every = 0;
    cfg.data.folds = 1;
    return cfg;
}

double lowest_val_dice_loss(const train::TrainResult& r)
{
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& log : r.logs) lo = std::min(lo, log.val_dice_loss);
    return lo;
}

struct IntegrationResult {
    Outcome convergence, determinism;
};

IntegrationResult integration(const fs::path& root)
{
    const auto t0 = Clock::now();
    const train::TrainConfig base = integration_config(Ablation::Full, 0);
    std::vector<train::Case> train_cases, val_cases;
    for (uint64_t i = 0; i < 20; ++i) {
        const auto [img, lbl] = data::phantom_case(base.phantom, kPhantomSeed, i);
        (i < 16 ? train_cases : val_cases).push_back(train::prepare_case(data::phantom_id(i), img, lbl, base.preprocess_spec()));
    }

    auto run = [&](Ablation a, uint64_t seed, const std::string& name) {
        const fs::path dir = root / name;
        train::prepare_output_dir(dir, true);
        const auto r = train::train(integration_config(a, seed), train_cases, val_cases, dir);
        const auto& last = r.logs.back();
        std::printf("  %-22s final val dice loss %.6f, val DSC %.4f, best DSC %.4f (%.0f s)\n", name.c_str(), last.val_dice_loss, last.val_dsc,
                    r.best_val_dsc, seconds_since(t0));
        std::fflush(stdout);
        return r;
    };

    int wins = 0;
    double best_dsc = 0;
    int64_t first_epoch_at_target = -1;
    std::string per_seed;
    for (int s = 0; s < kSeeds; ++s) {
        const auto full = run(Ablation::Full, uint64_t(s), "full_s" + std::to_string(s));
        const auto ablated = run(Ablation::CNoContour, uint64_t(s), "c_no_contour_s" + std::to_string(s));
        const double lf = lowest_val_dice_loss(full), lc = lowest_val_dice_loss(ablated);
        wins += lf <= lc;
        per_seed += fmt(" %.4f/%.4f", lf, lc);
        if (s == 0) {
            for (const auto& log : full.logs) {
                best_dsc = std::max(best_dsc, log.val_dsc);
                if (log.val_dsc >= 0.90 && first_epoch_at_target < 0) first_epoch_at_target = log.epoch;
            }
        }
    }
    const double dt_main = seconds_since(t0);

    IntegrationResult out;
    out.convergence.pass = first_epoch_at_target >= 0 && first_epoch_at_target < 150 && wins >= 3 && dt_main < 6 * 3600;
    out.convergence.detail = fmt("FULL seed 0 best val DSC %.4f (first >= 0.90 at epoch %.0f); FULL <= C_NO_CONTOUR lowest val dice loss within %.0f epochs in %.0f/5 seeds",
                                 best_dsc, double(first_epoch_at_target), double(kEpochs), wins) +
                             " [full/no_contour:" + per_seed + "]" + fmt(", %.0f s", dt_main);

    run(Ablation::Full, 0, "full_s0_rerun");
    const std::string a = slurp(root / "full_s0" / "curve.csv"), b = slurp(root / "full_s0_rerun" / "curve.csv");
    out.determinism.pass = !a.empty() && a == b;
    out.determinism.detail = std::string(a == b ? "identical" : "DIFFERENT") + " curve.csv (" + std::to_string(a.size()) + " bytes) for two seeded FULL runs";
    return out;
}

}  // namespace

int main(int argc, char** argv)
{
    train::tune_allocator();
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_runs");
    std::vector<std::pair<std::string, Outcome>> results;
    std::string summary;
    auto report = [&](const std::string& name, const Outcome& o) {
        const std::string line = std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail + "\n";
        std::fputs(line.c_str(), stdout);
        std::fflush(stdout);
        summary += line;
        results.push_back({name, o});
    };
    report("criterion 1 metric-oracle equivalence", metric_oracles());
    report("criterion 2 loss gradient checks", loss_gradients());
    report("criterion 3 contour supervision invariants", contour_invariants());
    report("criterion 4 schedule reproduction", schedules());
    report("criterion 5 architecture shape suite", architecture());
    report("criterion 6 cutout geometry", cutout_geometry());
    const IntegrationResult ir = integration(root);
    report("criterion 7 phantom integration run", ir.convergence);
    report("criterion 8 determinism", ir.determinism);
    int failed = 0;
    for (const auto& r : results) failed += !r.second.pass;
    const std::string tally = fmt("%.0f/%.0f criteria passed\n", double(results.size() - failed), double(results.size()));
    std::fputs(tally.c_str(), stdout);
    summary += tally;
    std::ofstream(root / "summary.txt") << summary;
    return failed == 0 ? 0 : 1;
}
