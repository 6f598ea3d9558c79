#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "cenet/data/augment.hpp"
#include "cenet/data/cache.hpp"
#include "cenet/data/folds.hpp"
#include "cenet/data/manifest.hpp"
#include "cenet/data/nifti.hpp"
#include "cenet/data/phantom.hpp"
#include "support.hpp"

using namespace cenet;
using namespace cenet::data;
using namespace testing_support;

namespace {

Volume ramp(Dims3 d, std::array<double, 3> spacing = {1, 1, 1})
{
    Volume v(d, 0.0f, spacing);
    for (size_t i = 0; i < v.values.size(); ++i) v.values[i] = float(i % 97) - 40.0f;
    return v;
}

std::vector<std::string> ids(int n)
{
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("case_" + std::to_string(i));
    return out;
}

}  // namespace

TEST(WindowNormalize, ClipBoundsAndCentre)
{
    Volume v(Dims3{1, 1, 5});
    v.values = {-1000.0f, 360.0f, 10.0f, -2000.0f, 900.0f};
    const Volume n = window_normalize(v);
    EXPECT_EQ(n.values[0], 0.0f);
    EXPECT_EQ(n.values[1], 1.0f);
    EXPECT_EQ(n.values[2], 0.5f);
    EXPECT_EQ(n.values[3], 0.0f);
    EXPECT_EQ(n.values[4], 1.0f);
    EXPECT_TRUE(n.normalized);
    EXPECT_EQ(window_normalize(n).values, n.values);
    PreprocessSpec bad;
    bad.window_width = 0;
    EXPECT_THROW(window_normalize(v, bad), ConfigError);
}

TEST(Resample, IdentityConstantAndBinary)
{
    const Volume v = ramp({5, 6, 7}, {2.0, 1.0, 0.5});
    const Volume same = resample_volume(v, v.dims);
    EXPECT_EQ(same.values, v.values);
    EXPECT_EQ(same.spacing, v.spacing);

    const Volume c(Dims3{5, 6, 7}, 3.25f);
    for (const Dims3 t : {Dims3{9, 3, 14}, Dims3{1, 1, 1}, Dims3{16, 16, 8}})
        for (float x : resample_volume(c, t).values) EXPECT_EQ(x, 3.25f);

    std::mt19937_64 rng(30);
    const Mask3 l = random_mask(rng, {6, 6, 6}, 0.4, {1.5, 1.5, 3.0});
    const Mask3 r = resample_label(l, {11, 4, 9});
    for (auto x : r.values) EXPECT_LE(x, 1);
    EXPECT_EQ(r.dims, (Dims3{11, 4, 9}));
    EXPECT_NEAR(r.spacing[0], 1.5 * 6 / 11, 1e-12);
    EXPECT_NEAR(r.spacing[2], 3.0 * 6 / 9, 1e-12);
    EXPECT_THROW(resample_volume(v, {0, 2, 2}), ShapeError);
}

TEST(Resample, PreprocessIsIdempotent)
{
    PreprocessSpec spec;
    spec.target_shape = {8, 8, 4};
    const Volume once = preprocess(ramp({10, 12, 6}), spec);
    const Volume twice = preprocess(once, spec);
    EXPECT_EQ(once.values, twice.values);
    for (float x : once.values) {
        EXPECT_GE(x, 0.0f);
        EXPECT_LE(x, 1.0f);
    }
}

TEST(Nifti, RoundTripPlainAndGzip)
{
    const auto dir = scratch_dir("nifti");
    Volume v = ramp({4, 5, 6}, {2.5, 0.75, 0.75});
    v.origin = {-10, 4.5, 3};
    std::mt19937_64 rng(31);
    Mask3 l = random_mask(rng, v.dims, 0.3, v.spacing);
    l.origin = v.origin;
    for (const char* ext : {".nii", ".nii.gz"}) {
        const auto img = dir / (std::string("case") + ext);
        const auto lab = dir / (std::string("case_label") + ext);
        write_volume(img, v);
        write_label(lab, l);
        const auto [rv, rl] = load_volume(img);
        EXPECT_EQ(rv.dims, v.dims);
        EXPECT_EQ(rv.values, v.values);
        EXPECT_EQ(rv.spacing, v.spacing);
        EXPECT_EQ(rv.origin, v.origin);
        ASSERT_TRUE(rl.has_value());
        EXPECT_EQ(rl->values, l.values);
        std::filesystem::remove(lab);
    }
    EXPECT_FALSE(load_volume(dir / "case.nii").second.has_value());
    EXPECT_THROW(read_volume(dir / "absent.nii.gz"), IngestionError);
    std::filesystem::remove_all(dir);
}

TEST(Nifti, RejectsTwoDimensionalImages)
{
    const auto dir = scratch_dir("nifti2d");
    const Volume v(Dims3{1, 4, 4}, 1.0f);
    auto bytes = nifti::encode(v.dims, v.spacing, v.origin, nifti::kFloat32, v.values.data());
    const int16_t two = 2;
    std::memcpy(bytes.data() + 40, &two, sizeof(two));
    nifti::write_file(dir / "flat.nii", bytes);
    EXPECT_THROW(read_volume(dir / "flat.nii"), IngestionError);
    std::ofstream(dir / "junk.nii") << "not an image";
    EXPECT_THROW(read_volume(dir / "junk.nii"), IngestionError);
    std::filesystem::remove_all(dir);
}

TEST(Nifti, NonzeroLabelValuesAreForeground)
{
    const auto dir = scratch_dir("nifti_lbl");
    Volume raw(Dims3{2, 2, 2}, 0.0f);
    raw.values = {0, 2, 0, 5, 0, 0, 1, 0};
    write_volume(dir / "l.nii", raw);
    EXPECT_EQ(read_label(dir / "l.nii").values, (std::vector<uint8_t>{0, 1, 0, 1, 0, 0, 1, 0}));
    std::filesystem::remove_all(dir);
}

TEST(Affine, ZeroProbabilityAndIdentityDraw)
{
    std::mt19937_64 g(32);
    const Volume v = window_normalize(ramp({8, 8, 8}));
    const Mask3 l = random_mask(g, v.dims, 0.3);
    AugmentSpec spec;
    spec.affine_prob = 0;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto [va, la] = random_affine(v, l, spec, rng);
        EXPECT_EQ(va.values, v.values);
        EXPECT_EQ(la.values, l.values);
    }
    const auto [vi, li] = apply_affine(v, l, AffineParams{});
    EXPECT_EQ(vi.values, v.values);
    EXPECT_EQ(li.values, l.values);
}

TEST(Affine, LabelSizeChangeBoundedOverDraws)
{
    PhantomSpec ps;
    ps.shape = {32, 32, 16};
    Rng prng(33);
    const auto [img, lbl] = generate_phantom(ps, prng);
    const Volume v = window_normalize(img);
    AugmentSpec spec;
    spec.affine_prob = 1;
    spec.translation_frac = 0;
    Rng rng(34);
    const double n0 = double(count_nonzero(lbl));
    for (int i = 0; i < 100; ++i) {
        const auto [va, la] = random_affine(v, lbl, spec, rng);
        for (auto x : la.values) ASSERT_LE(x, 1);
        for (float x : va.values) {
            ASSERT_GE(x, 0.0f);
            ASSERT_LE(x, 1.0f + 1e-6f);
        }
        EXPECT_LT(std::abs(double(count_nonzero(la)) - n0) / n0, 0.35);
    }
}

TEST(Cutout, ZeroProbabilityLeavesVolume)
{
    const Volume v = ramp({16, 16, 16});
    AugmentSpec spec;
    spec.cutout_prob = 0;
    Rng rng(35);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(cutout(v, spec, rng).values, v.values);
}

TEST(Cutout, LengthRangeAndInBoundsVoxelCounts)
{
    const AugmentSpec spec;
    EXPECT_EQ(cutout_length_range(64, spec), (std::pair<int64_t, int64_t>{13, 16}));
    EXPECT_EQ(cutout_length_range(32, spec), (std::pair<int64_t, int64_t>{7, 8}));
    const Volume ones(Dims3{64, 64, 64}, 1.0f);
    Rng rng(36);
    int applied = 0, in_bounds = 0;
    for (int i = 0; i < 300; ++i) {
        Rng probe = rng;
        const auto box = draw_cutout(ones.dims, spec, probe);
        const Volume out = cutout(ones, spec, rng);
        int64_t zeros = 0;
        for (float x : out.values) zeros += x == 0.0f;
        if (!box) {
            EXPECT_EQ(zeros, 0);
            continue;
        }
        ++applied;
        EXPECT_EQ(zeros, box->voxels());
        if (box->voxels() == box->nominal[0] * box->nominal[1] * box->nominal[2]) {
            ++in_bounds;
            EXPECT_GE(zeros, 13 * 13 * 13);
            EXPECT_LE(zeros, 16 * 16 * 16);
        }
    }
    EXPECT_GT(applied, 0);
    EXPECT_GT(in_bounds, 0);
}

TEST(Cutout, CornerBoxKeepsAnOctant)
{
    const Dims3 d{64, 64, 64};
    for (int64_t len = 13; len <= 16; ++len)
        for (const auto& corner : {std::array<int64_t, 3>{0, 0, 0}, std::array<int64_t, 3>{63, 63, 63},
                                   std::array<int64_t, 3>{0, 63, 0}}) {
            const CutoutBox b = box_at(d, corner, {len, len, len});
            EXPECT_GE(8 * b.voxels(), len * len * len);
        }
}

TEST(Augment, KeepsLabelBinaryAndImageInRange)
{
    PhantomSpec ps;
    ps.shape = {24, 24, 12};
    Rng prng(37);
    const auto [img, lbl] = generate_phantom(ps, prng);
    const Volume v = window_normalize(img);
    AugmentSpec spec;
    Rng a(38), b(38);
    for (int i = 0; i < 20; ++i) {
        const auto [va, la] = augment(v, lbl, spec, a);
        const auto [vb, lb] = augment(v, lbl, spec, b);
        EXPECT_EQ(va.values, vb.values);
        EXPECT_EQ(la.values, lb.values);
        for (auto x : la.values) ASSERT_LE(x, 1);
        for (float x : va.values) {
            ASSERT_GE(x, 0.0f);
            ASSERT_LE(x, 1.0f + 1e-6f);
        }
    }
}

TEST(Folds, SizesDeterminismAndPartition)
{
    const auto s = make_folds(ids(160), 8, 7);
    for (int f = 0; f < 8; ++f) {
        EXPECT_EQ(s.fold_cases(f).size(), 20u);
        EXPECT_EQ(s.training_cases(f).size(), 140u);
        EXPECT_EQ(s.validation_cases(f).size(), 20u);
    }
    EXPECT_EQ(make_folds(ids(160), 8, 7).order, s.order);
    EXPECT_NE(make_folds(ids(160), 8, 8).order, s.order);

    for (uint64_t seed = 0; seed < 50; ++seed) {
        const int n = 5 + int(seed % 23), k = 1 + int(seed % 5);
        const auto split = make_folds(ids(n), k, seed);
        std::multiset<std::string> seen;
        for (int f = 0; f < k; ++f) {
            const auto fc = split.fold_cases(f);
            EXPECT_LE(std::abs(int(fc.size()) - n / k), 1);
            seen.insert(fc.begin(), fc.end());
            const auto tr = split.training_cases(f);
            for (const auto& id : fc) EXPECT_EQ(std::count(tr.begin(), tr.end(), id), 0);
            EXPECT_EQ(tr.size() + fc.size(), size_t(n));
        }
        const auto all = ids(n);
        EXPECT_EQ(seen, std::multiset<std::string>(all.begin(), all.end()));
    }
}

TEST(Folds, InvertedProtocolAndErrors)
{
    const auto s = make_folds(ids(160), 8, 3, 10);
    for (int f = 0; f < 8; ++f) {
        const auto tr = s.training_cases(f), va = s.validation_cases(f);
        EXPECT_EQ(tr.size(), 10u);
        EXPECT_EQ(va.size(), 150u);
        for (const auto& id : tr) EXPECT_EQ(std::count(va.begin(), va.end(), id), 0);
    }
    EXPECT_THROW(make_folds(ids(3), 4, 0), ValidationError);
    EXPECT_THROW(make_folds(ids(3), 0, 0), ValidationError);
    EXPECT_THROW(make_folds(ids(10), 2, 0, 10), ValidationError);
    EXPECT_THROW(s.training_cases(8), ValidationError);
}

TEST(Phantom, BimodalFractionAndReproducible)
{
    PhantomSpec spec;
    spec.noise_sigma_hu = 0;
    spec.distractor = false;
    for (uint64_t i = 0; i < 5; ++i) {
        const auto [img, lbl] = phantom_case(spec, 40, i);
        EXPECT_EQ(img.dims, (Dims3{64, 64, 32}));
        std::set<float> levels(img.values.begin(), img.values.end());
        EXPECT_EQ(levels, (std::set<float>{float(spec.background_hu), float(spec.foreground_hu)}));
        for (size_t k = 0; k < img.values.size(); ++k)
            EXPECT_EQ(img.values[k], lbl.values[k] ? float(spec.foreground_hu) : float(spec.background_hu));
        const double frac = double(count_nonzero(lbl)) / double(lbl.dims.count());
        EXPECT_GE(frac, 0.05);
        EXPECT_LE(frac, 0.30);
    }
    const PhantomSpec noisy;
    const auto a = phantom_case(noisy, 41, 2), b = phantom_case(noisy, 41, 2), c = phantom_case(noisy, 41, 3);
    EXPECT_EQ(a.first.values, b.first.values);
    EXPECT_EQ(a.second.values, b.second.values);
    EXPECT_NE(a.second.values, c.second.values);
    EXPECT_EQ(phantom_id(7), "phantom_0007");
}

TEST(Phantom, RejectsBadSpecs)
{
    PhantomSpec spec;
    spec.shape = {2, 8, 8};
    Rng rng(1);
    EXPECT_THROW(generate_phantom(spec, rng), ConfigError);
    spec = PhantomSpec{};
    spec.min_fraction = 0.5;
    spec.max_fraction = 0.4;
    EXPECT_THROW(generate_phantom(spec, rng), ConfigError);
}

TEST(Cache, RoundTrip)
{
    const auto dir = scratch_dir("cache");
    PreprocessSpec spec;
    spec.target_shape = {6, 5, 4};
    Volume v = preprocess(ramp({9, 9, 9}, {1, 2, 3}), spec);
    v.origin = {1, 2, 3};
    write_cache(dir / "c0", v, spec);
    const Volume r = read_cache(dir / "c0");
    EXPECT_EQ(r.dims, v.dims);
    EXPECT_EQ(r.values, v.values);
    EXPECT_EQ(r.spacing, v.spacing);
    EXPECT_TRUE(r.normalized);
    EXPECT_EQ(std::filesystem::file_size(dir / "c0.f32"), v.values.size() * sizeof(float));
    EXPECT_THROW(read_cache(dir / "missing"), IngestionError);
    std::filesystem::remove_all(dir);
}

TEST(Manifest, RoundTripAndRelativePaths)
{
    const auto dir = scratch_dir("manifest");
    const std::vector<ManifestEntry> entries = {{"a", "img/a.nii.gz", "img/a_label.nii.gz"}, {"b", "/abs/b.nii", ""}};
    write_manifest(dir / "m.csv", entries);
    const auto back = read_manifest(dir / "m.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].case_id, "a");
    EXPECT_EQ(back[0].image_path, dir / "img/a.nii.gz");
    EXPECT_EQ(back[0].label_path, dir / "img/a_label.nii.gz");
    EXPECT_EQ(back[1].image_path, std::filesystem::path("/abs/b.nii"));
    EXPECT_TRUE(back[1].label_path.empty());
    std::ofstream(dir / "bad.csv") << "id,path\n";
    EXPECT_THROW(read_manifest(dir / "bad.csv"), IngestionError);
    EXPECT_THROW(read_manifest(dir / "none.csv"), IngestionError);
    std::filesystem::remove_all(dir);
}

TEST(Rng, DerivedSeedsAreReproducibleAndDistinct)
{
    EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    std::set<uint64_t> s;
    for (uint64_t a = 0; a < 10; ++a)
        for (uint64_t b = 0; b < 10; ++b) s.insert(derive_seed(5, a, b));
    EXPECT_EQ(s.size(), 100u);
}
