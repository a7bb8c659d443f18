#include "lms/edt.hpp"
#include "lms/support.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace lms;

TEST(Edt, ThreeFourFive)
{
    GridMeta m{{6, 6, 2}, {1, 1, 1}};
    std::vector<VoxelIndex> mask{0};
    auto d = edt(m, mask);
    EXPECT_EQ(d.at(3, 4, 0), 5.0);
    EXPECT_EQ(d.at(0, 0, 0), 0.0);
}

TEST(Edt, AnisotropicSpacing)
{
    GridMeta m{{4, 4, 4}, {2, 1, 1}};
    std::vector<VoxelIndex> mask{0};
    auto d = edt(m, mask);
    EXPECT_EQ(d.at(1, 0, 0), 2.0);
    EXPECT_EQ(d.at(0, 1, 0), 1.0);
}

TEST(Edt, EmptyMaskIsError)
{
    GridMeta m{{4, 4, 4}, {1, 1, 1}};
    std::vector<std::uint8_t> mask(64, 0);
    EXPECT_THROW(edt(m, mask), Error);
}

TEST(Edt, MatchesBruteForceOnRandomMasks)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        GridMeta m{{2 + rng() % 19, 2 + rng() % 19, 2 + rng() % 19}, {1, 1, 1}};
        auto mask = oracle::random_mask(m, 1 + int(rng() % 200), rng);
        auto want = oracle::edt_squared(m, mask);
        auto got = edt_squared(m, std::span<const std::uint8_t>(mask));
        for (std::size_t i = 0; i < want.size(); ++i)
            ASSERT_EQ(got[i], want[i]) << "trial " << trial << " voxel " << i;
    }
}

TEST(Edt, AnisotropicMatchesBruteForce)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        GridMeta m{{3 + rng() % 10, 3 + rng() % 10, 3 + rng() % 10}, {0.5 + (rng() % 4) * 0.5, 1.0, 1.5 + (rng() % 3)}};
        auto mask = oracle::random_mask(m, 1 + int(rng() % 20), rng);
        auto want = oracle::edt_squared(m, mask);
        auto got = edt_squared(m, std::span<const std::uint8_t>(mask));
        for (std::size_t i = 0; i < want.size(); ++i)
            ASSERT_NEAR(got[i], want[i], 1e-9 * (1 + want[i]));
    }
}

TEST(Edt, ThreadCountDoesNotChangeOutput)
{
    std::mt19937_64 rng(3);
    GridMeta m{{23, 17, 19}, {1, 1, 1}};
    auto mask = oracle::random_mask(m, 40, rng);
    EXPECT_EQ(edt_squared(m, std::span<const std::uint8_t>(mask), 1), edt_squared(m, std::span<const std::uint8_t>(mask), 4));
}

namespace {

std::vector<LabelVolume> random_training(int n, std::uint64_t seed, GridMeta m = {{16, 16, 16}, {1, 1, 1}})
{
    std::mt19937_64 rng(seed);
    std::vector<LabelVolume> out;
    for (int i = 0; i < n; ++i)
        out.push_back(oracle::random_blobs(m, 5, 200, rng));
    return out;
}

} // namespace

TEST(SupportMap, IdenticalVolumesCountTwice)
{
    LabelVolume v(GridMeta{{4, 4, 4}, {1, 1, 1}}, 0);
    v[10] = 3;
    std::vector<LabelVolume> vols{v, v};
    auto s = build_support_map(vols);
    EXPECT_EQ(s.n_train(), 2u);
    EXPECT_EQ(s.count(3, 10), 2u);
    EXPECT_EQ(s.count(3, 11), 0u);
    EXPECT_EQ(s.count(0, 11), 2u);
}

TEST(SupportMap, SingleVolumeIsOneHot)
{
    auto vols = random_training(1, 5);
    auto s = build_support_map(vols);
    for (Label l : s.label_table())
        for (std::size_t i = 0; i < vols[0].size(); ++i)
            ASSERT_EQ(s.count(l, static_cast<VoxelIndex>(i)), vols[0][i] == l ? 1u : 0u);
}

TEST(SupportMap, ColumnSumsEqualTrainingCount)
{
    auto vols = random_training(5, 9);
    auto s = build_support_map(vols, 4);
    auto dense = oracle::dense_support(vols);
    ASSERT_EQ(s.label_table().size(), dense.size());
    std::vector<int> column(vols[0].size(), 0);
    for (Label l : s.label_table()) {
        for (std::size_t i = 0; i < column.size(); ++i) {
            ASSERT_EQ(s.count(l, static_cast<VoxelIndex>(i)), static_cast<std::uint32_t>(dense[l][i]));
            column[i] += static_cast<int>(s.count(l, static_cast<VoxelIndex>(i)));
        }
    }
    for (int c : column)
        ASSERT_EQ(c, 5);
}

TEST(SupportMap, GridMismatchNamesVolume)
{
    std::vector<LabelVolume> vols{LabelVolume(GridMeta{{4, 4, 4}, {1, 1, 1}}), LabelVolume(GridMeta{{4, 4, 5}, {1, 1, 1}})};
    try {
        build_support_map(vols);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::incompatible_grid);
        EXPECT_NE(std::string(e.what()).find("#1"), std::string::npos);
    }
}

TEST(SupportMap, ThreadCountDoesNotChangeResult)
{
    auto vols = random_training(4, 21);
    EXPECT_EQ(build_support_map(vols, 1), build_support_map(vols, 4));
}

TEST(SupportMap, BundleRoundTrip)
{
    auto vols = random_training(3, 4);
    auto s = build_support_map(vols);
    auto dir = std::filesystem::temp_directory_path() / "lms_support_bundle";
    std::filesystem::remove_all(dir);
    save_support_map(s, dir);
    EXPECT_EQ(load_support_map(dir), s);

    // Corrupting a blob is caught by its digest.
    auto blob = dir / ("label_" + std::to_string(s.label_table().back()) + ".bin");
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put(char(0x7f));
    f.close();
    EXPECT_THROW(load_support_map(dir), Error);
}

TEST(FuzzyPrior, NormalisedValues)
{
    LabelVolume a(GridMeta{{2, 1, 1}, {1, 1, 1}}, 0), b = a;
    a[0] = 1;
    b[0] = 1;
    std::vector<LabelVolume> vols{a, b, LabelVolume(a.meta()), LabelVolume(a.meta())};
    auto s = build_support_map(vols);
    auto p = fuzzy_prior(s, 1);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.0);
    EXPECT_THROW(fuzzy_prior(s, 42), Error);
}

TEST(FuzzyPrior, SumsToOneEverywhere)
{
    auto vols = random_training(6, 17);
    auto s = build_support_map(vols);
    std::vector<double> sum(vols[0].size(), 0.0);
    for (Label l : s.label_table()) {
        auto p = fuzzy_prior(s, l);
        for (std::size_t i = 0; i < sum.size(); ++i)
            sum[i] += p[i];
    }
    for (double v : sum)
        ASSERT_NEAR(v, 1.0, 1e-6);
}

TEST(FudgedPrior, BothBranches)
{
    GridMeta m{{4, 1, 1}, {1, 1, 1}};
    LabelVolume on(m, 0), off(m, 0);
    on[0] = 1;
    std::vector<LabelVolume> vols{on, on, off, off};
    auto s = build_support_map(vols);
    auto f = fudged_prior(s, 1);
    EXPECT_EQ(f.field[0], 0.5);
    EXPECT_NEAR(f.field[1], std::exp(-1.0) / 4, 1e-12);
    EXPECT_NEAR(f.field[1], 0.091970, 1e-6);
    EXPECT_LT(f.field[1], 0.25);
}

TEST(FudgedPrior, MatchesIndependentEvaluationAndDecays)
{
    auto vols = random_training(3, 8);
    auto s = build_support_map(vols);
    auto dense = oracle::dense_support(vols);
    for (Label l : s.label_table()) {
        auto f = fudged_prior(s, l);
        auto want = oracle::fudged(s.meta(), dense[l], 3);
        for (std::size_t i = 0; i < want.size(); ++i) {
            ASSERT_GT(f.field[i], 0.0);
            ASSERT_NEAR(f.field[i], want[i], 1e-15);
        }
    }
    // Monotone in oracle distance for zero-support voxels.
    Label l = s.label_table()[1];
    std::vector<std::uint8_t> mask(dense[l].size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = dense[l][i] > 0;
    auto dist = oracle::edt_squared(s.meta(), mask);
    auto f = fudged_prior(s, l);
    for (std::size_t i = 0; i < mask.size(); ++i)
        for (std::size_t j = i + 1; j < mask.size(); j += 37)
            if (!mask[i] && !mask[j] && dist[i] < dist[j])
                ASSERT_GT(f.field[i], f.field[j]);
}

TEST(FudgedPrior, SeparationInsideSupport)
{
    auto vols = random_training(4, 31);
    auto s = build_support_map(vols);
    std::vector<FudgedPrior> priors;
    for (Label l : s.label_table())
        priors.push_back(fudged_prior(s, l));
    for (std::size_t a = 0; a < priors.size(); ++a)
        for (const auto& e : s.entries(priors[a].label)) {
            EXPECT_GE(priors[a].field[e.voxel], 1.0 / 4);
            for (std::size_t b = 0; b < priors.size(); ++b)
                if (b != a && s.count(priors[b].label, e.voxel) == 0)
                    ASSERT_LT(priors[b].field[e.voxel], 1.0 / 4);
        }
}

TEST(FudgedPrior, UnknownLabelIsError)
{
    auto vols = random_training(1, 2);
    auto s = build_support_map(vols);
    EXPECT_THROW(fudged_prior(s, 999), Error);
}
