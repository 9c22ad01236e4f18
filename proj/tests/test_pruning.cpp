#include "cpda/pruning.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "test_util.hpp"

using namespace cpda;
using cpda_test::embedded_grid;
using cpda_test::toy_config;

namespace {

std::vector<TokenScore> random_scores(int g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TokenScore> s;
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) s.push_back({r * g + c, r, c, u(rng)});
    return s;
}

// Independent reference: sort outside-zone tokens by (p, id) and take the
// lowest min(t, count).
std::set<int> oracle_pruned(const std::vector<TokenScore>& tokens, int cu, int cv, int cz, int t) {
    std::vector<TokenScore> outside;
    for (const TokenScore& tok : tokens) {
        int half = (cz - 1) / 2;
        if (std::abs(tok.row - cu) > half || std::abs(tok.col - cv) > half) outside.push_back(tok);
    }
    std::sort(outside.begin(), outside.end(), [](const TokenScore& a, const TokenScore& b) {
        return a.p != b.p ? a.p < b.p : a.original_index < b.original_index;
    });
    std::set<int> pruned;
    for (size_t i = 0; i < std::min(static_cast<size_t>(t), outside.size()); ++i)
        pruned.insert(outside[i].original_index);
    return pruned;
}

}  // namespace

TEST(Pruning, FullScaleDefaultGeometryCounts) {
    // G=16, centered zone 11x11 -> 121 protected cells; prune 128 of the
    // remaining 135; 128 alive tokens remain.
    std::mt19937_64 rng(42);
    std::vector<TokenScore> scores = random_scores(16, rng);
    PruneDecision d = decide_pruning_core(scores, 16, 8, 8, PruningMode::contextual, 11, 128);
    EXPECT_EQ(d.cz_cells.size(), 121u);
    EXPECT_EQ(d.pruned_original.size(), 128u);
    EXPECT_EQ(d.kept_original.size(), 256u - 128u);
}

TEST(Pruning, CornerCenterClipsZone) {
    // Zone at (0,0) with n=11 clips to 6x6 = 36 cells; outside = 220 >= 128.
    std::mt19937_64 rng(43);
    std::vector<TokenScore> scores = random_scores(16, rng);
    PruneDecision d = decide_pruning_core(scores, 16, 0, 0, PruningMode::contextual, 11, 128);
    EXPECT_EQ(d.cz_cells.size(), 36u);
    EXPECT_EQ(d.pruned_original.size(), 128u);
}

TEST(Pruning, ZeroCountIsANoOp) {
    std::mt19937_64 rng(44);
    std::vector<TokenScore> scores = random_scores(16, rng);
    PruneDecision d = decide_pruning_core(scores, 16, 8, 8, PruningMode::contextual, 11, 0);
    EXPECT_TRUE(d.pruned_original.empty());
    EXPECT_EQ(d.kept_original.size(), 256u);
}

TEST(Pruning, NoneModeKeepsEverything) {
    std::mt19937_64 rng(45);
    std::vector<TokenScore> scores = random_scores(8, rng);
    PruneDecision d = decide_pruning_core(scores, 8, 3, 3, PruningMode::none, 3, 10);
    EXPECT_TRUE(d.pruned_original.empty());
    EXPECT_TRUE(d.cz_cells.empty());
    EXPECT_EQ(d.kept_original.size(), 64u);
}

TEST(Pruning, PlainModeIgnoresTheZone) {
    // Put the lowest probabilities at the zone center; plain mode prunes them.
    std::vector<TokenScore> scores;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            scores.push_back({r * 4 + c, r, c, (r == 1 && c == 1) ? 0.01 : 0.9});
    PruneDecision d = decide_pruning_core(scores, 4, 1, 1, PruningMode::plain, 3, 1);
    EXPECT_EQ(d.pruned_original, (std::vector<int>{5}));
    PruneDecision dc = decide_pruning_core(scores, 4, 1, 1, PruningMode::contextual, 3, 1);
    EXPECT_EQ(std::count(dc.pruned_original.begin(), dc.pruned_original.end(), 5), 0);
}

TEST(Pruning, NeverPrunesZoneTokensMatchesOracleAllCenters) {
    std::mt19937_64 rng(46);
    const int g = 16, t = 128, cz = 11;
    int iteration = 0;
    // Exercise every possible center plus extra random repeats.
    for (int cu = 0; cu < g; ++cu)
        for (int cv = 0; cv < g; ++cv) {
            std::vector<TokenScore> scores = random_scores(g, rng);
            PruneDecision d = decide_pruning_core(scores, g, cu, cv, PruningMode::contextual, cz, t);
            std::set<int> expect = oracle_pruned(scores, cu, cv, cz, t);
            std::set<int> got(d.pruned_original.begin(), d.pruned_original.end());
            ASSERT_EQ(got, expect) << "center " << cu << "," << cv;
            for (auto [u, v] : d.cz_cells) ASSERT_EQ(got.count(u * g + v), 0u);
            ASSERT_EQ(d.kept_original.size() + d.pruned_original.size(), static_cast<size_t>(g * g));
            ++iteration;
        }
    EXPECT_EQ(iteration, 256);
}

TEST(Pruning, TieProbabilitiesBreakTowardSmallerIndex) {
    std::vector<TokenScore> scores;
    for (int i = 0; i < 16; ++i) scores.push_back({i, i / 4, i % 4, 0.5});
    // Center far corner so cells 0..? outside; zone 1x1 at (3,3) protects only id 15.
    PruneDecision d = decide_pruning_core(scores, 4, 3, 3, PruningMode::contextual, 1, 3);
    EXPECT_EQ(d.pruned_original, (std::vector<int>{0, 1, 2}));
}

TEST(Pruning, MonotoneInKeptTokenProbability) {
    std::mt19937_64 rng(47);
    for (int it = 0; it < 50; ++it) {
        std::vector<TokenScore> scores = random_scores(8, rng);
        PruneDecision d = decide_pruning_core(scores, 8, 4, 4, PruningMode::contextual, 3, 20);
        // Raise one kept outside-zone token's probability; it must stay kept.
        int target = -1;
        for (int oi : d.kept_original)
            if (!in_window(scores[static_cast<size_t>(oi)].row, scores[static_cast<size_t>(oi)].col, 4, 4, 3)) {
                target = oi;
                break;
            }
        if (target < 0) continue;
        scores[static_cast<size_t>(target)].p = std::min(1.0, scores[static_cast<size_t>(target)].p + 0.3);
        PruneDecision d2 = decide_pruning_core(scores, 8, 4, 4, PruningMode::contextual, 3, 20);
        EXPECT_TRUE(std::binary_search(d2.kept_original.begin(), d2.kept_original.end(), target));
    }
}

TEST(Pruning, ApplyCompactsRowsLikeAGather) {
    Config cfg = toy_config();
    ParamSet ps;
    TokenGrid grid = embedded_grid(cfg, ps, 61);
    std::vector<double> before = grid.tokens.data();
    const int d = cfg.embed_dim;

    PruneDecision decision;
    decision.pruned_original = {9, 12, 20};  // three search tokens (originals 8..23)
    for (int oi : grid.original_indices_of(TokenGroup::search))
        if (oi != 9 && oi != 12 && oi != 20) decision.kept_original.push_back(oi);

    std::vector<int> expect_rows;
    for (int s = 0; s < grid.alive_count(); ++s) {
        int oi = grid.storage_to_original[static_cast<size_t>(s)];
        if (oi != 9 && oi != 12 && oi != 20) expect_rows.push_back(s);
    }
    apply_pruning(grid, decision);
    grid.check_consistent();
    EXPECT_EQ(grid.alive_count(), 21);
    EXPECT_FALSE(grid.info[9].alive);
    EXPECT_TRUE(grid.info[10].alive);
    for (size_t s = 0; s < expect_rows.size(); ++s)
        for (int j = 0; j < d; ++j)
            EXPECT_EQ(grid.tokens.at(static_cast<int>(s), j),
                      before[static_cast<size_t>(expect_rows[s]) * d + j]);

    // Live map shows exactly the surviving cells.
    auto map = live_search_map(grid, cfg.grid_side());
    int alive = 0;
    for (auto v : map) alive += v;
    EXPECT_EQ(alive, 13);
}

TEST(Pruning, DoubleApplicationIsRejected) {
    Config cfg = toy_config();
    ParamSet ps;
    TokenGrid grid = embedded_grid(cfg, ps, 62);
    PruneDecision decision;
    decision.pruned_original = {10};
    apply_pruning(grid, decision);
    EXPECT_THROW(apply_pruning(grid, decision), ContractError);
}

TEST(Pruning, DecideOnPrunedGridIsRejected) {
    Config cfg = toy_config();
    ParamSet ps;
    TokenGrid grid = embedded_grid(cfg, ps, 63);
    Rng rng(6);
    ProbabilityHeadParams mlp = ProbabilityHeadParams::create(cfg, ps, rng);
    Box full{0.5, 0.5, 1.0, 1.0};
    TargetProbabilityMap pmap = score_tokens(mlp, compute_descriptors(grid, cfg, full, full), grid);
    aggregate_probability(pmap, grid, cfg.grid_side());
    PruneDecision d = decide_pruning(pmap, grid, cfg);
    EXPECT_EQ(d.pruned_original.size(), 4u);
    apply_pruning(grid, d);
    EXPECT_THROW(decide_pruning(pmap, grid, cfg), ContractError);
}

TEST(Pruning, PruneAllButZoneBoundary)
{
    // t = N_X - |zone| exactly: survivors are the zone cells alone.
    std::mt19937_64 rng(48);
    std::vector<TokenScore> scores = random_scores(8, rng);
    PruneDecision d = decide_pruning_core(scores, 8, 4, 4, PruningMode::contextual, 3, 64 - 9);
    EXPECT_EQ(d.pruned_original.size(), 55u);
    std::set<int> kept(d.kept_original.begin(), d.kept_original.end());
    for (auto [u, v] : d.cz_cells) EXPECT_EQ(kept.count(u * 8 + v), 1u);
    EXPECT_EQ(kept.size(), 9u);
}
