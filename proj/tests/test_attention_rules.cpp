#include "cpda/attention_rules.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "test_util.hpp"

using namespace cpda;
using cpda_test::bare_grid;
using cpda_test::permute_search_storage;

namespace {

// Probability map over all search tokens of a bare grid, values supplied per cell.
TargetProbabilityMap map_from_cells(const TokenGrid& grid, int g,
                                    const std::vector<double>& cell_p) {
    TargetProbabilityMap pmap;
    std::vector<double> p;
    for (int oi = 0; oi < grid.total_count(); ++oi) {
        const TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        if (t.group != TokenGroup::search) continue;
        pmap.token_original.push_back(oi);
        p.push_back(cell_p[static_cast<size_t>(t.row) * g + t.col]);
    }
    pmap.p = Tensor::from_vector({static_cast<int>(p.size()), 1}, p);
    pmap.p_map = cell_p;
    pmap.s_map = aggregate_map(cell_p, g);
    auto [u, v] = argmax_of_map(pmap.s_map, g);
    pmap.center_u = u;
    pmap.center_v = v;
    return pmap;
}

bool is_template(const TokenGrid& g, int storage) {
    return g.info_at_storage(storage).group != TokenGroup::search;
}

}  // namespace

TEST(Partition, AllBelowThresholdIsAllBackground) {
    Config cfg;
    TokenGrid grid = bare_grid(2, 16, 4);
    TargetProbabilityMap pmap = map_from_cells(grid, 16, std::vector<double>(256, 0.2));
    TokenPartition part = partition_tokens(pmap, grid, cfg);
    EXPECT_TRUE(part.actual_target.empty());
    EXPECT_TRUE(part.distractor.empty());
    EXPECT_EQ(part.background.size(), 256u);
}

TEST(Partition, ZoneCoveringGridMakesEverythingActualTarget) {
    Config cfg;
    cfg.scz_size = 15;  // nearly grid-wide
    cfg.cz_size = 15;
    TokenGrid grid = bare_grid(2, 16, 4);
    TargetProbabilityMap pmap = map_from_cells(grid, 16, std::vector<double>(256, 0.9));
    pmap.center_u = 8;
    pmap.center_v = 8;  // centered zone reaches rows/cols 1..15
    TokenPartition part = partition_tokens(pmap, grid, cfg);
    // Window [1,15]x[1,15]: row/col 0 falls outside and becomes distractor.
    EXPECT_EQ(part.actual_target.size(), 225u);
    EXPECT_EQ(part.distractor.size(), 31u);
    EXPECT_TRUE(part.background.empty());

    cfg.scz_size = 16 + 15;  // larger than any distance: everything inside
    ASSERT_THROW(validate(cfg), ConfigError);  // not a legal config...
    // ...but partition_tokens itself honors whatever window it is handed:
    cfg.scz_size = 31;
    TokenPartition all = partition_tokens(pmap, grid, cfg);
    EXPECT_EQ(all.actual_target.size(), 256u);
}

TEST(Partition, TwoHighClustersSplitByZone) {
    Config cfg;  // scz_size 7 -> half window 3
    TokenGrid grid = bare_grid(2, 16, 4);
    std::vector<double> cells(256, 0.1);
    auto set_cluster = [&](int cu, int cv, double v) {
        for (int du = -1; du <= 1; ++du)
            for (int dv = -1; dv <= 1; ++dv) cells[static_cast<size_t>(cu + du) * 16 + (cv + dv)] = v;
    };
    set_cluster(8, 8, 0.95);  // dominant cluster fixes the aggregate peak
    set_cluster(2, 2, 0.9);
    TargetProbabilityMap pmap = map_from_cells(grid, 16, cells);
    EXPECT_EQ(pmap.center_u, 8);
    EXPECT_EQ(pmap.center_v, 8);
    TokenPartition part = partition_tokens(pmap, grid, cfg);
    EXPECT_EQ(part.actual_target.size(), 9u);
    EXPECT_EQ(part.distractor.size(), 9u);
    std::set<int> xat(part.actual_target.begin(), part.actual_target.end());
    for (int oi : part.actual_target) {
        const TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        EXPECT_TRUE(in_window(t.row, t.col, 8, 8, 7));
    }
    for (int oi : part.distractor) {
        const TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        EXPECT_TRUE(in_window(t.row, t.col, 2, 2, 3));
    }
}

TEST(Partition, ThresholdBoundaryIsInclusive) {
    Config cfg;
    cfg.target_threshold = 0.5;
    TokenGrid grid = bare_grid(2, 16, 4);
    std::vector<double> cells(256, 0.0);
    cells[8 * 16 + 8] = 0.5;  // exactly at the threshold
    TargetProbabilityMap pmap = map_from_cells(grid, 16, cells);
    TokenPartition part = partition_tokens(pmap, grid, cfg);
    ASSERT_EQ(part.actual_target.size(), 1u);
    const TokenInfo& t = grid.info[static_cast<size_t>(part.actual_target[0])];
    EXPECT_EQ(t.row, 8);
    EXPECT_EQ(t.col, 8);
}

TEST(Partition, DeterministicUnderStoragePermutation) {
    Config cfg;
    TokenGrid grid = bare_grid(2, 16, 4);
    std::mt19937_64 rng(91);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> cells(256);
    for (double& v : cells) v = u(rng);
    TargetProbabilityMap pmap = map_from_cells(grid, 16, cells);
    TokenPartition a = partition_tokens(pmap, grid, cfg);

    TokenGrid shuffled = permute_search_storage(grid, rng);
    TargetProbabilityMap pmap2 = map_from_cells(shuffled, 16, cells);
    // map_from_cells iterates originals, so rebuild against shuffled grid gives
    // the same (original, p) pairs; partition must agree element-wise.
    TokenPartition b = partition_tokens(pmap2, shuffled, cfg);
    EXPECT_EQ(a.actual_target, b.actual_target);
    EXPECT_EQ(a.distractor, b.distractor);
    EXPECT_EQ(a.background, b.background);
}

TEST(Mask, EarlyDefaultBlocksSearchKeysFromTemplateQueries) {
    Config cfg;
    TokenGrid grid = bare_grid(2, 4, 4);  // 8 template + 16 search tokens
    MaskMatrix m = build_attention_mask(Phase::early, grid, cfg, nullptr);
    ASSERT_EQ(m.rows, 24);
    for (int q = 0; q < 24; ++q) {
        int allowed = 0;
        for (int k = 0; k < 24; ++k) {
            bool qt = is_template(grid, q), kt = is_template(grid, k);
            bool expect = qt ? kt : true;  // template queries: template keys only
            EXPECT_EQ(m.at(q, k), expect) << q << "," << k;
            allowed += m.at(q, k);
        }
        EXPECT_GE(allowed, 1);
    }
}

TEST(Mask, LateDefaultOpensOnlyActualTargetToTemplates) {
    Config cfg;  // blocked_then_target_scz
    TokenGrid grid = bare_grid(2, 4, 4);
    TokenPartition part;
    part.actual_target = {8, 9};     // originals: search tokens begin at 8
    part.distractor = {10};
    part.background = grid.original_indices_of(TokenGroup::search);
    part.background.erase(part.background.begin(), part.background.begin() + 3);
    MaskMatrix m = build_attention_mask(Phase::late, grid, cfg, &part);
    for (int q = 0; q < m.rows; ++q)
        for (int k = 0; k < m.cols; ++k) {
            bool qt = is_template(grid, q), kt = is_template(grid, k);
            bool expect;
            if (!qt) expect = true;  // search queries unrestricted
            else if (kt) expect = true;
            else expect = k == grid.storage_of(8) || k == grid.storage_of(9);
            EXPECT_EQ(m.at(q, k), expect) << q << "," << k;
        }
}

TEST(Mask, SymmetryAuditTemplateVersusPartitionClasses) {
    Config cfg;
    TokenGrid grid = bare_grid(2, 4, 4);
    TokenPartition part;
    part.actual_target = {8};
    part.distractor = {9};
    part.background = {10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23};
    MaskMatrix m = build_attention_mask(Phase::late, grid, cfg, &part);
    int xat = grid.storage_of(8);
    for (int q = 0; q < m.rows; ++q) {
        if (!is_template(grid, q)) continue;
        // (template, actual-target): symmetric in both directions.
        EXPECT_TRUE(m.at(q, xat));
        EXPECT_TRUE(m.at(xat, q));
        // (template, non-target): template participates as key only.
        for (int oi : {9, 10}) {
            int s = grid.storage_of(oi);
            EXPECT_FALSE(m.at(q, s));
            EXPECT_TRUE(m.at(s, q));
        }
    }
}

TEST(Mask, TargetModeWithoutZoneAdmitsDistractors) {
    Config cfg;
    cfg.attention_mode = AttentionMode::blocked_then_target;
    TokenGrid grid = bare_grid(2, 4, 4);
    TokenPartition part;
    part.actual_target = {8};
    part.distractor = {9};
    part.background = {10};
    MaskMatrix m = build_attention_mask(Phase::late, grid, cfg, &part);
    int tq = 0;  // template query row
    EXPECT_TRUE(m.at(tq, grid.storage_of(8)));
    EXPECT_TRUE(m.at(tq, grid.storage_of(9)));  // distractor treated as target
    EXPECT_FALSE(m.at(tq, grid.storage_of(10)));
}

TEST(Mask, AllAllowedAndAllBlockedExtremes) {
    TokenGrid grid = bare_grid(2, 4, 4);
    Config allowed;
    allowed.attention_mode = AttentionMode::all_allowed;
    for (Phase ph : {Phase::early, Phase::late}) {
        MaskMatrix m = build_attention_mask(ph, grid, allowed, nullptr);
        for (int q = 0; q < m.rows; ++q)
            for (int k = 0; k < m.cols; ++k) EXPECT_TRUE(m.at(q, k));
    }
    Config blocked;
    blocked.attention_mode = AttentionMode::all_blocked;
    for (Phase ph : {Phase::early, Phase::late}) {
        MaskMatrix m = build_attention_mask(ph, grid, blocked, nullptr);
        for (int q = 0; q < m.rows; ++q)
            for (int k = 0; k < m.cols; ++k) {
                bool qt = is_template(grid, q), kt = is_template(grid, k);
                EXPECT_EQ(m.at(q, k), qt ? kt : true);
            }
    }
}

TEST(Mask, AttendReadingMovesRestrictionToSearchQueries) {
    Config cfg;
    cfg.arrow_reading = ArrowReading::attention;
    TokenGrid grid = bare_grid(2, 4, 4);
    MaskMatrix early = build_attention_mask(Phase::early, grid, cfg, nullptr);
    for (int q = 0; q < early.rows; ++q)
        for (int k = 0; k < early.cols; ++k) {
            bool qt = is_template(grid, q), kt = is_template(grid, k);
            // Templates unrestricted; search queries lose template keys.
            EXPECT_EQ(early.at(q, k), qt ? true : (kt ? false : true));
        }
    TokenPartition part;
    part.actual_target = {8};
    part.distractor = {9};
    part.background = {10};
    MaskMatrix late = build_attention_mask(Phase::late, grid, cfg, &part);
    int tk = 0;  // a template key column
    EXPECT_TRUE(late.at(grid.storage_of(8), tk));    // actual target reads templates
    EXPECT_FALSE(late.at(grid.storage_of(9), tk));   // distractor does not
    EXPECT_FALSE(late.at(grid.storage_of(10), tk));  // background does not
    EXPECT_TRUE(late.at(tk, grid.storage_of(10)));   // template queries unrestricted
}

TEST(Mask, LatePhaseRequiresPartitionOnlyWhenModeUsesIt) {
    TokenGrid grid = bare_grid(2, 4, 4);
    Config cfg;  // default mode references the partition
    EXPECT_THROW(build_attention_mask(Phase::late, grid, cfg, nullptr), ContractError);
    Config open;
    open.attention_mode = AttentionMode::all_allowed;
    build_attention_mask(Phase::late, grid, open, nullptr);  // no throw
    Config closed;
    closed.attention_mode = AttentionMode::all_blocked;
    build_attention_mask(Phase::late, grid, closed, nullptr);  // no throw
}

TEST(Mask, EveryQueryRowKeepsAtLeastOneKey) {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (AttentionMode mode : {AttentionMode::all_allowed, AttentionMode::all_blocked,
                               AttentionMode::blocked_then_target,
                               AttentionMode::blocked_then_target_scz,
                               AttentionMode::allowed_then_target_scz}) {
        for (ArrowReading reading : {ArrowReading::influence, ArrowReading::attention}) {
            Config cfg;
            cfg.attention_mode = mode;
            cfg.arrow_reading = reading;
            TokenGrid grid = bare_grid(2, 16, 4);
            std::vector<double> cells(256);
            for (double& v : cells) v = u(rng);
            TargetProbabilityMap pmap = map_from_cells(grid, 16, cells);
            TokenPartition part = partition_tokens(pmap, grid, cfg);
            for (Phase ph : {Phase::early, Phase::late}) {
                MaskMatrix m = build_attention_mask(ph, grid, cfg, &part);
                for (int q = 0; q < m.rows; ++q) {
                    int allowed = 0;
                    for (int k = 0; k < m.cols; ++k) allowed += m.at(q, k);
                    ASSERT_GE(allowed, 1);
                    ASSERT_TRUE(m.at(q, q));  // self always allowed
                }
            }
        }
    }
}
