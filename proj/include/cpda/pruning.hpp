#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/probability.hpp"
#include "cpda/tensor.hpp"
#include "cpda/token_grid.hpp"

namespace cpda {

// True when (row, col) lies in the size x size window centered at (cu, cv).
// Windows are clipped implicitly: callers only pass in-grid coordinates.
inline bool in_window(int row, int col, int cu, int cv, int size) {
    const int half = (size - 1) / 2;
    return std::abs(row - cu) <= half && std::abs(col - cv) <= half;
}

struct TokenScore {
    int original_index;
    int row, col;
    double p;
};

struct PruneDecision {
    std::vector<std::pair<int, int>> cz_cells;  // protected (row, col) cells, row-major order
    std::vector<int> pruned_original;           // sorted ascending
    std::vector<int> kept_original;             // sorted ascending
};

// Chooses which search tokens to drop. `contextual` protects the cz x cz
// window around the probability peak and removes the prune_count lowest-p
// tokens outside it (ties broken toward the smaller original index);
// `plain` ignores the zone; `none` keeps everything.
inline PruneDecision decide_pruning_core(const std::vector<TokenScore>& tokens, int g, int center_u,
                                         int center_v, PruningMode mode, int cz_size,
                                         int prune_count) {
    PruneDecision d;
    if (mode == PruningMode::contextual) {
        for (int u = 0; u < g; ++u)
            for (int v = 0; v < g; ++v)
                if (in_window(u, v, center_u, center_v, cz_size)) d.cz_cells.emplace_back(u, v);
    }
    std::vector<const TokenScore*> candidates;
    for (const TokenScore& t : tokens) {
        bool protected_cell = mode == PruningMode::contextual &&
                              in_window(t.row, t.col, center_u, center_v, cz_size);
        if (mode != PruningMode::none && !protected_cell) candidates.push_back(&t);
        else d.kept_original.push_back(t.original_index);
    }
    std::sort(candidates.begin(), candidates.end(), [](const TokenScore* a, const TokenScore* b) {
        if (a->p != b->p) return a->p < b->p;
        return a->original_index < b->original_index;
    });
    const size_t n_prune = std::min(static_cast<size_t>(prune_count), candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (i < n_prune) d.pruned_original.push_back(candidates[i]->original_index);
        else d.kept_original.push_back(candidates[i]->original_index);
    }
    std::sort(d.pruned_original.begin(), d.pruned_original.end());
    std::sort(d.kept_original.begin(), d.kept_original.end());
    return d;
}

// Grid-level wrapper: reads scores off the probability map. Must run on a
// grid whose search tokens are all still alive — this stage fires once.
inline PruneDecision decide_pruning(const TargetProbabilityMap& pmap, const TokenGrid& grid,
                                    const Config& cfg) {
    for (const TokenInfo& t : grid.info)
        check_contract(t.group != TokenGroup::search || t.alive,
                       "decide_pruning: grid already has pruned search tokens");
    std::vector<TokenScore> scores;
    scores.reserve(pmap.token_original.size());
    for (size_t i = 0; i < pmap.token_original.size(); ++i) {
        const int oi = pmap.token_original[i];
        const TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        scores.push_back({oi, t.row, t.col, pmap.p.at(static_cast<int64_t>(i))});
    }
    return decide_pruning_core(scores, cfg.grid_side(), pmap.center_u, pmap.center_v,
                               cfg.pruning_mode, cfg.cz_size, cfg.prune_count);
}

// Removes the pruned rows from the grid (hard removal: later layers never see
// them). Storage order of survivors is preserved.
inline void apply_pruning(TokenGrid& grid, const PruneDecision& d) {
    for (int oi : d.pruned_original) {
        TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        check_contract(t.group == TokenGroup::search, "apply_pruning: non-search token in decision");
        check_contract(t.alive, "apply_pruning: token pruned twice");
        t.alive = false;
    }
    std::vector<int> keep_rows;
    std::vector<int> new_originals;
    for (int s = 0; s < grid.alive_count(); ++s) {
        int oi = grid.storage_to_original[static_cast<size_t>(s)];
        if (grid.info[static_cast<size_t>(oi)].alive) {
            keep_rows.push_back(s);
            new_originals.push_back(oi);
        }
    }
    grid.tokens = gather_rows(grid.tokens, keep_rows);
    grid.storage_to_original = std::move(new_originals);
    std::fill(grid.original_to_storage.begin(), grid.original_to_storage.end(), -1);
    for (size_t s = 0; s < grid.storage_to_original.size(); ++s)
        grid.original_to_storage[static_cast<size_t>(grid.storage_to_original[s])] = static_cast<int>(s);
}

}  // namespace cpda
