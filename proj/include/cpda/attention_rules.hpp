#pragma once

#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/probability.hpp"
#include "cpda/pruning.hpp"
#include "cpda/tensor.hpp"
#include "cpda/token_grid.hpp"

namespace cpda {

// Classification of the surviving search tokens, frozen at the split layer:
// actual target (above threshold, inside the confidence zone), distractor
// (above threshold, outside), background (below threshold).
struct TokenPartition {
    std::vector<int> actual_target;  // original indices, sorted
    std::vector<int> distractor;
    std::vector<int> background;
    int center_u = 0, center_v = 0;  // confidence-zone center used
};

inline TokenPartition partition_tokens(const TargetProbabilityMap& pmap, const TokenGrid& grid,
                                       const Config& cfg) {
    TokenPartition part;
    part.center_u = pmap.center_u;
    part.center_v = pmap.center_v;
    for (size_t i = 0; i < pmap.token_original.size(); ++i) {
        const int oi = pmap.token_original[i];
        const TokenInfo& t = grid.info[static_cast<size_t>(oi)];
        if (!t.alive) continue;  // scored before pruning; dead tokens drop out
        if (pmap.p.at(static_cast<int64_t>(i)) >= cfg.target_threshold) {
            if (in_window(t.row, t.col, pmap.center_u, pmap.center_v, cfg.scz_size))
                part.actual_target.push_back(oi);
            else
                part.distractor.push_back(oi);
        } else {
            part.background.push_back(oi);
        }
    }
    return part;
}

enum class Phase { early, late };

namespace detail {

// Per-alive-token key class for mask construction.
enum class KeyClass : std::uint8_t { tmpl, target_in_zone, target_outside, background };

inline std::vector<KeyClass> classify_tokens(const TokenGrid& grid, const TokenPartition* part) {
    std::vector<KeyClass> cls(static_cast<size_t>(grid.alive_count()), KeyClass::background);
    for (int s = 0; s < grid.alive_count(); ++s)
        if (grid.info_at_storage(s).group != TokenGroup::search) cls[static_cast<size_t>(s)] = KeyClass::tmpl;
    if (part) {
        auto mark = [&](const std::vector<int>& set, KeyClass k) {
            for (int oi : set) cls[static_cast<size_t>(grid.storage_of(oi))] = k;
        };
        mark(part->actual_target, KeyClass::target_in_zone);
        mark(part->distractor, KeyClass::target_outside);
        mark(part->background, KeyClass::background);
    }
    return cls;
}

// Whether the restricted side may touch a given search token in the late
// phase, for each attention mode.
inline bool late_search_access(AttentionMode mode, KeyClass k) {
    switch (mode) {
        case AttentionMode::all_allowed: return true;
        case AttentionMode::all_blocked: return false;
        case AttentionMode::blocked_then_target:
            return k == KeyClass::target_in_zone || k == KeyClass::target_outside;
        case AttentionMode::blocked_then_target_scz:
        case AttentionMode::allowed_then_target_scz:
            return k == KeyClass::target_in_zone;
    }
    throw ConfigError("late_search_access: unhandled attention mode");
}

inline bool early_search_access(AttentionMode mode) {
    return mode == AttentionMode::all_allowed || mode == AttentionMode::allowed_then_target_scz;
}

}  // namespace detail

// Builds the query x key allowance table over alive tokens in storage order.
//
// Under the default `influence` reading, blocking "search toward template"
// removes search keys from template-query rows; search queries always see
// every alive key. Under the `attention` reading the restriction moves to the
// search-query rows' access to template keys, and template queries see
// everything.
inline MaskMatrix build_attention_mask(Phase phase, const TokenGrid& grid, const Config& cfg,
                                       const TokenPartition* part) {
    const bool needs_partition =
        phase == Phase::late && cfg.attention_mode != AttentionMode::all_allowed &&
        cfg.attention_mode != AttentionMode::all_blocked;
    if (needs_partition)
        check_contract(part != nullptr, "build_attention_mask: late phase requires a partition");

    const int n = grid.alive_count();
    std::vector<detail::KeyClass> cls = detail::classify_tokens(grid, part);
    MaskMatrix mask(n, n, false);
    for (int q = 0; q < n; ++q) {
        const bool q_is_template = cls[static_cast<size_t>(q)] == detail::KeyClass::tmpl;
        for (int k = 0; k < n; ++k) {
            const bool k_is_template = cls[static_cast<size_t>(k)] == detail::KeyClass::tmpl;
            bool allow;
            if (q_is_template == k_is_template) {
                allow = true;  // within-group attention always stays on
            } else if (cfg.arrow_reading == ArrowReading::influence) {
                if (q_is_template) {  // restricted direction: search keys into template queries
                    allow = phase == Phase::early
                                ? detail::early_search_access(cfg.attention_mode)
                                : detail::late_search_access(cfg.attention_mode, cls[static_cast<size_t>(k)]);
                } else {
                    allow = true;  // search queries read templates freely
                }
            } else {
                if (!q_is_template) {  // restricted direction: search queries onto template keys
                    allow = phase == Phase::early
                                ? detail::early_search_access(cfg.attention_mode)
                                : detail::late_search_access(cfg.attention_mode, cls[static_cast<size_t>(q)]);
                } else {
                    allow = true;  // template queries read search freely
                }
            }
            mask.set(q, k, allow);
        }
    }
    return mask;
}

}  // namespace cpda
