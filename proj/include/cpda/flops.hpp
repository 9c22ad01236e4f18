#pragma once

#include <cstdint>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"

namespace cpda {

// Multiply-accumulate count of one encoder layer over n tokens of width d:
// q/k/v/out projections (4 n d^2), attention scores and mixing (2 n^2 d),
// and the 4x feed-forward pair (8 n d^2). Exactly the matmuls the layer runs,
// so the measured counter must reproduce these numbers to the digit.
inline std::uint64_t layer_macs_analytic(int n, int d) {
    const std::uint64_t un = static_cast<std::uint64_t>(n), ud = static_cast<std::uint64_t>(d);
    return 4 * un * ud * ud + 2 * un * un * ud + 8 * un * ud * ud;
}

// Tokens removed by a centered confidence zone: everything outside the zone
// is a candidate, capped by the configured count. Border clipping can only
// enlarge the candidate set, so this is the steady-state (zone fully inside)
// figure.
inline int expected_pruned_count(const Config& cfg) {
    if (cfg.pruning_mode == PruningMode::none) return 0;
    const int g = cfg.grid_side();
    int candidates = cfg.num_search_tokens();
    if (cfg.pruning_mode == PruningMode::contextual) {
        const int zone = std::min(cfg.cz_size, g);
        candidates -= zone * zone;
    }
    return std::min(cfg.prune_count, candidates);
}

struct FlopReport {
    int tokens_full = 0;  // token count before pruning
    int tokens_late = 0;  // token count after pruning
    std::vector<std::uint64_t> per_layer;
    std::uint64_t total = 0;
    std::uint64_t total_unpruned = 0;  // every layer at the full token count
    double saved_fraction = 0.0;       // 1 - total / total_unpruned
};

inline FlopReport analyze_flops(const Config& cfg, int pruned_count) {
    check_config(pruned_count >= 0 && pruned_count < cfg.num_search_tokens(),
                 "analyze_flops: pruned count out of range");
    FlopReport rep;
    rep.tokens_full = 2 * cfg.num_template_tokens() + cfg.num_search_tokens();
    rep.tokens_late = rep.tokens_full - pruned_count;
    for (int i = 0; i < cfg.num_layers; ++i) {
        const int n = i < cfg.split_layer ? rep.tokens_full : rep.tokens_late;
        rep.per_layer.push_back(layer_macs_analytic(n, cfg.embed_dim));
        rep.total += rep.per_layer.back();
    }
    rep.total_unpruned =
        static_cast<std::uint64_t>(cfg.num_layers) * layer_macs_analytic(rep.tokens_full, cfg.embed_dim);
    rep.saved_fraction = 1.0 - static_cast<double>(rep.total) / static_cast<double>(rep.total_unpruned);
    return rep;
}

}  // namespace cpda
