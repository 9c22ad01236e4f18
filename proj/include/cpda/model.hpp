#pragma once

#include <cstdint>
#include <vector>

#include "cpda/attention_rules.hpp"
#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/encoder.hpp"
#include "cpda/head.hpp"
#include "cpda/loss.hpp"
#include "cpda/probability.hpp"
#include "cpda/pruning.hpp"
#include "cpda/token_grid.hpp"

namespace cpda {

// Every learnable tensor of the tracker. Creation order fixes the RNG draw
// order, so a seed pins the full initialization byte for byte.
struct ModelParams {
    PatchEmbedParams embed;
    std::vector<EncoderLayerParams> layers;
    ProbabilityHeadParams prob;
    HeadParams head;

    static ModelParams create(const Config& cfg, ParamSet& ps, Rng& rng) {
        ModelParams m;
        m.embed = PatchEmbedParams::create(cfg, ps, rng);
        m.layers.reserve(static_cast<size_t>(cfg.num_layers));
        for (int i = 0; i < cfg.num_layers; ++i)
            m.layers.push_back(EncoderLayerParams::create(cfg, ps, rng, i));
        m.prob = ProbabilityHeadParams::create(cfg, ps, rng);
        m.head = HeadParams::create(cfg, ps, rng);
        return m;
    }
};

struct ForwardResult {
    TokenGrid grid;             // post-pruning grid holding the final tokens
    Tensor tokens_after_early;  // snapshot taken at the split point, before pruning
    TargetProbabilityMap pmap;
    PruneDecision prune;
    TokenPartition part;
    HeadOutputs head;
    MaskMatrix early_mask;  // over the full grid
    MaskMatrix late_mask;   // over the surviving rows
};

struct ForwardOptions {
    // Reuse the discrete decisions (peak cell, prune set, partition) of a
    // reference pass. Finite-difference audits need this: a parameter nudge
    // must change the differentiable path only.
    const ForwardResult* frozen = nullptr;
    // When set, resized to num_layers and filled with each layer's measured
    // multiply-accumulate count.
    std::vector<std::uint64_t>* layer_macs = nullptr;
};

// Full pipeline for one (initial template, dynamic template, search) triple.
// Patch tensors come from patchify(); the boxes locate the target inside each
// template crop in normalized coordinates.
inline ForwardResult model_forward(const ModelParams& m, const Config& cfg,
                                   const Tensor& patches_initial, const Tensor& patches_dynamic,
                                   const Tensor& patches_search, const Box& box_initial,
                                   const Box& box_dynamic, const ForwardOptions& opts = {}) {
    if (opts.layer_macs) opts.layer_macs->assign(static_cast<size_t>(cfg.num_layers), 0);
    auto layer_sink = [&](int i) {
        return opts.layer_macs ? &(*opts.layer_macs)[static_cast<size_t>(i)] : nullptr;
    };

    ForwardResult r;
    r.grid = embed_tokens(m.embed, cfg, patches_initial, patches_dynamic, patches_search);

    r.early_mask = build_attention_mask(Phase::early, r.grid, cfg, nullptr);
    for (int i = 0; i < cfg.split_layer; ++i)
        r.grid.tokens = encoder_layer(r.grid.tokens, r.early_mask, m.layers[static_cast<size_t>(i)],
                                      cfg.num_heads, layer_sink(i));
    r.tokens_after_early = r.grid.tokens;

    // Score the search tokens against the pooled template descriptors, then
    // aggregate into the spatial map whose peak anchors the confidence zone.
    TargetDescriptors desc = compute_descriptors(r.grid, cfg, box_initial, box_dynamic);
    r.pmap = score_tokens(m.prob, desc, r.grid);
    aggregate_probability(r.pmap, r.grid, cfg.grid_side());

    if (opts.frozen) {
        r.prune = opts.frozen->prune;
        r.part = opts.frozen->part;
        apply_pruning(r.grid, r.prune);
    } else {
        r.prune = decide_pruning(r.pmap, r.grid, cfg);
        apply_pruning(r.grid, r.prune);
        r.part = partition_tokens(r.pmap, r.grid, cfg);
    }

    r.late_mask = build_attention_mask(Phase::late, r.grid, cfg, &r.part);
    for (int i = cfg.split_layer; i < cfg.num_layers; ++i)
        r.grid.tokens = encoder_layer(r.grid.tokens, r.late_mask, m.layers[static_cast<size_t>(i)],
                                      cfg.num_heads, layer_sink(i));

    const int g = cfg.grid_side();
    r.head = head_forward(m.head, reconstruct_map(r.grid, g), live_search_map(r.grid, g), g);
    return r;
}

// Detection loss plus the (optionally weighted) supervision of the token
// scores against center-in-box labels. `gt` is the target box in normalized
// search-crop coordinates.
inline LossBreakdown tracking_loss(const ForwardResult& r, const Box& gt, const Config& cfg) {
    LossBreakdown lb = detection_loss(r.head, gt, cfg);
    if (cfg.aux_prob_loss_weight > 0.0) {
        lb.aux = probability_supervision_loss(r.pmap, r.grid, gt, cfg.grid_side());
        lb.total = add(lb.total, scale(lb.aux, cfg.aux_prob_loss_weight));
    }
    return lb;
}

}  // namespace cpda
