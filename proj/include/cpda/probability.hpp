#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/geometry.hpp"
#include "cpda/optim.hpp"
#include "cpda/tensor.hpp"
#include "cpda/token_grid.hpp"

namespace cpda {

// Per-template target descriptors: coordinate-wise max over the in-box tokens.
struct TargetDescriptors {
    Tensor from_initial;  // [D]
    Tensor from_dynamic;  // [D]
    bool fallback_initial = false;  // box selection fell back to the center cell
    bool fallback_dynamic = false;
};

// Two-layer scorer shared across search tokens: [T_I; T_D; token] -> logit.
struct ProbabilityHeadParams {
    Tensor w1, b1;  // [3D x D], [D]
    Tensor w2, b2;  // [D x 1], [1]

    static ProbabilityHeadParams create(const Config& cfg, ParamSet& ps, Rng& rng) {
        ProbabilityHeadParams p;
        const int d = cfg.embed_dim;
        p.w1 = ps.add("prob.w1", Tensor::zeros({3 * d, d}, true));
        fill_normal(p.w1, rng, 1.0 / std::sqrt(3.0 * d));
        p.b1 = ps.add("prob.b1", Tensor::zeros({d}, true));
        p.w2 = ps.add("prob.w2", Tensor::zeros({d, 1}, true));
        fill_normal(p.w2, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        p.b2 = ps.add("prob.b2", Tensor::zeros({1}, true));
        return p;
    }
};

// Target likelihood of every alive search token plus its spatial arrangement.
// The graph tensors (logits, p) feed the auxiliary supervision; the plain maps
// and the peak drive pruning/partition decisions, which are deliberately
// non-differentiable.
struct TargetProbabilityMap {
    std::vector<int> token_original;  // alive search tokens, same order as p rows
    Tensor logits;                    // [N x 1]
    Tensor p;                         // [N x 1], sigmoid(logits)
    std::vector<double> p_map;        // G*G row-major, 0 at cells with no alive token
    std::vector<double> s_map;        // G*G aggregate (3x3 zero-padded window sums)
    int center_u = 0;                 // row of the s_map argmax
    int center_v = 0;                 // col
};

inline TargetDescriptors compute_descriptors(const TokenGrid& grid, const Config& cfg,
                                             const Box& box_initial, const Box& box_dynamic) {
    const int side = cfg.template_side_tokens();
    auto pool = [&](TokenGroup g, const Box& b, bool& fallback) {
        TokenSelection sel = select_bbox_tokens(grid, g, b, side);
        fallback = sel.center_fallback;
        std::vector<int> rows;
        rows.reserve(sel.original_indices.size());
        for (int oi : sel.original_indices) rows.push_back(grid.storage_of(oi));
        return max_over_rows(gather_rows(grid.tokens, rows));
    };
    TargetDescriptors d;
    d.from_initial = pool(TokenGroup::initial_template, box_initial, d.fallback_initial);
    d.from_dynamic = pool(TokenGroup::dynamic_template, box_dynamic, d.fallback_dynamic);
    return d;
}

// Scores every alive search token. Rows follow storage order of the grid.
inline TargetProbabilityMap score_tokens(const ProbabilityHeadParams& params,
                                         const TargetDescriptors& desc, const TokenGrid& grid) {
    TargetProbabilityMap out;
    std::vector<int> rows;
    for (int s = 0; s < grid.alive_count(); ++s) {
        int oi = grid.storage_to_original[static_cast<size_t>(s)];
        if (grid.info[static_cast<size_t>(oi)].group == TokenGroup::search) {
            rows.push_back(s);
            out.token_original.push_back(oi);
        }
    }
    check_contract(!rows.empty(), "score_tokens: no alive search tokens");
    const int n = static_cast<int>(rows.size());
    Tensor x = gather_rows(grid.tokens, rows);
    Tensor inputs = concat_cols({repeat_row(desc.from_initial, n), repeat_row(desc.from_dynamic, n), x});
    Tensor hidden = gelu(add_rowwise(matmul(inputs, params.w1), params.b1));
    out.logits = add_rowwise(matmul(hidden, params.w2), params.b2);
    out.p = sigmoid(out.logits);
    return out;
}

// 3x3 zero-padded window sum. Plain accumulation in a fixed traversal order so
// an independent padded-array oracle reproduces it bit for bit.
inline std::vector<double> aggregate_map(const std::vector<double>& p_map, int g) {
    check_shape(static_cast<int>(p_map.size()) == g * g, "aggregate_map: map size mismatch");
    std::vector<double> s(static_cast<size_t>(g) * g, 0.0);
    for (int u = 0; u < g; ++u)
        for (int v = 0; v < g; ++v) {
            double acc = 0.0;
            for (int du = -1; du <= 1; ++du)
                for (int dv = -1; dv <= 1; ++dv) {
                    int uu = u + du, vv = v + dv;
                    if (uu < 0 || uu >= g || vv < 0 || vv >= g) continue;
                    acc += p_map[static_cast<size_t>(uu) * g + vv];
                }
            s[static_cast<size_t>(u) * g + v] = acc;
        }
    return s;
}

// Row-major-first argmax: earlier rows win ties, then earlier columns.
inline std::pair<int, int> argmax_of_map(const std::vector<double>& map, int g) {
    int bu = 0, bv = 0;
    double best = map[0];
    for (int u = 0; u < g; ++u)
        for (int v = 0; v < g; ++v)
            if (map[static_cast<size_t>(u) * g + v] > best) {
                best = map[static_cast<size_t>(u) * g + v];
                bu = u;
                bv = v;
            }
    return {bu, bv};
}

// Fills p_map / s_map / center from the scored tokens.
inline void aggregate_probability(TargetProbabilityMap& pmap, const TokenGrid& grid, int g) {
    pmap.p_map.assign(static_cast<size_t>(g) * g, 0.0);
    for (size_t i = 0; i < pmap.token_original.size(); ++i) {
        const TokenInfo& t = grid.info[static_cast<size_t>(pmap.token_original[i])];
        pmap.p_map[static_cast<size_t>(t.row) * g + t.col] = pmap.p.at(static_cast<int64_t>(i));
    }
    pmap.s_map = aggregate_map(pmap.p_map, g);
    auto [u, v] = argmax_of_map(pmap.s_map, g);
    pmap.center_u = u;
    pmap.center_v = v;
}

// Mean binary cross-entropy between the token scores and center-in-box labels,
// computed from logits for stability. Labels follow pmap row order.
inline Tensor probability_supervision_loss(const TargetProbabilityMap& pmap, const TokenGrid& grid,
                                           const Box& gt_box_in_search, int g) {
    const int n = static_cast<int>(pmap.token_original.size());
    std::vector<double> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const TokenInfo& t = grid.info[static_cast<size_t>(pmap.token_original[static_cast<size_t>(i)])];
        double cx = (t.col + 0.5) / g;
        double cy = (t.row + 0.5) / g;
        bool inside = cx >= gt_box_in_search.x1() && cx <= gt_box_in_search.x2() &&
                      cy >= gt_box_in_search.y1() && cy <= gt_box_in_search.y2();
        labels[static_cast<size_t>(i)] = inside ? 1.0 : 0.0;
    }
    Tensor y = Tensor::from_vector({n, 1}, labels);
    Tensor one_minus_y = Tensor::from_vector({n, 1}, std::vector<double>(labels.size(), 1.0));
    one_minus_y = sub(one_minus_y, y);
    // BCE = -(y log sigma(z) + (1-y) log sigma(-z))
    Tensor term = add(mul(y, log_sigmoid(pmap.logits)), mul(one_minus_y, log_sigmoid(neg(pmap.logits))));
    return neg(mean(term));
}

}  // namespace cpda
