#pragma once

#include <cmath>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/geometry.hpp"
#include "cpda/optim.hpp"
#include "cpda/tensor.hpp"
#include "cpda/token_grid.hpp"

namespace cpda {

// Three per-cell two-layer MLPs over the reconstructed search map:
// classification score, sub-cell offset, and box size.
struct HeadParams {
    Tensor cls_w1, cls_b1, cls_w2, cls_b2;
    Tensor off_w1, off_b1, off_w2, off_b2;
    Tensor size_w1, size_b1, size_w2, size_b2;

    static HeadParams create(const Config& cfg, ParamSet& ps, Rng& rng) {
        HeadParams p;
        const int d = cfg.embed_dim;
        auto weight = [&](const std::string& name, int rows, int cols) {
            Tensor t = ps.add(name, Tensor::zeros({rows, cols}, true));
            fill_normal(t, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
            return t;
        };
        auto bias = [&](const std::string& name, int n) {
            return ps.add(name, Tensor::zeros({n}, true));
        };
        p.cls_w1 = weight("head.cls_w1", d, d);
        p.cls_b1 = bias("head.cls_b1", d);
        p.cls_w2 = weight("head.cls_w2", d, 1);
        p.cls_b2 = bias("head.cls_b2", 1);
        p.off_w1 = weight("head.off_w1", d, d);
        p.off_b1 = bias("head.off_b1", d);
        p.off_w2 = weight("head.off_w2", d, 2);
        p.off_b2 = bias("head.off_b2", 2);
        p.size_w1 = weight("head.size_w1", d, d);
        p.size_b1 = bias("head.size_b1", d);
        p.size_w2 = weight("head.size_w2", d, 2);
        p.size_b2 = bias("head.size_b2", 2);
        return p;
    }
};

// Per-cell predictions over the G x G search grid. Cells whose token was
// pruned are forced to exactly 0 in every map (the zero-fill sentinel), so
// score argmaxes can never land on untrained placeholder cells; the raw
// logits stay available for loss composition at alive cells.
struct HeadOutputs {
    int g = 0;
    std::vector<std::uint8_t> alive;  // G*G
    Tensor cls;         // [G*G x 1], sigmoid then sentinel
    Tensor cls_logits;  // [G*G x 1], pre-sigmoid, no sentinel
    Tensor offset;      // [G*G x 2], sigmoid then sentinel
    Tensor size;        // [G*G x 2], sigmoid then sentinel
};

// Scatters the surviving search tokens back onto the spatial grid,
// zero-filling the pruned cells.
inline Tensor reconstruct_map(const TokenGrid& grid, int g) {
    std::vector<int> rows, cells;
    for (int s = 0; s < grid.alive_count(); ++s) {
        const TokenInfo& t = grid.info_at_storage(s);
        if (t.group != TokenGroup::search) continue;
        rows.push_back(s);
        cells.push_back(t.row * g + t.col);
    }
    return scatter_rows(cells, gather_rows(grid.tokens, rows), 0.0, g * g);
}

inline HeadOutputs head_forward(const HeadParams& p, const Tensor& map,
                                const std::vector<std::uint8_t>& alive, int g) {
    check_shape(map.rank() == 2 && map.rows() == g * g, "head_forward: map is not G*G rows");
    check_contract(static_cast<int>(alive.size()) == g * g, "head_forward: alive mask size mismatch");
    HeadOutputs out;
    out.g = g;
    out.alive = alive;
    std::vector<double> mask1(alive.begin(), alive.end());
    std::vector<double> mask2;
    for (std::uint8_t a : alive) {
        mask2.push_back(a);
        mask2.push_back(a);
    }
    Tensor m1 = Tensor::from_vector({g * g, 1}, mask1);
    Tensor m2 = Tensor::from_vector({g * g, 2}, mask2);
    auto mlp = [&](const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
        return add_rowwise(matmul(gelu(add_rowwise(matmul(map, w1), b1)), w2), b2);
    };
    out.cls_logits = mlp(p.cls_w1, p.cls_b1, p.cls_w2, p.cls_b2);
    out.cls = mul(sigmoid(out.cls_logits), m1);
    out.offset = mul(sigmoid(mlp(p.off_w1, p.off_b1, p.off_w2, p.off_b2)), m2);
    out.size = mul(sigmoid(mlp(p.size_w1, p.size_b1, p.size_w2, p.size_b2)), m2);
    return out;
}

// Argmax cell (earlier rows, then earlier columns, win ties) plus sub-cell
// offset and size give the box in search-crop normalized coordinates.
inline Box decode_box(const HeadOutputs& h, double* peak_score = nullptr) {
    const int g = h.g;
    int best = 0;
    double best_v = h.cls.at(static_cast<int64_t>(0));
    for (int i = 1; i < g * g; ++i)
        if (h.cls.at(static_cast<int64_t>(i)) > best_v) {
            best_v = h.cls.at(static_cast<int64_t>(i));
            best = i;
        }
    if (peak_score) *peak_score = best_v;
    const int u = best / g, v = best % g;
    Box b;
    b.cx = (v + h.offset.at(best, 0)) / g;
    b.cy = (u + h.offset.at(best, 1)) / g;
    b.w = h.size.at(best, 0);
    b.h = h.size.at(best, 1);
    return b;
}

}  // namespace cpda
