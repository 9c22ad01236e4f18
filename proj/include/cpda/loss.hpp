#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/geometry.hpp"
#include "cpda/head.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

// Unit-peak Gaussian heatmap target: value exp(-(du^2+dv^2)/(2 sigma^2))
// around the quantized ground-truth center cell, exactly 1 at the center.
inline std::vector<double> gaussian_heatmap(const Box& gt, int g, double sigma = 1.0) {
    const int v0 = std::clamp(static_cast<int>(gt.cx * g), 0, g - 1);
    const int u0 = std::clamp(static_cast<int>(gt.cy * g), 0, g - 1);
    std::vector<double> y(static_cast<size_t>(g) * g);
    for (int u = 0; u < g; ++u)
        for (int v = 0; v < g; ++v) {
            double d2 = static_cast<double>((u - u0) * (u - u0) + (v - v0) * (v - v0));
            y[static_cast<size_t>(u) * g + v] = std::exp(-d2 / (2.0 * sigma * sigma));
        }
    y[static_cast<size_t>(u0) * g + v0] = 1.0;
    return y;
}

// Penalty-reduced focal loss over the alive cells of the classification map,
// built from logits for stability:
//   positives (y == 1):   -(1-p)^2 log p
//   negatives:            -(1-y)^4 p^2 log(1-p)
// normalized by the number of alive positive cells (at least 1).
inline Tensor focal_loss(const Tensor& cls_logits, const std::vector<double>& target,
                         const std::vector<std::uint8_t>& alive) {
    check_shape(cls_logits.rank() == 2 && cls_logits.cols() == 1 &&
                    cls_logits.rows() == static_cast<int>(target.size()),
                "focal_loss: logits/target size mismatch");
    check_contract(target.size() == alive.size(), "focal_loss: alive mask size mismatch");
    std::vector<int> rows;
    std::vector<double> pos_mask, neg_weight;
    int n_pos = 0;
    for (size_t i = 0; i < target.size(); ++i) {
        if (!alive[i]) continue;
        rows.push_back(static_cast<int>(i));
        const bool pos = target[i] == 1.0;
        pos_mask.push_back(pos ? 1.0 : 0.0);
        const double om = 1.0 - target[i];
        neg_weight.push_back(pos ? 0.0 : om * om * om * om);
        if (pos) ++n_pos;
    }
    check_contract(!rows.empty(), "focal_loss: no alive cells");
    const int a = static_cast<int>(rows.size());
    Tensor z = gather_rows(cls_logits, rows);
    Tensor p = sigmoid(z);
    Tensor one_minus_p = add_const(neg(p), 1.0);
    Tensor pos_term = mul(Tensor::from_vector({a, 1}, pos_mask),
                          mul(mul(one_minus_p, one_minus_p), log_sigmoid(z)));
    Tensor neg_term = mul(Tensor::from_vector({a, 1}, neg_weight),
                          mul(mul(p, p), log_sigmoid(neg(z))));
    return scale(neg(add(sum(pos_term), sum(neg_term))), 1.0 / std::max(1, n_pos));
}

// Differentiable generalized-overlap loss 1 - GIoU between a predicted box
// (graph scalars) and a constant ground truth.
inline Tensor giou_loss(const Tensor& cx, const Tensor& cy, const Tensor& w, const Tensor& h,
                        const Box& gt) {
    auto c = [](double v) { return Tensor::scalar(v); };
    Tensor half_w = scale(w, 0.5), half_h = scale(h, 0.5);
    Tensor ax1 = sub(cx, half_w), ax2 = add(cx, half_w);
    Tensor ay1 = sub(cy, half_h), ay2 = add(cy, half_h);
    Tensor iw = emax(sub(emin(ax2, c(gt.x2())), emax(ax1, c(gt.x1()))), c(0.0));
    Tensor ih = emax(sub(emin(ay2, c(gt.y2())), emax(ay1, c(gt.y1()))), c(0.0));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(mul(w, h), c(gt.area())), inter);
    Tensor hull = mul(sub(emax(ax2, c(gt.x2())), emin(ax1, c(gt.x1()))),
                      sub(emax(ay2, c(gt.y2())), emin(ay1, c(gt.y1()))));
    Tensor giou_v = sub(div(inter, uni), div(sub(hull, uni), hull));
    return sub(c(1.0), giou_v);
}

struct LossBreakdown {
    Tensor total;
    Tensor cls;
    Tensor giou;  // undefined tensor when the gt cell is pruned
    Tensor l1;
    Tensor aux;  // probability-supervision term; undefined when disabled
    bool gt_cell_alive = true;
    bool degenerate_gt = false;
};

// Eq-style composite: classification + lambda_iou * (1 - GIoU) +
// lambda_l1 * L1, the regression terms taken at the ground-truth center cell.
// Every term ranges over alive cells only, so pruned cells contribute
// exactly zero gradient everywhere.
inline LossBreakdown detection_loss(const HeadOutputs& out, Box gt, const Config& cfg) {
    LossBreakdown lb;
    const int g = out.g;
    if (gt.w <= 0.0 || gt.h <= 0.0) {
        // Degenerate annotation: clamp to a single-cell box.
        lb.degenerate_gt = true;
        gt.w = std::max(gt.w, 1.0 / g);
        gt.h = std::max(gt.h, 1.0 / g);
    }
    std::vector<double> target = gaussian_heatmap(gt, g);
    lb.cls = focal_loss(out.cls_logits, target, out.alive);
    lb.total = lb.cls;

    const int v0 = std::clamp(static_cast<int>(gt.cx * g), 0, g - 1);
    const int u0 = std::clamp(static_cast<int>(gt.cy * g), 0, g - 1);
    const int cell = u0 * g + v0;
    lb.gt_cell_alive = out.alive[static_cast<size_t>(cell)] != 0;
    if (lb.gt_cell_alive) {
        Tensor off = gather_rows(out.offset, {cell});  // [1 x 2]
        Tensor sz = gather_rows(out.size, {cell});
        Tensor off_x = slice_cols(off, 0, 1), off_y = slice_cols(off, 1, 1);
        Tensor w = slice_cols(sz, 0, 1), h = slice_cols(sz, 1, 1);
        Tensor cx = scale(add_const(off_x, static_cast<double>(v0)), 1.0 / g);
        Tensor cy = scale(add_const(off_y, static_cast<double>(u0)), 1.0 / g);
        lb.giou = giou_loss(reshape(cx, {1}), reshape(cy, {1}), reshape(w, {1}), reshape(h, {1}), gt);

        // Mean absolute error over (offset_x, offset_y, w, h) at the gt cell.
        const double gt_fx = gt.cx * g - v0, gt_fy = gt.cy * g - u0;
        Tensor pred4 = concat_cols({off, sz});
        Tensor target4 = Tensor::from_vector({1, 4}, {gt_fx, gt_fy, gt.w, gt.h});
        lb.l1 = mean(absval(sub(pred4, target4)));

        lb.total = add(lb.total, add(scale(lb.giou, cfg.lambda_iou), scale(lb.l1, cfg.lambda_l1)));
    }
    return lb;
}

}  // namespace cpda
