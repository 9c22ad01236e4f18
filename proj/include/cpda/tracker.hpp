#pragma once

#include <cmath>
#include <cstdio>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/geometry.hpp"
#include "cpda/image.hpp"
#include "cpda/model.hpp"
#include "cpda/scenario.hpp"

namespace cpda {

struct Crop {
    Tensor patches;   // patchified resampled window
    CropMap map;      // crop <-> frame transform
    Box box_in_crop;  // the anchoring box in normalized crop coordinates
};

// Square window centered on `box`, side sqrt(area_factor * box area) in frame
// pixels, resampled to out_side. The same geometry serves templates and
// search regions; only the factor and output side differ.
inline Crop crop_around_box(const Image& frame, const Box& box, double area_factor, int out_side,
                            int patch_size) {
    check_data(std::isfinite(box.cx) && std::isfinite(box.cy) && std::isfinite(box.w) &&
                   std::isfinite(box.h) && box.w >= 0.0 && box.h >= 0.0,
               "crop_around_box: malformed box");
    const double wpx = box.w * frame.w, hpx = box.h * frame.h;
    double side = std::sqrt(area_factor * wpx * hpx);
    if (side < patch_size) {  // degenerate box: clamp to one patch and keep going
        if (wpx * hpx == 0.0)
            std::fprintf(stderr, "warning: crop_around_box: zero-size box clamped to one patch\n");
        side = patch_size;
    }
    Crop c;
    Image img = crop_resample(frame, box.cx * frame.w, box.cy * frame.h, side, out_side, &c.map);
    c.patches = patchify(img, patch_size);
    c.box_in_crop = c.map.frame_to_crop(box);
    return c;
}

struct TrackerState {
    const ModelParams* model = nullptr;
    Config cfg;
    Tensor patches_initial, patches_dynamic;
    Box box_initial_crop, box_dynamic_crop;  // target inside each template crop
    Box current;                             // latest frame-coordinate estimate
    int frames_since_update = 0;
};

struct TrackStep {
    Box box;        // frame coordinates, clamped to the frame
    double score;   // peak classification confidence
    bool template_updated = false;
};

inline TrackerState init_tracker(const ModelParams& model, const Config& cfg, const Image& frame0,
                                 const Box& box0) {
    TrackerState st;
    st.model = &model;
    st.cfg = cfg;
    Crop t = crop_around_box(frame0, box0, cfg.template_area_factor, cfg.template_size, cfg.patch_size);
    st.patches_initial = t.patches;
    st.box_initial_crop = t.box_in_crop;
    st.patches_dynamic = t.patches;
    st.box_dynamic_crop = t.box_in_crop;
    st.current = box0;
    return st;
}

inline TrackStep track_frame(TrackerState& st, const Image& frame,
                             ForwardResult* diag_out = nullptr) {
    const Config& cfg = st.cfg;
    Crop search = crop_around_box(frame, st.current, cfg.search_area_factor, cfg.search_size,
                                  cfg.patch_size);
    ForwardResult r = model_forward(*st.model, cfg, st.patches_initial, st.patches_dynamic,
                                    search.patches, st.box_initial_crop, st.box_dynamic_crop);
    TrackStep step;
    Box in_crop = decode_box(r.head, &step.score);
    Box b = search.map.crop_to_frame(in_crop);
    // Keep the estimate inside the frame with at least one pixel of extent so
    // the next crop stays valid: size first, then re-center.
    b.w = std::clamp(b.w, 1.0 / frame.w, 1.0);
    b.h = std::clamp(b.h, 1.0 / frame.h, 1.0);
    b.cx = std::clamp(b.cx, b.w / 2.0, 1.0 - b.w / 2.0);
    b.cy = std::clamp(b.cy, b.h / 2.0, 1.0 - b.h / 2.0);
    step.box = b;
    st.current = step.box;

    if (cfg.update_interval > 0 && ++st.frames_since_update >= cfg.update_interval &&
        step.score >= cfg.update_confidence) {
        Crop t = crop_around_box(frame, step.box, cfg.template_area_factor, cfg.template_size,
                                 cfg.patch_size);
        st.patches_dynamic = t.patches;
        st.box_dynamic_crop = t.box_in_crop;
        st.frames_since_update = 0;
        step.template_updated = true;
    }
    if (diag_out) *diag_out = std::move(r);
    return step;
}

// Runs the tracker over a sequence given the first-frame box. The returned
// list starts with that box, matching the ground-truth convention.
inline std::vector<Box> track_sequence(const ModelParams& model, const Config& cfg,
                                       const std::vector<Image>& frames, const Box& box0,
                                       std::vector<double>* scores = nullptr) {
    check_data(!frames.empty(), "track_sequence: no frames");
    TrackerState st = init_tracker(model, cfg, frames[0], box0);
    std::vector<Box> out{box0};
    if (scores) scores->push_back(1.0);
    for (size_t f = 1; f < frames.size(); ++f) {
        TrackStep step = track_frame(st, frames[f]);
        out.push_back(step.box);
        if (scores) scores->push_back(step.score);
    }
    return out;
}

struct EvalSummary {
    double average_overlap = 0.0;
    double success_rate_50 = 0.0;
    double success_rate_75 = 0.0;
    int frames = 0;
};

// Mean overlap and thresholded success rates across a sequence (the first
// frame is the given box on both sides, so it is skipped).
inline EvalSummary evaluate_tracking(const std::vector<Box>& pred, const std::vector<Box>& gt) {
    check_contract(pred.size() == gt.size(), "evaluate_tracking: prediction/gt length mismatch");
    check_contract(pred.size() >= 2, "evaluate_tracking: nothing beyond the first frame");
    EvalSummary s;
    for (size_t i = 1; i < pred.size(); ++i) {
        const double o = iou(pred[i], gt[i]);
        s.average_overlap += o;
        if (o >= 0.5) s.success_rate_50 += 1.0;
        if (o >= 0.75) s.success_rate_75 += 1.0;
        ++s.frames;
    }
    s.average_overlap /= s.frames;
    s.success_rate_50 /= s.frames;
    s.success_rate_75 /= s.frames;
    return s;
}

}  // namespace cpda
