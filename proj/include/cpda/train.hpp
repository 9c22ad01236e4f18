#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cpda/checkpoint.hpp"
#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/model.hpp"
#include "cpda/optim.hpp"
#include "cpda/scenario.hpp"
#include "cpda/tracker.hpp"

namespace cpda {

// One training tuple: both template crops, a jittered search crop, and the
// target's location inside each of them.
struct TrainSample {
    Tensor patches_initial, patches_dynamic, patches_search;
    Box box_initial, box_dynamic;
    Box gt_in_search;
};

// Deterministic pool of synthetic sequences that training tuples are drawn
// from. Everything derives from the one seed, so a rerun replays the exact
// sample stream.
class SampleStream {
  public:
    SampleStream(const Config& cfg, int pool_size, int frames_each)
        : cfg_(cfg), rng_(cfg.seed) {
        check_config(pool_size > 0 && frames_each >= 2, "sample stream: pool too small");
        const char* presets[] = {"static", "linear", "crossing"};
        for (int i = 0; i < pool_size; ++i) {
            ScenarioSpec spec = preset_scenario(presets[i % 3], rng_());
            spec.num_frames = frames_each;
            spec.target_size = 14 + static_cast<int>(rng_() % 9);  // 14..22 px
            jitter_waypoints(spec.target_path);
            for (Waypoints& w : spec.distractor_paths) jitter_waypoints(w);
            if (!spec.distractor_paths.empty())
                spec.distractor_similarity = 0.6 + 0.35 * uniform();
            pool_.push_back(generate_scenario(spec));
        }
    }

    TrainSample next() {
        const Scenario& sc = pool_[static_cast<size_t>(rng_() % pool_.size())];
        const size_t n = sc.frames.size();
        const size_t fi = rng_() % n, fk = rng_() % n, fj = rng_() % n;

        TrainSample s;
        Crop ti = crop_around_box(sc.frames[fi], sc.gt[fi], cfg_.template_area_factor,
                                  cfg_.template_size, cfg_.patch_size);
        Crop tk = crop_around_box(sc.frames[fk], sc.gt[fk], cfg_.template_area_factor,
                                  cfg_.template_size, cfg_.patch_size);
        s.patches_initial = ti.patches;
        s.box_initial = ti.box_in_crop;
        s.patches_dynamic = tk.patches;
        s.box_dynamic = tk.box_in_crop;

        // Anchor the search crop on a perturbed ground truth so the target
        // lands off-center with varying scale, like it does when tracking.
        Box anchor = sc.gt[fj];
        anchor.cx += 0.08 * (2.0 * uniform() - 1.0);
        anchor.cy += 0.08 * (2.0 * uniform() - 1.0);
        const double zoom = std::exp(0.2 * (2.0 * uniform() - 1.0));
        anchor.w *= zoom;
        anchor.h *= zoom;
        Crop search = crop_around_box(sc.frames[fj], anchor, cfg_.search_area_factor,
                                      cfg_.search_size, cfg_.patch_size);
        s.patches_search = search.patches;
        s.gt_in_search = search.map.frame_to_crop(sc.gt[fj]);
        return s;
    }

  private:
    void jitter_waypoints(Waypoints& w) {
        for (auto& [x, y] : w) {
            x = std::clamp(x + 12.0 * (2.0 * uniform() - 1.0), 14.0, 82.0);
            y = std::clamp(y + 12.0 * (2.0 * uniform() - 1.0), 14.0, 82.0);
        }
    }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    Config cfg_;
    Rng rng_;
    std::vector<Scenario> pool_;
};

struct TrainOptions {
    std::string curve_path;       // per-step CSV: step,loss,lr
    std::string checkpoint_path;  // written once after the final step
    std::string diagnostic_path;  // one JSON line on numerical failure
    int pool_size = 24;
    int frames_per_scenario = 6;
};

struct TrainReport {
    std::vector<double> losses;  // batch-mean total loss per step
    std::vector<double> lrs;
    int steps = 0;
};

// Step-decay schedule: the base rate until `lr_decay_frac` of the run is
// done, then multiplied by `lr_decay_factor`.
inline double scheduled_lr(const Config& cfg, int step) {
    const int boundary = static_cast<int>(cfg.train_steps * cfg.lr_decay_frac);
    return step >= boundary ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
}

inline TrainReport train_model(ModelParams& model, ParamSet& ps, const Config& cfg,
                               const TrainOptions& opts = {}) {
    check_config(cfg.train_steps > 0 && cfg.batch_size > 0, "train: empty schedule");
    SampleStream stream(cfg, opts.pool_size, opts.frames_per_scenario);
    AdamW::Options oo;
    oo.lr = cfg.lr;
    oo.weight_decay = cfg.weight_decay;
    AdamW opt(ps, oo);

    std::ofstream curve;
    if (!opts.curve_path.empty()) {
        curve.open(opts.curve_path);
        check_data(curve.good(), "train: cannot open curve file " + opts.curve_path);
        curve << "step,loss,lr\n";
    }

    TrainReport rep;
    for (int step = 0; step < cfg.train_steps; ++step) {
        const double lr = scheduled_lr(cfg, step);
        opt.set_lr(lr);
        double batch_loss = 0.0;
        try {
            for (int b = 0; b < cfg.batch_size; ++b) {
                TrainSample s = stream.next();
                ForwardResult r = model_forward(model, cfg, s.patches_initial, s.patches_dynamic,
                                                s.patches_search, s.box_initial, s.box_dynamic);
                Tensor loss = scale(tracking_loss(r, s.gt_in_search, cfg).total,
                                    1.0 / cfg.batch_size);
                loss.backward();  // accumulates over the batch
                batch_loss += loss.value();
            }
            opt.step();
        } catch (const NumericalError& e) {
            if (!opts.diagnostic_path.empty()) {
                std::ofstream diag(opts.diagnostic_path);
                char line[512];
                std::snprintf(line, sizeof line,
                              "{\"event\":\"numerical_failure\",\"step\":%d,\"lr\":%.17g,\"what\":\"%s\"}\n",
                              step, lr, e.what());
                diag << line;
            }
            throw;
        }
        rep.losses.push_back(batch_loss);
        rep.lrs.push_back(lr);
        ++rep.steps;
        if (curve.is_open()) {
            char row[128];
            std::snprintf(row, sizeof row, "%d,%.17g,%.17g\n", step, batch_loss, lr);
            curve << row;
        }
    }
    if (curve.is_open()) check_data(curve.good(), "train: curve write failed");
    if (!opts.checkpoint_path.empty()) ckpt::save(opts.checkpoint_path, ps);
    return rep;
}

}  // namespace cpda
