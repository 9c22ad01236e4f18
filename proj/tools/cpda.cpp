// Command-line front end: synthetic data generation, training, tracking,
// evaluation, compute accounting, and forward-pass inspection dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpda/checkpoint.hpp"
#include "cpda/config.hpp"
#include "cpda/dump.hpp"
#include "cpda/flops.hpp"
#include "cpda/model.hpp"
#include "cpda/scenario.hpp"
#include "cpda/tracker.hpp"
#include "cpda/train.hpp"

namespace {

using nlohmann::json;

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> overrides;

    cpda::Config resolve() const {
        cpda::Config cfg;
        if (!config_file.empty()) cfg = cpda::load_config_file(config_file);
        for (const std::string& kv : overrides) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw cpda::ConfigError("override must be key=value: " + kv);
            cpda::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        cpda::validate(cfg);
        return cfg;
    }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_file, "key=value config file");
    cmd->add_option("--set", args.overrides, "config override, key=value (repeatable)");
}

// Shared by the dump commands: run one forward pass on a synthetic frame.
cpda::ForwardResult synthetic_forward(const cpda::Config& cfg, std::uint64_t seed,
                                      cpda::ModelParams& model) {
    cpda::ScenarioSpec spec = cpda::preset_scenario("crossing", seed);
    spec.num_frames = 3;
    cpda::Scenario sc = cpda::generate_scenario(spec);
    cpda::TrackerState st = cpda::init_tracker(model, cfg, sc.frames[0], sc.gt[0]);
    cpda::ForwardResult r;
    cpda::track_frame(st, sc.frames[1], &r);
    return r;
}

int cmd_gen(const std::string& preset, std::uint64_t seed, int frames, int target_size,
            double similarity, const std::string& out_dir) {
    cpda::ScenarioSpec spec = cpda::preset_scenario(preset, seed);
    spec.num_frames = frames;
    if (target_size > 0) spec.target_size = target_size;
    if (similarity >= 0.0) spec.distractor_similarity = similarity;
    cpda::Scenario sc = cpda::generate_scenario(spec);
    cpda::write_sequence(out_dir, sc);
    json meta{{"preset", preset},
              {"seed", seed},
              {"frames", frames},
              {"width", spec.width},
              {"height", spec.height},
              {"target_size", spec.target_size},
              {"distractor_similarity", spec.distractor_similarity}};
    std::ofstream mf(std::filesystem::path(out_dir) / "meta.json");
    mf << meta.dump() << "\n";
    std::printf("wrote %d frames to %s\n", frames, out_dir.c_str());
    return 0;
}

int cmd_train(const ConfigArgs& cargs, const std::string& out_ckpt, const std::string& curve,
              const std::string& diag) {
    cpda::Config cfg = cargs.resolve();
    cpda::ParamSet ps;
    cpda::Rng rng(cfg.seed);
    cpda::ModelParams model = cpda::ModelParams::create(cfg, ps, rng);
    cpda::TrainOptions opts;
    opts.checkpoint_path = out_ckpt;
    opts.curve_path = curve;
    opts.diagnostic_path = diag;
    cpda::TrainReport rep = cpda::train_model(model, ps, cfg, opts);
    if (rep.losses.empty())
        std::printf("trained 0 steps\n");
    else
        std::printf("trained %d steps, first loss %.6f, last loss %.6f\n", rep.steps,
                    rep.losses.front(), rep.losses.back());
    return 0;
}

int cmd_track(const ConfigArgs& cargs, const std::string& ckpt_path, const std::string& seq_dir,
              const std::string& out_csv, const std::string& diag) {
    cpda::Config cfg = cargs.resolve();
    cpda::ParamSet ps;
    cpda::Rng rng(cfg.seed);
    cpda::ModelParams model = cpda::ModelParams::create(cfg, ps, rng);
    if (!ckpt_path.empty()) cpda::ckpt::load(ckpt_path, ps);
    cpda::Scenario sc = cpda::read_sequence(seq_dir);

    std::ofstream diag_out;
    if (!diag.empty()) {
        diag_out.open(diag);
        cpda::check_data(diag_out.good(), "track: cannot open diagnostic file " + diag);
    }

    cpda::TrackerState st = cpda::init_tracker(model, cfg, sc.frames[0], sc.gt[0]);
    std::vector<cpda::Box> boxes{sc.gt[0]};
    for (size_t f = 1; f < sc.frames.size(); ++f) {
        cpda::ForwardResult r;
        cpda::TrackStep step = cpda::track_frame(st, sc.frames[f], &r);
        boxes.push_back(step.box);
        if (diag_out.is_open()) {
            json line{{"frame", f},
                      {"score", step.score},
                      {"cx", step.box.cx},
                      {"cy", step.box.cy},
                      {"w", step.box.w},
                      {"h", step.box.h},
                      {"pruned", r.prune.pruned_original.size()},
                      {"target_tokens", r.part.actual_target.size()},
                      {"distractor_tokens", r.part.distractor.size()},
                      {"template_updated", step.template_updated}};
            diag_out << line.dump() << "\n";
        }
    }

    std::ofstream csv(out_csv);
    cpda::check_data(csv.good(), "track: cannot open output " + out_csv);
    csv << "frame,cx,cy,w,h\n";
    char row[256];
    for (size_t i = 0; i < boxes.size(); ++i) {
        std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, boxes[i].cx, boxes[i].cy,
                      boxes[i].w, boxes[i].h);
        csv << row;
    }
    cpda::check_data(csv.good(), "track: output write failed");
    std::printf("tracked %zu frames into %s\n", sc.frames.size(), out_csv.c_str());
    return 0;
}

std::vector<cpda::Box> read_boxes_csv(const std::string& path) {
    std::ifstream in(path);
    cpda::check_data(in.good(), "eval: cannot open " + path);
    std::string line;
    cpda::check_data(static_cast<bool>(std::getline(in, line)) && line.rfind("frame,", 0) == 0,
                     "eval: bad csv header in " + path);
    std::vector<cpda::Box> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t idx;
        cpda::Box b;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &idx, &b.cx, &b.cy, &b.w, &b.h) != 5)
            throw cpda::DataError("eval: malformed row in " + path + ": " + line);
        out.push_back(b);
    }
    return out;
}

int cmd_eval(const std::string& pred_csv, const std::string& seq_dir, bool as_json) {
    std::vector<cpda::Box> pred = read_boxes_csv(pred_csv);
    std::vector<cpda::Box> gt =
        read_boxes_csv((std::filesystem::path(seq_dir) / "groundtruth.csv").string());
    if (pred.size() != gt.size())
        throw cpda::DataError("eval: prediction and ground truth differ in length");
    cpda::EvalSummary s = cpda::evaluate_tracking(pred, gt);
    if (as_json) {
        json j{{"frames", s.frames},
               {"average_overlap", s.average_overlap},
               {"success_rate_50", s.success_rate_50},
               {"success_rate_75", s.success_rate_75}};
        std::printf("%s\n", j.dump().c_str());
    } else {
        std::printf("frames=%d average_overlap=%.4f success_rate_50=%.4f success_rate_75=%.4f\n",
                    s.frames, s.average_overlap, s.success_rate_50, s.success_rate_75);
    }
    return 0;
}

int cmd_bench(const ConfigArgs& cargs, bool measure, bool as_json) {
    cpda::Config cfg = cargs.resolve();
    const int pruned = cpda::expected_pruned_count(cfg);
    cpda::FlopReport rep = cpda::analyze_flops(cfg, pruned);

    std::vector<std::uint64_t> measured;
    if (measure) {
        cpda::ParamSet ps;
        cpda::Rng rng(cfg.seed);
        cpda::ModelParams model = cpda::ModelParams::create(cfg, ps, rng);
        cpda::ScenarioSpec spec = cpda::preset_scenario("crossing", cfg.seed);
        spec.num_frames = 3;
        cpda::Scenario sc = cpda::generate_scenario(spec);
        cpda::Crop t = cpda::crop_around_box(sc.frames[0], sc.gt[0], cfg.template_area_factor,
                                             cfg.template_size, cfg.patch_size);
        cpda::Crop s = cpda::crop_around_box(sc.frames[1], sc.gt[0], cfg.search_area_factor,
                                             cfg.search_size, cfg.patch_size);
        cpda::ForwardOptions fo;
        fo.layer_macs = &measured;
        cpda::model_forward(model, cfg, t.patches, t.patches, s.patches, t.box_in_crop,
                            t.box_in_crop, fo);
    }

    if (as_json) {
        json j{{"tokens_full", rep.tokens_full},
               {"tokens_late", rep.tokens_late},
               {"pruned", pruned},
               {"per_layer", rep.per_layer},
               {"total", rep.total},
               {"total_unpruned", rep.total_unpruned},
               {"saved_fraction", rep.saved_fraction}};
        if (measure) j["measured_per_layer"] = measured;
        std::printf("%s\n", j.dump().c_str());
        return 0;
    }
    std::printf("field,value\n");
    std::printf("tokens_full,%d\n", rep.tokens_full);
    std::printf("tokens_late,%d\n", rep.tokens_late);
    std::printf("pruned,%d\n", pruned);
    for (size_t i = 0; i < rep.per_layer.size(); ++i)
        std::printf("layer_macs_%zu,%llu\n", i, static_cast<unsigned long long>(rep.per_layer[i]));
    for (size_t i = 0; i < measured.size(); ++i)
        std::printf("measured_macs_%zu,%llu\n", i, static_cast<unsigned long long>(measured[i]));
    std::printf("total,%llu\n", static_cast<unsigned long long>(rep.total));
    std::printf("total_unpruned,%llu\n", static_cast<unsigned long long>(rep.total_unpruned));
    std::printf("saved_fraction,%.17g\n", rep.saved_fraction);
    return 0;
}

int cmd_dump_masks(const ConfigArgs& cargs, std::uint64_t seed, const std::string& prefix) {
    cpda::Config cfg = cargs.resolve();
    cpda::ParamSet ps;
    cpda::Rng rng(cfg.seed);
    cpda::ModelParams model = cpda::ModelParams::create(cfg, ps, rng);
    cpda::ForwardResult r = synthetic_forward(cfg, seed, model);
    cpda::write_mask_bitset(prefix + ".early.mask", r.early_mask);
    cpda::write_mask_bitset(prefix + ".late.mask", r.late_mask);
    cpda::write_token_report(prefix + ".tokens.csv", r, cfg);
    std::printf("early mask %dx%d, late mask %dx%d\n", r.early_mask.rows, r.early_mask.cols,
                r.late_mask.rows, r.late_mask.cols);
    std::printf("tokens: %d alive of %d; pruned %zu; target %zu, distractor %zu, background %zu\n",
                r.grid.alive_count(), r.grid.total_count(), r.prune.pruned_original.size(),
                r.part.actual_target.size(), r.part.distractor.size(), r.part.background.size());
    return 0;
}

int cmd_dump_heatmap(const ConfigArgs& cargs, std::uint64_t seed, const std::string& prefix) {
    cpda::Config cfg = cargs.resolve();
    cpda::ParamSet ps;
    cpda::Rng rng(cfg.seed);
    cpda::ModelParams model = cpda::ModelParams::create(cfg, ps, rng);
    cpda::ForwardResult r = synthetic_forward(cfg, seed, model);
    const int g = cfg.grid_side();
    cpda::write_heatmap_csv(prefix + ".scores.csv", r.pmap.p_map, g);
    cpda::write_heatmap_csv(prefix + ".window.csv", r.pmap.s_map, g);
    cpda::write_heatmap_ppm(prefix + ".scores.ppm", r.pmap.p_map, g);
    cpda::write_heatmap_ppm(prefix + ".window.ppm", r.pmap.s_map, g);
    std::printf("peak cell row=%d col=%d\n", r.pmap.center_u, r.pmap.center_v);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-aware pruning tracker"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic sequence");
    std::string gen_preset = "crossing", gen_out;
    std::uint64_t gen_seed = 1;
    int gen_frames = 20, gen_target = 0;
    double gen_similarity = -1.0;
    gen->add_option("--preset", gen_preset, "static | linear | crossing");
    gen->add_option("--seed", gen_seed, "scenario seed");
    gen->add_option("--frames", gen_frames, "frame count")->check(CLI::PositiveNumber);
    gen->add_option("--target-size", gen_target, "target square side in pixels");
    gen->add_option("--similarity", gen_similarity, "distractor similarity in [0,1]");
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train on synthetic sequences");
    ConfigArgs train_cfg;
    add_config_options(train, train_cfg);
    std::string train_ckpt, train_curve, train_diag;
    train->add_option("--out-checkpoint", train_ckpt, "checkpoint written after training");
    train->add_option("--curve", train_curve, "per-step loss CSV");
    train->add_option("--diag", train_diag, "JSON diagnostic on numerical failure");

    // track
    auto* track = app.add_subcommand("track", "run the tracker over a sequence");
    ConfigArgs track_cfg;
    add_config_options(track, track_cfg);
    std::string track_ckpt, track_seq, track_out, track_diag;
    track->add_option("--checkpoint", track_ckpt, "trained parameters (optional)");
    track->add_option("--sequence", track_seq, "sequence directory")->required();
    track->add_option("--out", track_out, "predicted boxes CSV")->required();
    track->add_option("--diag", track_diag, "line-delimited JSON per-frame diagnostics");

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    std::string eval_pred, eval_seq;
    bool eval_json = false;
    eval->add_option("--pred", eval_pred, "predicted boxes CSV")->required();
    eval->add_option("--sequence", eval_seq, "sequence directory with groundtruth.csv")->required();
    eval->add_flag("--json", eval_json, "print a JSON object");

    // bench
    auto* bench = app.add_subcommand("bench", "analytic compute model, optionally measured");
    ConfigArgs bench_cfg;
    add_config_options(bench, bench_cfg);
    bool bench_measure = false, bench_json = false;
    bench->add_flag("--measure", bench_measure, "run a forward pass with counters");
    bench->add_flag("--json", bench_json, "print a JSON object");

    // dump-masks
    auto* dmask = app.add_subcommand("dump-masks", "write attention masks and a token report");
    ConfigArgs dmask_cfg;
    add_config_options(dmask, dmask_cfg);
    std::string dmask_prefix;
    std::uint64_t dmask_seed = 1;
    dmask->add_option("--seed", dmask_seed, "synthetic frame seed");
    dmask->add_option("--out-prefix", dmask_prefix, "output path prefix")->required();

    // dump-heatmap
    auto* dheat = app.add_subcommand("dump-heatmap", "write score and window-sum maps");
    ConfigArgs dheat_cfg;
    add_config_options(dheat, dheat_cfg);
    std::string dheat_prefix;
    std::uint64_t dheat_seed = 1;
    dheat->add_option("--seed", dheat_seed, "synthetic frame seed");
    dheat->add_option("--out-prefix", dheat_prefix, "output path prefix")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_preset, gen_seed, gen_frames, gen_target, gen_similarity, gen_out);
        if (train->parsed()) return cmd_train(train_cfg, train_ckpt, train_curve, train_diag);
        if (track->parsed())
            return cmd_track(track_cfg, track_ckpt, track_seq, track_out, track_diag);
        if (eval->parsed()) return cmd_eval(eval_pred, eval_seq, eval_json);
        if (bench->parsed()) return cmd_bench(bench_cfg, bench_measure, bench_json);
        if (dmask->parsed()) return cmd_dump_masks(dmask_cfg, dmask_seed, dmask_prefix);
        if (dheat->parsed()) return cmd_dump_heatmap(dheat_cfg, dheat_seed, dheat_prefix);
    } catch (const cpda::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const cpda::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const cpda::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
