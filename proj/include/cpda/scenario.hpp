#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/geometry.hpp"
#include "cpda/image.hpp"

namespace cpda {

using Waypoints = std::vector<std::pair<double, double>>;  // center path, pixels

struct ScenarioSpec {
    int width = 96;
    int height = 96;
    int num_frames = 20;
    int target_size = 18;  // square side in pixels
    double distractor_similarity = 0.85;  // 0 = unrelated pattern, 1 = identical
    std::uint64_t seed = 1;
    Waypoints target_path;
    std::vector<Waypoints> distractor_paths;
};

struct Scenario {
    std::vector<Image> frames;
    std::vector<Box> gt;  // normalized frame coordinates, one per frame
};

namespace detail {

// Piecewise-linear position along the waypoint chain at progress u in [0, 1].
inline std::pair<double, double> path_at(const Waypoints& w, double u) {
    check_data(!w.empty(), "scenario: empty waypoint path");
    if (w.size() == 1) return w[0];
    const double span = u * static_cast<double>(w.size() - 1);
    const size_t i = std::min(static_cast<size_t>(span), w.size() - 2);
    const double f = span - static_cast<double>(i);
    return {w[i].first + f * (w[i + 1].first - w[i].first),
            w[i].second + f * (w[i + 1].second - w[i].second)};
}

struct Rgb {
    double r, g, b;
};

inline Rgb lerp(const Rgb& a, const Rgb& b, double t) {
    return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)};
}

// A square sprite with a 2x2 checker pattern of two colors and sub-pixel
// placement: border pixels take fractional coverage so motion is smooth.
struct Sprite {
    Rgb c0, c1;
    double size;

    void draw(Image& img, double cx, double cy) const {
        const double x1 = cx - size / 2, y1 = cy - size / 2;
        const double x2 = cx + size / 2, y2 = cy + size / 2;
        const int px1 = std::max(0, static_cast<int>(std::floor(x1)));
        const int py1 = std::max(0, static_cast<int>(std::floor(y1)));
        const int px2 = std::min(img.w - 1, static_cast<int>(std::ceil(x2)));
        const int py2 = std::min(img.h - 1, static_cast<int>(std::ceil(y2)));
        for (int y = py1; y <= py2; ++y)
            for (int x = px1; x <= px2; ++x) {
                const double cov_x = std::min(x + 1.0, x2) - std::max(static_cast<double>(x), x1);
                const double cov_y = std::min(y + 1.0, y2) - std::max(static_cast<double>(y), y1);
                if (cov_x <= 0.0 || cov_y <= 0.0) continue;
                const double cov = std::min(1.0, cov_x) * std::min(1.0, cov_y);
                const bool qx = (x + 0.5 - x1) > size / 2;
                const bool qy = (y + 0.5 - y1) > size / 2;
                const Rgb& c = (qx == qy) ? c0 : c1;
                double* p = &img.pix[(static_cast<size_t>(y) * img.w + x) * 3];
                p[0] += cov * (c.r - p[0]);
                p[1] += cov * (c.g - p[1]);
                p[2] += cov * (c.b - p[2]);
            }
    }
};

}  // namespace detail

// Deterministic scene: a value-noise background, the checker-patterned target
// moving along its waypoints, and distractor squares whose pattern is pulled
// toward the target's by the similarity knob. Identical spec -> identical bytes.
inline Scenario generate_scenario(const ScenarioSpec& spec) {
    check_data(spec.width > 0 && spec.height > 0 && spec.num_frames > 0, "scenario: empty geometry");
    check_data(spec.target_size > 0 && spec.target_size < std::min(spec.width, spec.height),
               "scenario: target size out of range");
    Rng rng(spec.seed);
    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };

    // Static background: one octave of bilinear value noise per channel.
    const int step = 16;
    const int gw = spec.width / step + 2, gh = spec.height / step + 2;
    std::vector<double> lattice(static_cast<size_t>(gw) * gh * 3);
    for (double& v : lattice) v = uniform(0.25, 0.65);
    Image background(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const int ix = x / step, iy = y / step;
            const double fx = static_cast<double>(x % step) / step;
            const double fy = static_cast<double>(y % step) / step;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int lx, int ly) {
                    return lattice[(static_cast<size_t>(ly) * gw + lx) * 3 + c];
                };
                const double top = at(ix, iy) + fx * (at(ix + 1, iy) - at(ix, iy));
                const double bot = at(ix, iy + 1) + fx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
                background.pix[(static_cast<size_t>(y) * spec.width + x) * 3 + c] =
                    top + fy * (bot - top);
            }
        }

    detail::Sprite target;
    target.c0 = {uniform(0.6, 0.95), uniform(0.05, 0.35), uniform(0.05, 0.35)};
    target.c1 = {uniform(0.05, 0.35), uniform(0.05, 0.35), uniform(0.6, 0.95)};
    target.size = spec.target_size;

    std::vector<detail::Sprite> distractors;
    for (size_t i = 0; i < spec.distractor_paths.size(); ++i) {
        detail::Sprite d;
        detail::Rgb own0{uniform(0.05, 0.95), uniform(0.6, 0.95), uniform(0.05, 0.95)};
        detail::Rgb own1{uniform(0.05, 0.95), uniform(0.05, 0.4), uniform(0.6, 0.95)};
        d.c0 = detail::lerp(own0, target.c0, spec.distractor_similarity);
        d.c1 = detail::lerp(own1, target.c1, spec.distractor_similarity);
        d.size = spec.target_size;
        distractors.push_back(d);
    }

    Scenario out;
    for (int f = 0; f < spec.num_frames; ++f) {
        const double u = spec.num_frames == 1 ? 0.0 : static_cast<double>(f) / (spec.num_frames - 1);
        Image frame = background;
        for (size_t i = 0; i < distractors.size(); ++i) {
            auto [dx, dy] = detail::path_at(spec.distractor_paths[i], u);
            distractors[i].draw(frame, dx, dy);
        }
        auto [tx, ty] = detail::path_at(spec.target_path, u);
        target.draw(frame, tx, ty);
        out.frames.push_back(std::move(frame));
        out.gt.push_back({tx / spec.width, ty / spec.height,
                          static_cast<double>(spec.target_size) / spec.width,
                          static_cast<double>(spec.target_size) / spec.height});
    }
    return out;
}

// Named motion presets used by the generator tool and the training harness.
inline ScenarioSpec preset_scenario(const std::string& name, std::uint64_t seed) {
    ScenarioSpec s;
    s.seed = seed;
    if (name == "static") {
        s.target_path = {{48.0, 48.0}};
    } else if (name == "linear") {
        s.target_path = {{24.0, 24.0}, {72.0, 72.0}};
    } else if (name == "crossing") {
        s.target_path = {{20.0, 48.0}, {76.0, 48.0}};
        s.distractor_paths = {{{76.0, 48.0}, {20.0, 48.0}},   // head-on pass
                              {{48.0, 20.0}, {48.0, 76.0}}};  // vertical cut
    } else {
        throw ConfigError("unknown scenario preset: " + name);
    }
    return s;
}

// On-disk layout: <dir>/frame_0000.ppm ... plus <dir>/groundtruth.csv with
// header "frame,cx,cy,w,h" in normalized coordinates.
inline void write_sequence(const std::string& dir, const Scenario& sc) {
    check_data(sc.frames.size() == sc.gt.size(), "write_sequence: frame/box count mismatch");
    std::filesystem::create_directories(dir);
    char name[64];
    for (size_t i = 0; i < sc.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
        write_ppm((std::filesystem::path(dir) / name).string(), sc.frames[i]);
    }
    std::ofstream csv(std::filesystem::path(dir) / "groundtruth.csv");
    check_data(csv.good(), "write_sequence: cannot open csv in " + dir);
    csv << "frame,cx,cy,w,h\n";
    char row[256];
    for (size_t i = 0; i < sc.gt.size(); ++i) {
        std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, sc.gt[i].cx, sc.gt[i].cy,
                      sc.gt[i].w, sc.gt[i].h);
        csv << row;
    }
    check_data(csv.good(), "write_sequence: csv write failed in " + dir);
}

inline Scenario read_sequence(const std::string& dir) {
    std::ifstream csv(std::filesystem::path(dir) / "groundtruth.csv");
    check_data(csv.good(), "read_sequence: missing groundtruth.csv in " + dir);
    std::string line;
    check_data(static_cast<bool>(std::getline(csv, line)) && line.rfind("frame,", 0) == 0,
               "read_sequence: bad csv header in " + dir);
    Scenario sc;
    size_t expect = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        size_t idx = 0;
        Box b;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &idx, &b.cx, &b.cy, &b.w, &b.h) != 5)
            throw DataError("read_sequence: malformed csv row: " + line);
        check_data(idx == expect, "read_sequence: csv rows out of order");
        ++expect;
        sc.gt.push_back(b);
    }
    check_data(!sc.gt.empty(), "read_sequence: empty ground truth");
    char name[64];
    for (size_t i = 0; i < sc.gt.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
        sc.frames.push_back(read_ppm((std::filesystem::path(dir) / name).string()));
    }
    return sc;
}

}  // namespace cpda
