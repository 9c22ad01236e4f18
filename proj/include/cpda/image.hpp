#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/geometry.hpp"

namespace cpda {

// Interleaved RGB raster with channel values in [0,1].
struct Image {
    int w = 0;
    int h = 0;
    std::vector<double> pix;  // h*w*3, row-major, [r,g,b] per pixel

    Image() = default;
    Image(int width, int height) : w(width), h(height), pix(static_cast<size_t>(width) * height * 3, 0.0) {}

    double* at(int x, int y) { return pix.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const double* at(int x, int y) const { return pix.data() + (static_cast<size_t>(y) * w + x) * 3; }

    void fill(double r, double g, double b) {
        for (size_t i = 0; i < pix.size(); i += 3) {
            pix[i] = r;
            pix[i + 1] = g;
            pix[i + 2] = b;
        }
    }
};

// Affine map from crop pixel coordinates into frame pixel coordinates:
// frame_px = offset + crop_px * scale (same scale on both axes).
struct CropMap {
    double scale = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;
    int crop_w = 0, crop_h = 0;
    int frame_w = 0, frame_h = 0;

    // Normalized-box transforms between the two coordinate systems.
    Box crop_to_frame(const Box& b) const {
        return {(offset_x + b.cx * crop_w * scale) / frame_w,
                (offset_y + b.cy * crop_h * scale) / frame_h,
                b.w * crop_w * scale / frame_w,
                b.h * crop_h * scale / frame_h};
    }
    Box frame_to_crop(const Box& b) const {
        return {(b.cx * frame_w - offset_x) / (crop_w * scale),
                (b.cy * frame_h - offset_y) / (crop_h * scale),
                b.w * frame_w / (crop_w * scale),
                b.h * frame_h / (crop_h * scale)};
    }
};

// Bilinear resample of a square frame window (center, side in frame pixels)
// into an out_side x out_side crop. Out-of-frame samples replicate the border.
inline Image crop_resample(const Image& frame, double center_x, double center_y, double side,
                           int out_side, CropMap* map_out = nullptr) {
    check_contract(side > 0.0 && out_side > 0, "crop_resample: non-positive crop geometry");
    Image out(out_side, out_side);
    const double scale = side / out_side;
    const double ox = center_x - 0.5 * side;
    const double oy = center_y - 0.5 * side;
    if (map_out) *map_out = {scale, ox, oy, out_side, out_side, frame.w, frame.h};
    for (int i = 0; i < out_side; ++i) {
        double sy = oy + (i + 0.5) * scale - 0.5;
        double fy = std::clamp(sy, 0.0, static_cast<double>(frame.h - 1));
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, frame.h - 1);
        double ty = fy - y0;
        for (int j = 0; j < out_side; ++j) {
            double sx = ox + (j + 0.5) * scale - 0.5;
            double fx = std::clamp(sx, 0.0, static_cast<double>(frame.w - 1));
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, frame.w - 1);
            double tx = fx - x0;
            const double* p00 = frame.at(x0, y0);
            const double* p01 = frame.at(x1, y0);
            const double* p10 = frame.at(x0, y1);
            const double* p11 = frame.at(x1, y1);
            double* dst = out.at(j, i);
            for (int c = 0; c < 3; ++c) {
                double top = p00[c] + (p01[c] - p00[c]) * tx;
                double bot = p10[c] + (p11[c] - p10[c]) * tx;
                dst[c] = top + (bot - top) * ty;
            }
        }
    }
    return out;
}

// --- binary PPM (P6, maxval 255) -------------------------------------------

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("ppm: cannot open for writing: " + path);
    char header[64];
    int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.w, img.h);
    os.write(header, n);
    std::vector<unsigned char> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double* p = img.at(x, y);
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(p[c], 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw DataError("ppm: write failed: " + path);
}

namespace detail {

inline int ppm_next_int(std::istream& is, const std::string& path) {
    // Skips whitespace and '#' comments between header fields.
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw DataError("ppm: malformed header in " + path);
    int v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = is.get();
    }
    if (ch != EOF) is.unget();
    return v;
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("ppm: cannot open: " + path);
    char m0 = static_cast<char>(is.get());
    char m1 = static_cast<char>(is.get());
    if (m0 != 'P' || m1 != '6') throw DataError("ppm: not a P6 file: " + path);
    int w = detail::ppm_next_int(is, path);
    int h = detail::ppm_next_int(is, path);
    int maxval = detail::ppm_next_int(is, path);
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("ppm: unsupported geometry/maxval in " + path);
    is.get();  // single whitespace byte after maxval
    Image img(w, h);
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw DataError("ppm: truncated pixel data in " + path);
    for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] / 255.0;
    return img;
}

}  // namespace cpda
