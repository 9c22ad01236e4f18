#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/image.hpp"
#include "cpda/model.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

// Packed boolean mask file: "CPDM", u32 version, u32 rows, u32 cols, then
// each row as ceil(cols/8) bytes, least significant bit first.
inline void write_mask_bitset(const std::string& path, const MaskMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    check_data(out.good(), "write_mask_bitset: cannot open " + path);
    auto u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    out.write("CPDM", 4);
    u32(1);
    u32(static_cast<std::uint32_t>(m.rows));
    u32(static_cast<std::uint32_t>(m.cols));
    const int stride = (m.cols + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(stride));
    for (int q = 0; q < m.rows; ++q) {
        std::fill(row.begin(), row.end(), 0);
        for (int k = 0; k < m.cols; ++k)
            if (m.at(q, k)) row[static_cast<size_t>(k / 8)] |= static_cast<unsigned char>(1u << (k % 8));
        out.write(reinterpret_cast<const char*>(row.data()), stride);
    }
    check_data(out.good(), "write_mask_bitset: write failed for " + path);
}

inline MaskMatrix read_mask_bitset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_data(in.good(), "read_mask_bitset: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    check_data(in.good() && std::string(magic, 4) == "CPDM", "read_mask_bitset: bad magic in " + path);
    auto u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        check_data(in.good(), "read_mask_bitset: truncated header in " + path);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t version = u32();
    check_data(version == 1, "read_mask_bitset: unsupported version in " + path);
    const int rows = static_cast<int>(u32()), cols = static_cast<int>(u32());
    check_data(rows >= 0 && cols >= 0 && rows < 1 << 20 && cols < 1 << 20,
               "read_mask_bitset: implausible dimensions in " + path);
    MaskMatrix m(rows, cols, false);
    const int stride = (cols + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(stride));
    for (int q = 0; q < rows; ++q) {
        in.read(reinterpret_cast<char*>(row.data()), stride);
        check_data(in.good(), "read_mask_bitset: truncated payload in " + path);
        for (int k = 0; k < cols; ++k)
            m.set(q, k, (row[static_cast<size_t>(k / 8)] >> (k % 8)) & 1u);
    }
    return m;
}

// Per-token account of one forward pass: where each token sits, its score,
// and what the pruning and partition stages decided about it.
inline void write_token_report(const std::string& path, const ForwardResult& r, const Config& cfg) {
    std::ofstream out(path);
    check_data(out.good(), "write_token_report: cannot open " + path);
    out << "original_index,group,row,col,score,pruned,in_zone,role\n";
    auto group_name = [](TokenGroup g) {
        switch (g) {
            case TokenGroup::initial_template: return "initial_template";
            case TokenGroup::dynamic_template: return "dynamic_template";
            default: return "search";
        }
    };
    auto contains = [](const std::vector<int>& v, int x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    std::vector<double> score(r.grid.info.size(), -1.0);
    for (size_t i = 0; i < r.pmap.token_original.size(); ++i)
        score[static_cast<size_t>(r.pmap.token_original[i])] = r.pmap.p.at(static_cast<int64_t>(i));
    for (size_t oi = 0; oi < r.grid.info.size(); ++oi) {
        const TokenInfo& t = r.grid.info[oi];
        const int o = static_cast<int>(oi);
        const char* role = "-";
        if (t.group == TokenGroup::search) {
            if (contains(r.part.actual_target, o)) role = "target";
            else if (contains(r.part.distractor, o)) role = "distractor";
            else if (contains(r.part.background, o)) role = "background";
            else if (contains(r.prune.pruned_original, o)) role = "pruned";
        }
        const bool in_zone =
            t.group == TokenGroup::search &&
            std::find(r.prune.cz_cells.begin(), r.prune.cz_cells.end(),
                      std::make_pair(t.row, t.col)) != r.prune.cz_cells.end();
        char row[256];
        std::snprintf(row, sizeof row, "%d,%s,%d,%d,%.17g,%d,%d,%s\n", o, group_name(t.group), t.row,
                      t.col, score[oi], t.alive ? 0 : 1, in_zone ? 1 : 0, role);
        out << row;
    }
    check_data(out.good(), "write_token_report: write failed for " + path);
    (void)cfg;
}

inline void write_heatmap_csv(const std::string& path, const std::vector<double>& map, int g) {
    check_shape(static_cast<int>(map.size()) == g * g, "write_heatmap_csv: size mismatch");
    std::ofstream out(path);
    check_data(out.good(), "write_heatmap_csv: cannot open " + path);
    char cell[64];
    for (int u = 0; u < g; ++u) {
        for (int v = 0; v < g; ++v) {
            std::snprintf(cell, sizeof cell, "%.17g", map[static_cast<size_t>(u) * g + v]);
            out << cell << (v + 1 == g ? "\n" : ",");
        }
    }
    check_data(out.good(), "write_heatmap_csv: write failed for " + path);
}

// Grayscale rendering, max value scaled to white (flat map renders black).
inline void write_heatmap_ppm(const std::string& path, const std::vector<double>& map, int g) {
    check_shape(static_cast<int>(map.size()) == g * g, "write_heatmap_ppm: size mismatch");
    const double peak = *std::max_element(map.begin(), map.end());
    Image img(g, g);
    for (int u = 0; u < g; ++u)
        for (int v = 0; v < g; ++v) {
            const double x = peak > 0.0 ? map[static_cast<size_t>(u) * g + v] / peak : 0.0;
            double* p = img.at(v, u);
            p[0] = p[1] = p[2] = x;
        }
    write_ppm(path, img);
}

}  // namespace cpda
