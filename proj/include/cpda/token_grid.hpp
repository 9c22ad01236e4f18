#pragma once

#include <string>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/geometry.hpp"
#include "cpda/image.hpp"
#include "cpda/optim.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

enum class TokenGroup { initial_template, dynamic_template, search };

// Static identity of one token: where it came from. Indexed by original_index,
// which is assigned at construction and never changes; only `alive` mutates.
struct TokenInfo {
    TokenGroup group;
    int row = 0;  // within its source grid
    int col = 0;
    bool alive = true;
};

// Token features plus the bookkeeping that survives pruning and permutation.
// `tokens` holds only alive rows; storage order is arbitrary but tracked.
struct TokenGrid {
    Tensor tokens;  // [N_alive x D]
    std::vector<TokenInfo> info;            // by original_index, all tokens ever created
    std::vector<int> storage_to_original;   // length N_alive
    std::vector<int> original_to_storage;   // length info.size(); -1 when dead

    int total_count() const { return static_cast<int>(info.size()); }
    int alive_count() const { return static_cast<int>(storage_to_original.size()); }

    const TokenInfo& info_at_storage(int s) const { return info[static_cast<size_t>(storage_to_original[static_cast<size_t>(s)])]; }

    int storage_of(int original_index) const {
        int s = original_to_storage[static_cast<size_t>(original_index)];
        check_contract(s >= 0, "TokenGrid: token " + std::to_string(original_index) + " is not alive");
        return s;
    }

    std::vector<int> original_indices_of(TokenGroup g, bool alive_only = true) const {
        std::vector<int> out;
        for (int i = 0; i < total_count(); ++i)
            if (info[static_cast<size_t>(i)].group == g && (!alive_only || info[static_cast<size_t>(i)].alive))
                out.push_back(i);
        return out;
    }

    void check_consistent() const {
        check_contract(tokens.rank() == 2 && tokens.rows() == alive_count(),
                       "TokenGrid: token rows out of sync with alive set");
        for (size_t s = 0; s < storage_to_original.size(); ++s) {
            int o = storage_to_original[s];
            check_contract(info[static_cast<size_t>(o)].alive, "TokenGrid: dead token in storage");
            check_contract(original_to_storage[static_cast<size_t>(o)] == static_cast<int>(s),
                           "TokenGrid: storage maps disagree");
        }
    }
};

// --- patchify ---------------------------------------------------------------

// Splits an image into non-overlapping P x P patches, one row per patch,
// flattened channel-major (all red values, then green, then blue).
inline Tensor patchify(const Image& img, int patch) {
    check_config(patch > 0 && img.w % patch == 0 && img.h % patch == 0,
                 "patchify: image dimensions must be multiples of the patch size");
    const int gw = img.w / patch, gh = img.h / patch;
    const int plen = 3 * patch * patch;
    Tensor out = Tensor::zeros({gw * gh, plen});
    auto& o = out.mutable_data();
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) {
            double* row = o.data() + static_cast<size_t>(gr * gw + gc) * plen;
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        row[(c * patch + py) * patch + px] =
                            img.at(gc * patch + px, gr * patch + py)[c];
        }
    return out;
}

inline Image unpatchify(const Tensor& patches, int patch, int width, int height) {
    const int gw = width / patch, gh = height / patch;
    check_shape(patches.rank() == 2 && patches.rows() == gw * gh &&
                    patches.cols() == 3 * patch * patch,
                "unpatchify: patch tensor does not match target geometry");
    Image img(width, height);
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) {
            const double* row = patches.data().data() + static_cast<size_t>(gr * gw + gc) * 3 * patch * patch;
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        img.at(gc * patch + px, gr * patch + py)[c] =
                            row[(c * patch + py) * patch + px];
        }
    return img;
}

// --- embedding --------------------------------------------------------------

// Shared linear patch projection plus one learnable positional table per group.
struct PatchEmbedParams {
    Tensor proj;  // [3P^2 x D]
    Tensor bias;  // [D]
    Tensor pos_initial, pos_dynamic, pos_search;  // [N_group x D]

    static PatchEmbedParams create(const Config& cfg, ParamSet& ps, Rng& rng) {
        PatchEmbedParams p;
        const int plen = 3 * cfg.patch_size * cfg.patch_size;
        p.proj = ps.add("embed.proj", Tensor::zeros({plen, cfg.embed_dim}, true));
        fill_normal(p.proj, rng, 1.0 / std::sqrt(static_cast<double>(plen)));
        p.bias = ps.add("embed.bias", Tensor::zeros({cfg.embed_dim}, true));
        auto pos = [&](const std::string& name, int count) {
            Tensor t = ps.add(name, Tensor::zeros({count, cfg.embed_dim}, true));
            fill_normal(t, rng, 0.02);
            return t;
        };
        p.pos_initial = pos("embed.pos_initial", cfg.num_template_tokens());
        p.pos_dynamic = pos("embed.pos_dynamic", cfg.num_template_tokens());
        p.pos_search = pos("embed.pos_search", cfg.num_search_tokens());
        return p;
    }
};

// Projects the three patch sets and assembles the combined token sequence
// in [initial template; dynamic template; search] order.
inline TokenGrid embed_tokens(const PatchEmbedParams& p, const Config& cfg,
                              const Tensor& patches_initial, const Tensor& patches_dynamic,
                              const Tensor& patches_search) {
    const int nt = cfg.num_template_tokens(), nx = cfg.num_search_tokens();
    check_shape(patches_initial.rows() == nt && patches_dynamic.rows() == nt &&
                    patches_search.rows() == nx,
                "embed_tokens: patch counts do not match the configured geometry");
    auto project = [&](const Tensor& patches, const Tensor& pos) {
        return add(add_rowwise(matmul(patches, p.proj), p.bias), pos);
    };
    TokenGrid grid;
    grid.tokens = concat_rows({project(patches_initial, p.pos_initial),
                               project(patches_dynamic, p.pos_dynamic),
                               project(patches_search, p.pos_search)});
    const int tside = cfg.template_side_tokens(), gside = cfg.grid_side();
    auto push_group = [&](TokenGroup g, int side) {
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) grid.info.push_back({g, r, c, true});
    };
    push_group(TokenGroup::initial_template, tside);
    push_group(TokenGroup::dynamic_template, tside);
    push_group(TokenGroup::search, gside);
    const int total = 2 * nt + nx;
    grid.storage_to_original.resize(static_cast<size_t>(total));
    grid.original_to_storage.resize(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) {
        grid.storage_to_original[static_cast<size_t>(i)] = i;
        grid.original_to_storage[static_cast<size_t>(i)] = i;
    }
    return grid;
}

// --- bounding-box token selection -------------------------------------------

struct TokenSelection {
    std::vector<int> original_indices;  // sorted ascending
    bool center_fallback = false;       // box contained no cell centers
};

// Tokens of `group` whose patch-cell center lies inside the box (inclusive
// edges). An empty hit set falls back to the single cell containing the box
// center, flagged so callers can surface a warning.
inline TokenSelection select_bbox_tokens(const TokenGrid& grid, TokenGroup group, const Box& box,
                                         int side_tokens) {
    TokenSelection sel;
    for (int i = 0; i < grid.total_count(); ++i) {
        const TokenInfo& t = grid.info[static_cast<size_t>(i)];
        if (t.group != group || !t.alive) continue;
        double cx = (t.col + 0.5) / side_tokens;
        double cy = (t.row + 0.5) / side_tokens;
        if (cx >= box.x1() && cx <= box.x2() && cy >= box.y1() && cy <= box.y2())
            sel.original_indices.push_back(i);
    }
    if (sel.original_indices.empty()) {
        sel.center_fallback = true;
        int col = std::clamp(static_cast<int>(box.cx * side_tokens), 0, side_tokens - 1);
        int row = std::clamp(static_cast<int>(box.cy * side_tokens), 0, side_tokens - 1);
        for (int i = 0; i < grid.total_count(); ++i) {
            const TokenInfo& t = grid.info[static_cast<size_t>(i)];
            if (t.group == group && t.alive && t.row == row && t.col == col) {
                sel.original_indices.push_back(i);
                break;
            }
        }
        check_contract(!sel.original_indices.empty(),
                       "select_bbox_tokens: fallback cell is not alive");
    }
    return sel;
}

// G x G occupancy of alive search tokens, row-major.
inline std::vector<std::uint8_t> live_search_map(const TokenGrid& grid, int gside) {
    std::vector<std::uint8_t> map(static_cast<size_t>(gside) * gside, 0);
    for (const TokenInfo& t : grid.info)
        if (t.group == TokenGroup::search && t.alive)
            map[static_cast<size_t>(t.row) * gside + t.col] = 1;
    return map;
}

}  // namespace cpda
