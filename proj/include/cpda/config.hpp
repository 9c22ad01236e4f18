#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "cpda/common.hpp"

namespace cpda {

// How template<->search blocking statements are interpreted when building
// attention masks:
//   influence — blocking "search toward template" stops search keys from
//               entering template-query updates (default reading),
//   attention — it stops search queries from reading template keys.
enum class ArrowReading { influence, attention };

// Template-query access to search keys, early phase / late phase.
enum class AttentionMode {
    all_allowed,              // allowed / allowed
    all_blocked,              // blocked / blocked
    blocked_then_target,      // blocked / all above-threshold tokens
    blocked_then_target_scz,  // blocked / above-threshold inside confidence zone (full model)
    allowed_then_target_scz,  // allowed / above-threshold inside confidence zone
};

// Search-token pruning policy at the split layer.
enum class PruningMode {
    none,        // keep everything
    plain,       // drop the t lowest-probability tokens unconditionally
    contextual,  // protect the contextual zone, then drop the t lowest outside it
};

struct Config {
    // geometry
    int patch_size = 4;
    int template_size = 32;  // square, pixels (initial and dynamic templates)
    int search_size = 64;    // square, pixels

    // encoder
    int embed_dim = 64;
    int num_heads = 4;
    int num_layers = 12;
    int split_layer = 4;  // probability/pruning stage sits between this layer and the next

    // pruning / selective attention
    int cz_size = 11;   // contextual zone side, tokens
    int scz_size = 7;   // confidence zone side, tokens
    int prune_count = 128;
    double target_threshold = 0.5;
    ArrowReading arrow_reading = ArrowReading::influence;
    AttentionMode attention_mode = AttentionMode::blocked_then_target_scz;
    PruningMode pruning_mode = PruningMode::contextual;

    // loss
    double lambda_iou = 2.0;
    double lambda_l1 = 5.0;
    double aux_prob_loss_weight = 1.0;  // per-token probability supervision; 0 disables

    // training
    double lr = 1e-4;
    double lr_decay_frac = 0.6;    // decay once at this fraction of total steps
    double lr_decay_factor = 0.1;
    double weight_decay = 1e-4;
    int train_steps = 400;
    int batch_size = 8;
    std::uint64_t seed = 1;

    // tracking
    double search_area_factor = 4.0;    // crop area = factor x box area
    double template_area_factor = 4.0;  // template crop area factor at init/update
    int update_interval = 25;           // dynamic-template cadence; 0 disables
    double update_confidence = 0.6;

    // derived geometry
    int grid_side() const { return search_size / patch_size; }            // G
    int num_search_tokens() const { return grid_side() * grid_side(); }   // N_X
    int template_side_tokens() const { return template_size / patch_size; }
    int num_template_tokens() const {  // per template
        return template_side_tokens() * template_side_tokens();
    }
    int num_tokens_total() const { return 2 * num_template_tokens() + num_search_tokens(); }
};

inline void validate(const Config& c) {
    check_config(c.patch_size > 0, "patch_size must be positive");
    check_config(c.template_size > 0 && c.template_size % c.patch_size == 0,
                 "template_size must be a positive multiple of patch_size");
    check_config(c.search_size > 0 && c.search_size % c.patch_size == 0,
                 "search_size must be a positive multiple of patch_size");
    check_config(c.embed_dim > 0 && c.num_heads > 0 && c.embed_dim % c.num_heads == 0,
                 "embed_dim must be a positive multiple of num_heads");
    check_config(c.num_layers >= 2, "num_layers must be at least 2");
    check_config(c.split_layer >= 1 && c.split_layer < c.num_layers,
                 "split_layer must satisfy 1 <= split_layer < num_layers");
    const int g = c.grid_side();
    check_config(c.cz_size % 2 == 1 && c.scz_size % 2 == 1, "cz_size and scz_size must be odd");
    check_config(c.scz_size <= c.cz_size && c.cz_size <= g,
                 "zone sizes must satisfy scz_size <= cz_size <= grid side");
    check_config(c.prune_count >= 0 && c.prune_count <= c.num_search_tokens() - 1,
                 "prune_count must be in [0, num_search_tokens - 1]");
    check_config(c.lambda_iou >= 0.0 && c.lambda_l1 >= 0.0 && c.aux_prob_loss_weight >= 0.0,
                 "loss weights must be non-negative");
    check_config(c.lr > 0.0 && c.lr_decay_factor > 0.0, "learning rates must be positive");
    check_config(c.lr_decay_frac >= 0.0 && c.lr_decay_frac <= 1.0, "lr_decay_frac must be in [0,1]");
    check_config(c.train_steps >= 0 && c.batch_size >= 1, "train_steps/batch_size out of range");
    check_config(c.search_area_factor > 0.0 && c.template_area_factor > 0.0,
                 "area factors must be positive");
    check_config(c.update_interval >= 0, "update_interval must be >= 0");
}

namespace detail {

inline ArrowReading parse_arrow_reading(const std::string& v) {
    if (v == "influence") return ArrowReading::influence;
    if (v == "attention") return ArrowReading::attention;
    throw ConfigError("config: unknown arrow_reading: " + v);
}

inline AttentionMode parse_attention_mode(const std::string& v) {
    if (v == "all_allowed") return AttentionMode::all_allowed;
    if (v == "all_blocked") return AttentionMode::all_blocked;
    if (v == "blocked_then_target") return AttentionMode::blocked_then_target;
    if (v == "blocked_then_target_scz") return AttentionMode::blocked_then_target_scz;
    if (v == "allowed_then_target_scz") return AttentionMode::allowed_then_target_scz;
    throw ConfigError("config: unknown attention_mode: " + v);
}

inline PruningMode parse_pruning_mode(const std::string& v) {
    if (v == "none") return PruningMode::none;
    if (v == "plain") return PruningMode::plain;
    if (v == "contextual") return PruningMode::contextual;
    throw ConfigError("config: unknown pruning_mode: " + v);
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": " + v);
    }
}

}  // namespace detail

// Applies one `key=value` assignment. Every field is addressable by name.
inline void apply_config_entry(Config& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "patch_size") c.patch_size = parse_int(key, value);
    else if (key == "template_size") c.template_size = parse_int(key, value);
    else if (key == "search_size") c.search_size = parse_int(key, value);
    else if (key == "embed_dim") c.embed_dim = parse_int(key, value);
    else if (key == "num_heads") c.num_heads = parse_int(key, value);
    else if (key == "num_layers") c.num_layers = parse_int(key, value);
    else if (key == "split_layer") c.split_layer = parse_int(key, value);
    else if (key == "cz_size") c.cz_size = parse_int(key, value);
    else if (key == "scz_size") c.scz_size = parse_int(key, value);
    else if (key == "prune_count") c.prune_count = parse_int(key, value);
    else if (key == "target_threshold") c.target_threshold = parse_double(key, value);
    else if (key == "arrow_reading") c.arrow_reading = parse_arrow_reading(value);
    else if (key == "attention_mode") c.attention_mode = parse_attention_mode(value);
    else if (key == "pruning_mode") c.pruning_mode = parse_pruning_mode(value);
    else if (key == "lambda_iou") c.lambda_iou = parse_double(key, value);
    else if (key == "lambda_l1") c.lambda_l1 = parse_double(key, value);
    else if (key == "aux_prob_loss_weight") c.aux_prob_loss_weight = parse_double(key, value);
    else if (key == "lr") c.lr = parse_double(key, value);
    else if (key == "lr_decay_frac") c.lr_decay_frac = parse_double(key, value);
    else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
    else if (key == "train_steps") c.train_steps = parse_int(key, value);
    else if (key == "batch_size") c.batch_size = parse_int(key, value);
    else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "search_area_factor") c.search_area_factor = parse_double(key, value);
    else if (key == "template_area_factor") c.template_area_factor = parse_double(key, value);
    else if (key == "update_interval") c.update_interval = parse_int(key, value);
    else if (key == "update_confidence") c.update_confidence = parse_double(key, value);
    else throw ConfigError("config: unknown key: " + key);
}

// Plain-text config: one `key = value` per line, '#' starts a comment.
inline Config load_config(std::istream& is) {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string stripped = strip(line);
        if (stripped.empty()) continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        apply_config_entry(c, strip(stripped.substr(0, eq)), strip(stripped.substr(eq + 1)));
    }
    return c;
}

inline Config load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open: " + path);
    return load_config(is);
}

}  // namespace cpda
