#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/config.hpp"
#include "cpda/optim.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

// Pre-norm transformer block: masked multi-head attention + feed-forward,
// both with residual connections.
struct EncoderLayerParams {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [D x D], [D]
    Tensor ff1_w, ff1_b;                    // [D x 4D], [4D]
    Tensor ff2_w, ff2_b;                    // [4D x D], [D]

    static EncoderLayerParams create(const Config& cfg, ParamSet& ps, Rng& rng, int layer_index) {
        EncoderLayerParams p;
        const int d = cfg.embed_dim;
        const std::string prefix = "enc" + std::to_string(layer_index) + ".";
        auto weight = [&](const std::string& name, int rows, int cols) {
            Tensor t = ps.add(prefix + name, Tensor::zeros({rows, cols}, true));
            fill_normal(t, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
            return t;
        };
        auto bias = [&](const std::string& name, int n) {
            return ps.add(prefix + name, Tensor::zeros({n}, true));
        };
        p.ln1_gain = ps.add(prefix + "ln1_gain", Tensor::full({d}, 1.0, true));
        p.ln1_bias = bias("ln1_bias", d);
        p.ln2_gain = ps.add(prefix + "ln2_gain", Tensor::full({d}, 1.0, true));
        p.ln2_bias = bias("ln2_bias", d);
        p.wq = weight("wq", d, d);
        p.bq = bias("bq", d);
        p.wk = weight("wk", d, d);
        p.bk = bias("bk", d);
        p.wv = weight("wv", d, d);
        p.bv = bias("bv", d);
        p.wo = weight("wo", d, d);
        p.bo = bias("bo", d);
        p.ff1_w = weight("ff1_w", d, 4 * d);
        p.ff1_b = bias("ff1_b", 4 * d);
        p.ff2_w = weight("ff2_w", 4 * d, d);
        p.ff2_b = bias("ff2_b", d);
        return p;
    }
};

// One block over [N x D] tokens. When `mac_sink` is non-null every matmul in
// this layer adds its multiply-accumulate count there (and outer sinks are
// suspended), which is what the analytic compute model is checked against.
inline Tensor encoder_layer(const Tensor& tokens, const MaskMatrix& mask,
                            const EncoderLayerParams& p, int num_heads,
                            std::uint64_t* mac_sink = nullptr) {
    const int n = tokens.rows(), d = tokens.cols();
    check_contract(mask.rows == n && mask.cols == n, "encoder_layer: mask does not match token count");
    check_contract(d % num_heads == 0, "encoder_layer: embed dim not divisible by heads");
    macs::Scope scope(mac_sink);
    const int hd = d / num_heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor h = layernorm(tokens, p.ln1_gain, p.ln1_bias);
    Tensor q = add_rowwise(matmul(h, p.wq), p.bq);
    Tensor k = add_rowwise(matmul(h, p.wk), p.bk);
    Tensor v = add_rowwise(matmul(h, p.wv), p.bv);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<size_t>(num_heads));
    for (int i = 0; i < num_heads; ++i) {
        Tensor qh = slice_cols(q, i * hd, hd);
        Tensor kh = slice_cols(k, i * hd, hd);
        Tensor vh = slice_cols(v, i * hd, hd);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_hd);
        Tensor att = masked_softmax(scores, mask);
        head_outputs.push_back(matmul(att, vh));
    }
    Tensor attn = add_rowwise(matmul(concat_cols(head_outputs), p.wo), p.bo);
    Tensor x = add(tokens, attn);

    Tensor h2 = layernorm(x, p.ln2_gain, p.ln2_bias);
    Tensor ff = add_rowwise(matmul(gelu(add_rowwise(matmul(h2, p.ff1_w), p.ff1_b)), p.ff2_w), p.ff2_b);
    return add(x, ff);
}

}  // namespace cpda
