#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "linearsr/attention.hpp"
#include "linearsr/autodiff.hpp"
#include "linearsr/errors.hpp"
#include "linearsr/tensor.hpp"

namespace linearsr {

/// Zero same-padded depthwise 3x3 conv; channel c of the output depends only
/// on channel c of the input.
inline TensorD depthwise_conv3x3(const TensorD& x, const TensorD& kernel) {
    return Tape::depthwise_forward(x, kernel);
}

struct MixFfnParams {
    TensorD expand_w;   // C x E
    TensorD expand_b;   // E
    TensorD dw_kernel;  // E x 3 x 3, one filter per channel
    TensorD contract_w; // E x C
    TensorD contract_b; // C
};

struct MixFfnVars {
    Tape::Var expand_w, expand_b, dw_kernel, contract_w, contract_b;
};

/// expand -> grid -> depthwise 3x3 -> GELU -> contract. Residual is the
/// caller's job. Tokens are row-major pixels of an H x W grid.
inline Tape::Var mix_ffn(Tape& tp, Tape::Var x, std::size_t h, std::size_t w, const MixFfnVars& p) {
    const TensorD& xv = tp.value(x);
    if (xv.rank() != 2 || xv.shape[0] != h * w)
        throw ShapeError("mix_ffn: token count " + std::to_string(xv.shape[0]) + " != H*W = " +
                         std::to_string(h * w));
    Tape::Var y = tp.add_row_vector(tp.matmul(x, p.expand_w), p.expand_b);
    Tape::Var grid = tp.tokens_to_grid(y, h, w);
    Tape::Var conv = tp.depthwise_conv3x3(grid, p.dw_kernel);
    Tape::Var act = tp.gelu(conv);
    Tape::Var toks = tp.grid_to_tokens(act);
    return tp.add_row_vector(tp.matmul(toks, p.contract_w), p.contract_b);
}

inline TensorD mix_ffn(const TensorD& x, std::size_t h, std::size_t w, const MixFfnParams& p) {
    Tape tp;
    MixFfnVars v{tp.leaf(p.expand_w), tp.leaf(p.expand_b), tp.leaf(p.dw_kernel),
                 tp.leaf(p.contract_w), tp.leaf(p.contract_b)};
    return tp.value(mix_ffn(tp, tp.leaf(x), h, w, v));
}

struct ConvLayerParams {
    TensorD kernel; // Cout x Cin x kh x kw
    TensorD bias;   // Cout
    std::size_t stride = 1;
};

/// The LR conditioning stem: three strided convolutions, SiLU after each.
struct CondStemParams {
    std::vector<ConvLayerParams> layers;

    std::size_t total_stride() const {
        std::size_t s = 1;
        for (const auto& l : layers) s *= l.stride;
        return s;
    }
};

struct ConvLayerVars {
    Tape::Var kernel, bias;
    std::size_t stride = 1;
};

inline Tape::Var cond_stem(Tape& tp, Tape::Var x, const std::vector<ConvLayerVars>& layers) {
    Tape::Var cur = x;
    for (const auto& l : layers) {
        cur = tp.conv2d(cur, l.kernel, l.bias, l.stride);
        cur = tp.silu(cur);
    }
    return cur;
}

inline TensorD cond_stem(const TensorD& x_lr, const CondStemParams& p) {
    Tape tp;
    std::vector<ConvLayerVars> vars;
    for (const auto& l : p.layers) vars.push_back({tp.leaf(l.kernel), tp.leaf(l.bias), l.stride});
    return tp.value(cond_stem(tp, tp.leaf(x_lr), vars));
}

/// Channel-axis concatenation with z_t channels first (pinned order).
inline TensorD inject_condition(const TensorD& z_t, const TensorD& stem_out) {
    if (z_t.rank() != 3 || stem_out.rank() != 3) throw ShapeError("inject_condition expects [C,H,W]");
    if (z_t.shape[1] != stem_out.shape[1] || z_t.shape[2] != stem_out.shape[2])
        throw ShapeError("inject_condition: spatial dims differ, " + z_t.shape_str() + " vs " +
                         stem_out.shape_str());
    return concat(z_t, stem_out, 0);
}

/// Sinusoidal embedding of t in [0,1]; the [0,1] range is scaled by 1000 so
/// neighboring sampler steps get distinguishable phases.
inline TensorD timestep_embed(double t, std::size_t dim) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("timestep_embed: t must be in [0,1]");
    if (dim == 0) throw ShapeError("timestep_embed: dim must be >= 1");
    TensorD out({dim});
    const std::size_t half = dim / 2;
    const double pos = t * 1000.0;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half > 1 ? half - 1 : 1));
        out.data[i] = std::sin(pos * freq);
        out.data[half + i] = std::cos(pos * freq);
    }
    if (dim % 2 == 1) out.data[dim - 1] = 0.0;
    return out;
}

struct DitBlockParams {
    TensorD ln1_gamma, ln1_beta; // D
    TensorD wq, wk, wv, wo;      // D x D
    TensorD mod1;                // D x D, timestep modulation before attention
    TensorD ln2_gamma, ln2_beta;
    MixFfnParams ffn;
    TensorD mod2; // D x D, timestep modulation before the FFN
};

struct DitBlockVars {
    Tape::Var ln1_gamma, ln1_beta, wq, wk, wv, wo, mod1, ln2_gamma, ln2_beta, mod2;
    MixFfnVars ffn;
};

namespace detail {

inline Tape::Var multi_head_linear_attention(Tape& tp, Tape::Var q, Tape::Var k, Tape::Var v,
                                             const AttentionConfig& cfg) {
    Tape::Var merged = 0;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const std::size_t lo = h * cfg.head_dim, hi = lo + cfg.head_dim;
        Tape::Var oh = tp.linear_attention(tp.slice_cols(q, lo, hi), tp.slice_cols(k, lo, hi),
                                           tp.slice_cols(v, lo, hi), cfg.epsilon);
        merged = (h == 0) ? oh : tp.concat(merged, oh, 1);
    }
    return merged;
}

} // namespace detail

/// Pre-norm DiT block with additive timestep modulation:
///   x += Wo . MHA(LN(x) + mod1 . t_emb);  x += MixFFN(LN(x) + mod2 . t_emb)
inline Tape::Var dit_block(Tape& tp, Tape::Var x, Tape::Var t_emb_row, std::size_t grid_h,
                           std::size_t grid_w, const DitBlockVars& p, const AttentionConfig& cfg) {
    const std::size_t d = cfg.model_dim();

    Tape::Var m1 = tp.reshape(tp.matmul(t_emb_row, p.mod1), {d});
    Tape::Var h1 = tp.add_row_vector(tp.layer_norm(x, p.ln1_gamma, p.ln1_beta), m1);
    Tape::Var attn = detail::multi_head_linear_attention(tp, tp.matmul(h1, p.wq),
                                                         tp.matmul(h1, p.wk),
                                                         tp.matmul(h1, p.wv), cfg);
    x = tp.add(x, tp.matmul(attn, p.wo));

    Tape::Var m2 = tp.reshape(tp.matmul(t_emb_row, p.mod2), {d});
    Tape::Var h2 = tp.add_row_vector(tp.layer_norm(x, p.ln2_gamma, p.ln2_beta), m2);
    return tp.add(x, mix_ffn(tp, h2, grid_h, grid_w, p.ffn));
}

} // namespace linearsr
