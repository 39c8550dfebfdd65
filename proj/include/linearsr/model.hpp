#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "linearsr/autodiff.hpp"
#include "linearsr/blocks.hpp"
#include "linearsr/errors.hpp"
#include "linearsr/persist.hpp"
#include "linearsr/rng.hpp"
#include "linearsr/snrmoe.hpp"
#include "linearsr/tensor.hpp"

namespace linearsr {

/// Opaque conditioning inputs. Empty tensors mean "absent".
struct Conditioning {
    TensorD cond_vec; // added to the timestep embedding
    TensorD x_lr;     // LR image for the conditioning stem (DiT only)
};

/// One draw of the straight-line interpolant. Flow time convention:
/// t = 0 is the prior (noise) side, t = 1 the data side.
struct FlowSample {
    TensorD z0;   // prior draw
    TensorD z1;   // data draw
    double t = 0; // in [0, 1]

    TensorD z_t() const {
        TensorD z = scale(z0, 1.0 - t);
        const TensorD tz1 = scale(z1, t);
        for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] += tz1.data[i];
        return z;
    }

    TensorD target() const { return sub(z1, z0); }
};

/// Binds ParamSet entries to tape leaves and collects their gradients back.
class ParamBinder {
public:
    ParamBinder(Tape& tape, const ParamSet& params) : tape_(tape) {
        for (const auto& [name, t] : params) vars_[name] = tape.leaf(t);
    }

    Tape::Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw ShapeError("unbound parameter: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return vars_.count(name) > 0; }

    /// Adds d(loss)/d(param) into `grads` (created on first touch), scaled by `w`.
    void accumulate_grads(ParamSet& grads, double w = 1.0) const {
        for (const auto& [name, var] : vars_) {
            const TensorD& g = tape_.grad(var);
            TensorD* dst = find_param(grads, name);
            if (!dst) {
                grads.push_back({name, scale(g, w)});
            } else {
                for (std::size_t i = 0; i < dst->data.size(); ++i) dst->data[i] += w * g.data[i];
            }
        }
    }

private:
    Tape& tape_;
    std::map<std::string, Tape::Var> vars_;
};

class VectorFieldModel {
public:
    virtual ~VectorFieldModel() = default;

    virtual ParamSet& params() = 0;
    virtual const ParamSet& params() const = 0;

    /// v_theta(z, t, c); t is flow time.
    virtual TensorD forward(const TensorD& z, double t, const Conditioning& cond) const = 0;

    /// Mean over the batch of ||target - v_theta(z_t, t, c)||^2; accumulates
    /// d(loss)/d(params) into `grads`. Batch entries pair with `conds`
    /// (nullptr = unconditional).
    virtual double cfm_loss_and_grad(const std::vector<FlowSample>& batch,
                                     const std::vector<const Conditioning*>& conds,
                                     ParamSet& grads) = 0;

    virtual std::unique_ptr<VectorFieldModel> clone() const = 0;

    virtual std::size_t num_experts() const { return 1; }
    virtual const ExpertPartition* partition() const { return nullptr; }

    /// Expert handling a flow time (identity 0 when not MoE).
    std::size_t expert_for(double t_flow) const {
        const ExpertPartition* p = partition();
        if (!p || num_experts() == 1) return 0;
        return route_flow_time(t_flow, *p).expert_index;
    }
};

namespace model_detail {

inline TensorD dense_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    return rng.normal_tensor<double>({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

inline void push(ParamSet& ps, const std::string& name, TensorD t) {
    ps.push_back({name, std::move(t)});
}

} // namespace model_detail

struct MlpConfig {
    std::size_t z_dim = 2;
    std::size_t hidden = 64;
    std::size_t embed_dim = 16;
    std::size_t num_experts = 1; // > 1 requires a partition
};

/// Small SiLU MLP over [z, t_emb (+ cond_vec)] for the low-dimensional toys.
/// With num_experts > 1 every expert owns a full copy of the net; routing is
/// the deterministic log-SNR partition lookup.
class MlpVectorField final : public VectorFieldModel {
public:
    MlpVectorField(const MlpConfig& cfg, Rng& init_rng, ExpertPartition partition = {})
        : cfg_(cfg), partition_(std::move(partition)) {
        if (cfg.num_experts > 1 && partition_.num_experts != cfg.num_experts)
            throw DomainError("MlpVectorField: partition size != num_experts");
        using namespace model_detail;
        for (std::size_t k = 0; k < cfg.num_experts; ++k) {
            const std::string p = prefix(k);
            const std::size_t in = cfg.z_dim + cfg.embed_dim;
            push(params_, p + "w0", dense_init(init_rng, in, cfg.hidden));
            push(params_, p + "b0", TensorD({cfg.hidden}));
            push(params_, p + "w1", dense_init(init_rng, cfg.hidden, cfg.hidden));
            push(params_, p + "b1", TensorD({cfg.hidden}));
            push(params_, p + "w2", dense_init(init_rng, cfg.hidden, cfg.z_dim));
            push(params_, p + "b2", TensorD({cfg.z_dim}));
        }
    }

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }
    std::size_t num_experts() const override { return cfg_.num_experts; }
    const ExpertPartition* partition() const override {
        return cfg_.num_experts > 1 ? &partition_ : nullptr;
    }

    TensorD forward(const TensorD& z, double t, const Conditioning& cond) const override {
        Tape tp;
        ParamBinder bind(tp, params_);
        return tp.value(forward_on_tape(tp, bind, tp.leaf(z), t, cond, expert_for(t)));
    }

    double cfm_loss_and_grad(const std::vector<FlowSample>& batch,
                             const std::vector<const Conditioning*>& conds,
                             ParamSet& grads) override {
        if (batch.empty()) throw DomainError("cfm_loss_and_grad: empty batch");
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        double loss = 0;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            static const Conditioning kNone;
            const Conditioning& c = (s < conds.size() && conds[s]) ? *conds[s] : kNone;
            Tape tp;
            ParamBinder bind(tp, params_);
            Tape::Var v = forward_on_tape(tp, bind, tp.leaf(batch[s].z_t()), batch[s].t, c,
                                          expert_for(batch[s].t));
            Tape::Var l = tp.sse(v, tp.leaf(batch[s].target()));
            tp.backward(l);
            loss += tp.value(l).data[0] * inv_b;
            bind.accumulate_grads(grads, inv_b);
        }
        if (!std::isfinite(loss)) throw NonFiniteError("CFM loss diverged");
        return loss;
    }

    std::unique_ptr<VectorFieldModel> clone() const override {
        return std::make_unique<MlpVectorField>(*this);
    }

    const MlpConfig& config() const { return cfg_; }

private:
    static std::string prefix(std::size_t k) { return "expert" + std::to_string(k) + "."; }

    Tape::Var forward_on_tape(Tape& tp, const ParamBinder& bind, Tape::Var z, double t,
                              const Conditioning& cond, std::size_t expert) const {
        if (tp.value(z).size() != cfg_.z_dim) throw ShapeError("MlpVectorField: z dim mismatch");
        TensorD emb = timestep_embed(t, cfg_.embed_dim);
        if (!cond.cond_vec.data.empty()) {
            if (cond.cond_vec.size() != cfg_.embed_dim)
                throw ShapeError("cond_vec length != embed_dim");
            emb = add(emb, cond.cond_vec.reshaped({cfg_.embed_dim}));
        }
        const std::string p = prefix(expert);
        Tape::Var zin = tp.reshape(z, {1, cfg_.z_dim});
        Tape::Var x = tp.concat(zin, tp.leaf(emb.reshaped({1, cfg_.embed_dim})), 1);
        x = tp.silu(tp.add_row_vector(tp.matmul(x, bind[p + "w0"]), bind[p + "b0"]));
        x = tp.silu(tp.add_row_vector(tp.matmul(x, bind[p + "w1"]), bind[p + "b1"]));
        x = tp.add_row_vector(tp.matmul(x, bind[p + "w2"]), bind[p + "b2"]);
        return tp.reshape(x, tp.value(z).shape);
    }

    MlpConfig cfg_;
    ExpertPartition partition_;
    ParamSet params_;
};

struct DitConfig {
    std::size_t channels = 1; // z_t channels
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t num_blocks = 2;
    AttentionConfig attention{2, 8, 1e-6}; // model_dim = heads * head_dim
    std::size_t ffn_expand = 2;
    std::size_t stem_channels = 3; // output channels of the conditioning stem
    std::vector<std::size_t> stem_strides = {1, 1, 1};
    std::size_t stem_in_channels = 1;
    std::size_t num_experts = 1;

    std::size_t model_dim() const { return attention.model_dim(); }
};

/// Conditional DiT: stem(x_lr) concatenated onto z_t, token embedding,
/// pre-norm blocks of linear attention + Mix-FFN with additive timestep
/// modulation, linear head back to z_t's shape. With num_experts > 1 the
/// stem/embed/head are shared and each expert owns a full copy of the blocks.
class DitModel final : public VectorFieldModel {
public:
    DitModel(const DitConfig& cfg, Rng& init_rng, ExpertPartition partition = {})
        : cfg_(cfg), partition_(std::move(partition)) {
        cfg_.attention.validate();
        if (cfg.stem_strides.size() != 3)
            throw ShapeError("DitModel: stem needs exactly three layers");
        if (cfg.num_experts > 1 && partition_.num_experts != cfg.num_experts)
            throw DomainError("DitModel: partition size != num_experts");
        using namespace model_detail;
        const std::size_t d = cfg_.model_dim();

        std::size_t cin = cfg.stem_in_channels;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t cout = cfg.stem_channels;
            const std::string base = "shared.stem.conv" + std::to_string(i) + ".";
            push(params_, base + "w",
                 init_rng.normal_tensor<double>({cout, cin, 3, 3},
                                                1.0 / std::sqrt(9.0 * static_cast<double>(cin))));
            push(params_, base + "b", TensorD({cout}));
            cin = cout;
        }
        push(params_, "shared.embed.w", dense_init(init_rng, cfg.channels + cfg.stem_channels, d));
        push(params_, "shared.embed.b", TensorD({d}));
        push(params_, "shared.out.w", dense_init(init_rng, d, cfg.channels));
        push(params_, "shared.out.b", TensorD({cfg.channels}));

        for (std::size_t k = 0; k < cfg.num_experts; ++k)
            for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
                const std::string p = block_prefix(k, b);
                push(params_, p + "ln1.g", TensorD({d}, 1.0));
                push(params_, p + "ln1.b", TensorD({d}));
                push(params_, p + "wq", dense_init(init_rng, d, d));
                push(params_, p + "wk", dense_init(init_rng, d, d));
                push(params_, p + "wv", dense_init(init_rng, d, d));
                push(params_, p + "wo", scale(dense_init(init_rng, d, d), 0.1));
                push(params_, p + "mod1", scale(dense_init(init_rng, d, d), 0.1));
                push(params_, p + "ln2.g", TensorD({d}, 1.0));
                push(params_, p + "ln2.b", TensorD({d}));
                push(params_, p + "mod2", scale(dense_init(init_rng, d, d), 0.1));
                const std::size_t e = d * cfg.ffn_expand;
                push(params_, p + "ffn.w1", dense_init(init_rng, d, e));
                push(params_, p + "ffn.b1", TensorD({e}));
                push(params_, p + "ffn.dw", init_rng.normal_tensor<double>({e, 3, 3}, 1.0 / 3.0));
                push(params_, p + "ffn.w2", scale(dense_init(init_rng, e, d), 0.1));
                push(params_, p + "ffn.b2", TensorD({d}));
            }
    }

    ParamSet& params() override { return params_; }
    const ParamSet& params() const override { return params_; }
    std::size_t num_experts() const override { return cfg_.num_experts; }
    const ExpertPartition* partition() const override {
        return cfg_.num_experts > 1 ? &partition_ : nullptr;
    }

    TensorD forward(const TensorD& z, double t, const Conditioning& cond) const override {
        Tape tp;
        ParamBinder bind(tp, params_);
        return tp.value(forward_on_tape(tp, bind, tp.leaf(z), t, cond, expert_for(t)));
    }

    double cfm_loss_and_grad(const std::vector<FlowSample>& batch,
                             const std::vector<const Conditioning*>& conds,
                             ParamSet& grads) override {
        if (batch.empty()) throw DomainError("cfm_loss_and_grad: empty batch");
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        double loss = 0;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            static const Conditioning kNone;
            const Conditioning& c = (s < conds.size() && conds[s]) ? *conds[s] : kNone;
            Tape tp;
            ParamBinder bind(tp, params_);
            Tape::Var v = forward_on_tape(tp, bind, tp.leaf(batch[s].z_t()), batch[s].t, c,
                                          expert_for(batch[s].t));
            Tape::Var l = tp.sse(v, tp.leaf(batch[s].target()));
            tp.backward(l);
            loss += tp.value(l).data[0] * inv_b;
            bind.accumulate_grads(grads, inv_b);
        }
        if (!std::isfinite(loss)) throw NonFiniteError("CFM loss diverged");
        return loss;
    }

    std::unique_ptr<VectorFieldModel> clone() const override {
        return std::make_unique<DitModel>(*this);
    }

    const DitConfig& config() const { return cfg_; }

    /// Tape-level forward, exposed so tests can differentiate end to end.
    Tape::Var forward_on_tape(Tape& tp, const ParamBinder& bind, Tape::Var z, double t,
                              const Conditioning& cond, std::size_t expert) const {
        const TensorD& zv = tp.value(z);
        if (zv.rank() != 3 || zv.shape[0] != cfg_.channels || zv.shape[1] != cfg_.height ||
            zv.shape[2] != cfg_.width)
            throw ShapeError("DitModel: z shape " + zv.shape_str() + " != configured latent");
        if (cond.x_lr.data.empty()) throw ShapeError("DitModel: x_lr conditioning required");

        const std::size_t d = cfg_.model_dim();
        const std::size_t n = cfg_.height * cfg_.width;

        std::vector<ConvLayerVars> stem;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::string base = "shared.stem.conv" + std::to_string(i) + ".";
            stem.push_back({bind[base + "w"], bind[base + "b"], cfg_.stem_strides[i]});
        }
        Tape::Var feats = cond_stem(tp, tp.leaf(cond.x_lr), stem);
        const TensorD& fv = tp.value(feats);
        if (fv.shape[1] != cfg_.height || fv.shape[2] != cfg_.width)
            throw ShapeError("cond stem output " + fv.shape_str() + " does not match latent grid");

        Tape::Var zp = tp.concat(z, feats, 0); // z_t channels first
        Tape::Var tokens = tp.add_row_vector(
            tp.matmul(tp.grid_to_tokens(zp), bind["shared.embed.w"]), bind["shared.embed.b"]);

        TensorD emb = timestep_embed(t, d);
        if (!cond.cond_vec.data.empty()) {
            if (cond.cond_vec.size() != d) throw ShapeError("cond_vec length != model dim");
            emb = add(emb, cond.cond_vec.reshaped({d}));
        }
        Tape::Var t_emb_row = tp.leaf(emb.reshaped({1, d}));

        Tape::Var x = tokens;
        for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
            const std::string p = block_prefix(expert, b);
            DitBlockVars bv{bind[p + "ln1.g"], bind[p + "ln1.b"], bind[p + "wq"], bind[p + "wk"],
                            bind[p + "wv"],    bind[p + "wo"],    bind[p + "mod1"],
                            bind[p + "ln2.g"], bind[p + "ln2.b"], bind[p + "mod2"],
                            MixFfnVars{bind[p + "ffn.w1"], bind[p + "ffn.b1"], bind[p + "ffn.dw"],
                                       bind[p + "ffn.w2"], bind[p + "ffn.b2"]}};
            x = dit_block(tp, x, t_emb_row, cfg_.height, cfg_.width, bv, cfg_.attention);
        }
        Tape::Var out = tp.add_row_vector(tp.matmul(x, bind["shared.out.w"]), bind["shared.out.b"]);
        (void)n;
        return tp.tokens_to_grid(out, cfg_.height, cfg_.width);
    }

    static std::string block_prefix(std::size_t expert, std::size_t block) {
        return "expert" + std::to_string(expert) + ".block" + std::to_string(block) + ".";
    }

private:
    DitConfig cfg_;
    ExpertPartition partition_;
    ParamSet params_;
};

} // namespace linearsr
