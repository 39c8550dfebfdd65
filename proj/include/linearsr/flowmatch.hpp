#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"
#include "linearsr/model.hpp"
#include "linearsr/persist.hpp"
#include "linearsr/rng.hpp"
#include "linearsr/snrmoe.hpp"
#include "linearsr/tensor.hpp"
#include "linearsr/trace.hpp"

namespace linearsr {

using VectorField = std::function<TensorD(const TensorD& z, double t, const Conditioning& cond)>;

inline VectorField as_field(const VectorFieldModel& model) {
    return [&model](const TensorD& z, double t, const Conditioning& c) {
        return model.forward(z, t, c);
    };
}

struct DataPoint {
    TensorD z1;
    Conditioning cond;
};

/// Monte Carlo CFM objective over one batch: t ~ U[0,1], z0 ~ N(0,I),
/// mean_batch ||(z1 - z0) - v(z_t, t, c)||^2. NaN/Inf surfaces as
/// NonFiniteError; divergence is a signal, never swallowed.
inline double cfm_loss(const VectorField& model, const std::vector<DataPoint>& batch, Rng& rng) {
    if (batch.empty()) throw DomainError("cfm_loss: empty batch");
    double acc = 0;
    for (const auto& dp : batch) {
        FlowSample fs;
        fs.z1 = dp.z1;
        fs.t = rng.uniform();
        fs.z0 = rng.normal_tensor<double>(dp.z1.shape);
        const TensorD v = model(fs.z_t(), fs.t, dp.cond);
        if (!v.same_shape(dp.z1)) throw ShapeError("model output shape != z1 shape");
        const TensorD tgt = fs.target();
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const double d = tgt.data[i] - v.data[i];
            acc += d * d;
        }
    }
    const double loss = acc / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NonFiniteError("CFM loss is NaN/Inf");
    return loss;
}

inline double cfm_loss(const VectorFieldModel& model, const std::vector<DataPoint>& batch, Rng& rng) {
    return cfm_loss(as_field(model), batch, rng);
}

struct SamplerConfig {
    std::size_t num_steps = 20; // Euler on a uniform t grid, t from 0 to 1

    void validate() const {
        if (num_steps == 0) throw DomainError("sampler: num_steps must be >= 1");
    }
};

/// Deterministic Euler integration z <- z + dt * v(z, t, c) over the uniform
/// grid t_i = i/steps (left endpoints).
inline TensorD euler_sample(const VectorField& model, const TensorD& z_init, const Conditioning& cond,
                            const SamplerConfig& cfg) {
    cfg.validate();
    const double dt = 1.0 / static_cast<double>(cfg.num_steps);
    TensorD z = z_init;
    for (std::size_t i = 0; i < cfg.num_steps; ++i) {
        const double t = static_cast<double>(i) * dt;
        const TensorD v = model(z, t, cond);
        if (!v.same_shape(z)) throw ShapeError("vector field output shape mismatch");
        for (std::size_t j = 0; j < z.data.size(); ++j) z.data[j] += dt * v.data[j];
        if (!z.all_finite()) throw NonFiniteError("euler_sample diverged at step " + std::to_string(i));
    }
    return z;
}

inline TensorD euler_sample(const VectorFieldModel& model, const TensorD& z_init,
                            const Conditioning& cond, const SamplerConfig& cfg) {
    return euler_sample(as_field(model), z_init, cond, cfg);
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with per-tensor state. Tensors whose gradient is absent or exactly
/// zero in a step (e.g. experts not routed to) receive no update that step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamSet& params, const ParamSet& grads) {
        for (const auto& [name, g] : grads) {
            bool nonzero = false;
            for (double x : g.data)
                if (x != 0.0) {
                    nonzero = true;
                    break;
                }
            if (!nonzero) continue;

            TensorD* theta = find_param(params, name);
            if (!theta) throw ShapeError("Adam: gradient for unknown parameter " + name);
            State& st = state_[name];
            if (st.m.data.empty()) {
                st.m = TensorD(g.shape);
                st.v = TensorD(g.shape);
            }
            ++st.t;
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                st.m.data[i] = cfg_.beta1 * st.m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
                st.v.data[i] = cfg_.beta2 * st.v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
                const double mhat = st.m.data[i] / bc1;
                const double vhat = st.v.data[i] / bc2;
                theta->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    const AdamConfig& config() const { return cfg_; }

private:
    struct State {
        TensorD m, v;
        std::uint64_t t = 0;
    };
    AdamConfig cfg_;
    std::map<std::string, State> state_;
};

enum class ValidationMetric { NegLoss, Psnr };

struct TrainLoopConfig {
    std::size_t total_iters = 1000;
    std::size_t batch_size = 64;
    std::size_t eval_interval = 50;
    AdamConfig adam;
    ValidationMetric val_metric = ValidationMetric::NegLoss;
    SamplerConfig sampler; // used for PSNR validation
    std::string checkpoint_dir; // empty = no checkpoints
    std::string stage = "stage1";
};

struct TrainResult {
    std::vector<MetricTrace> traces;
    bool diverged = false;
    std::uint64_t diverged_at = 0;
    std::string last_good_checkpoint; // empty if none written
};

inline double psnr(const TensorD& a, const TensorD& b, double peak = 1.0) {
    detail::require_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return 200.0; // conventional cap for identical images
    return 10.0 * std::log10(peak * peak / mse);
}

namespace train_detail {

inline double validation_value(VectorFieldModel& model, const std::vector<DataPoint>& holdout,
                               const TrainLoopConfig& cfg, Rng& val_rng) {
    if (holdout.empty()) return 0.0;
    if (cfg.val_metric == ValidationMetric::NegLoss) {
        Rng r = val_rng; // same draws every evaluation
        return -cfm_loss(model, holdout, r);
    }
    // PSNR of a deterministic sample against the held-out target.
    Rng r = val_rng;
    double acc = 0;
    for (const auto& dp : holdout) {
        TensorD z0 = r.normal_tensor<double>(dp.z1.shape);
        TensorD out = euler_sample(model, z0, dp.cond, cfg.sampler);
        acc += psnr(out, dp.z1);
    }
    return acc / static_cast<double>(holdout.size());
}

} // namespace train_detail

/// Minibatch CFM training with Adam. Emits train_loss and one validation
/// metric every eval_interval; writes a checkpoint at the same cadence when
/// checkpoint_dir is set. A non-finite loss halts the run: a NaN divergence
/// marker is appended to the traces and the last good checkpoint is
/// referenced in the result. The optional partition is a cross-check: it
/// must match the model's own routing partition.
inline TrainResult train_loop(VectorFieldModel& model, const std::vector<DataPoint>& dataset,
                              const std::vector<DataPoint>& holdout, const TrainLoopConfig& cfg,
                              Rng& rng, const ExpertPartition* partition = nullptr) {
    if (dataset.empty()) throw DomainError("train_loop: empty dataset");
    if (partition && model.partition() &&
        partition->num_experts != model.partition()->num_experts)
        throw DomainError("train_loop: partition disagrees with the model's experts");

    Adam opt(cfg.adam);
    Rng val_rng = rng.fork(0x5EED);

    TrainResult result;
    MetricTrace loss_trace;
    loss_trace.name = "train_loss";
    loss_trace.orientation = MetricOrientation::LowerBetter;
    MetricTrace val_trace;
    val_trace.name = cfg.val_metric == ValidationMetric::Psnr ? "psnr" : "neg_loss";
    val_trace.orientation = MetricOrientation::HigherBetter;

    auto write_ckpt = [&](std::uint64_t iter) {
        if (cfg.checkpoint_dir.empty()) return std::string();
        std::filesystem::create_directories(cfg.checkpoint_dir);
        const std::string path =
            cfg.checkpoint_dir + "/ckpt_" + std::to_string(iter) + ".lsrckpt";
        nlohmann::json meta;
        meta["stage"] = cfg.stage;
        meta["iteration"] = iter;
        meta["expert_index"] = model.num_experts() > 1 ? "routed" : "shared";
        meta["rng_counter"] = rng.counter();
        meta["metrics"] = {{"train_loss", loss_trace.points.empty() ? 0.0
                                                                    : loss_trace.points.back().second}};
        save_checkpoint(path, model.params(), meta);
        return path;
    };

    for (std::size_t iter = 1; iter <= cfg.total_iters; ++iter) {
        std::vector<FlowSample> batch;
        std::vector<const Conditioning*> conds;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const DataPoint& dp = dataset[rng.next_below(dataset.size())];
            FlowSample fs;
            fs.z1 = dp.z1;
            fs.t = rng.uniform();
            fs.z0 = rng.normal_tensor<double>(dp.z1.shape);
            batch.push_back(std::move(fs));
            conds.push_back(&dp.cond);
        }

        double loss = 0;
        try {
            ParamSet grads;
            loss = model.cfm_loss_and_grad(batch, conds, grads);
            opt.step(model.params(), grads);
        } catch (const NonFiniteError&) {
            // Divergence marker, flush, and halt with the last good checkpoint.
            const std::uint64_t it = static_cast<std::uint64_t>(iter);
            if (!loss_trace.points.empty() && loss_trace.points.back().first >= it) {
                loss_trace.points.push_back({it + 1, std::nan("")});
            } else {
                loss_trace.points.push_back({it, std::nan("")});
            }
            result.diverged = true;
            result.diverged_at = it;
            break;
        }

        if (iter % cfg.eval_interval == 0) {
            loss_trace.append(iter, loss);
            val_trace.append(iter, train_detail::validation_value(model, holdout, cfg, val_rng));
            const std::string p = write_ckpt(iter);
            if (!p.empty()) result.last_good_checkpoint = p;
        }
    }

    result.traces.push_back(std::move(loss_trace));
    result.traces.push_back(std::move(val_trace));
    return result;
}

/// Box-downsample by `factor` plus seeded Gaussian pixel noise. Stand-in for
/// a real degradation pipeline at toy scale.
inline TensorD toy_degrade(const TensorD& hr, std::size_t factor, double noise_sigma, Rng& rng) {
    if (hr.rank() != 3) throw ShapeError("toy_degrade expects [C,H,W]");
    if (factor == 0) throw ShapeError("toy_degrade: factor must be >= 1");
    const std::size_t c = hr.shape[0], h = hr.shape[1], w = hr.shape[2];
    if (h % factor != 0 || w % factor != 0)
        throw ShapeError("toy_degrade: factor must divide H and W");
    const std::size_t oh = h / factor, ow = w / factor;
    TensorD out({c, oh, ow});
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = 0;
                for (std::size_t di = 0; di < factor; ++di)
                    for (std::size_t dj = 0; dj < factor; ++dj)
                        acc += hr.data[(ch * h + i * factor + di) * w + j * factor + dj];
                out.data[(ch * oh + i) * ow + j] = acc * inv + noise_sigma * rng.normal();
            }
    return out;
}

/// Nearest-neighbor upsample; pairs with toy_degrade to put the LR image
/// back on the latent grid for conditioning.
inline TensorD nearest_upsample(const TensorD& lr, std::size_t factor) {
    if (lr.rank() != 3) throw ShapeError("nearest_upsample expects [C,H,W]");
    const std::size_t c = lr.shape[0], h = lr.shape[1], w = lr.shape[2];
    TensorD out({c, h * factor, w * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * factor; ++i)
            for (std::size_t j = 0; j < w * factor; ++j)
                out.data[(ch * h * factor + i) * w * factor + j] =
                    lr.data[(ch * h + i / factor) * w + j / factor];
    return out;
}

/// Energy distance between two point clouds: 2 E|X-Y| - E|X-X'| - E|Y-Y'|.
inline double energy_distance(const std::vector<TensorD>& xs, const std::vector<TensorD>& ys) {
    if (xs.empty() || ys.empty()) throw DomainError("energy_distance: empty sample set");
    auto dist = [](const TensorD& a, const TensorD& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const double d = a.data[i] - b.data[i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    double exy = 0, exx = 0, eyy = 0;
    for (const auto& x : xs)
        for (const auto& y : ys) exy += dist(x, y);
    exy /= static_cast<double>(xs.size() * ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < xs.size(); ++j) exx += dist(xs[i], xs[j]);
    exx /= static_cast<double>(xs.size() * xs.size());
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = 0; j < ys.size(); ++j) eyy += dist(ys[i], ys[j]);
    eyy /= static_cast<double>(ys.size() * ys.size());
    return 2.0 * exy - exx - eyy;
}

/// Balanced two-Gaussians mixture in 2-D, the density toy used across tests.
inline std::vector<DataPoint> two_gaussians_dataset(std::size_t n, Rng& rng, double separation = 2.0,
                                                    double sigma = 0.5) {
    std::vector<DataPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = (i % 2 == 0) ? separation : -separation;
        DataPoint dp;
        dp.z1 = TensorD({2}, std::vector<double>{cx + sigma * rng.normal(), cx + sigma * rng.normal()});
        out.push_back(std::move(dp));
    }
    return out;
}

} // namespace linearsr
