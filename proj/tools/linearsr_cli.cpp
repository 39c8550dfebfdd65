// linearsr command-line front end: experiment runner for the attention,
// flow-matching, MoE-planning, knee-detection and benchmarking modules.
// stdout carries machine-readable results (JSON/CSV); stderr carries
// diagnostics. Exit codes: 0 ok, 1 runtime/domain error, 2 config error,
// 3 training diverged to NaN.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "linearsr/bench.hpp"
#include "linearsr/esgf.hpp"
#include "linearsr/flowmatch.hpp"
#include "linearsr/model.hpp"
#include "linearsr/persist.hpp"
#include "linearsr/snrmoe.hpp"
#include "linearsr/trace.hpp"

namespace fs = std::filesystem;
using namespace linearsr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::string default_run_dir(std::uint64_t seed) {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::localtime(&now));
    return std::string("runs/") + buf + "-seed" + std::to_string(seed);
}

ExpertPartition partition_from_config(const RunConfig& cfg) {
    auto schedule = LogSnrSchedule::from_sigma(cfg.moe_sigma_min, cfg.moe_sigma_max);
    return derive_partition(schedule, cfg.moe_anchor_t, cfg.moe_depth);
}

std::unique_ptr<VectorFieldModel> build_model(const RunConfig& cfg, Rng& init_rng) {
    ExpertPartition part;
    std::size_t experts = 1;
    if (cfg.moe_enabled) {
        part = partition_from_config(cfg);
        experts = part.num_experts;
    }
    if (cfg.model_type == "mlp2d") {
        MlpConfig mc;
        mc.hidden = cfg.model_hidden;
        mc.embed_dim = cfg.model_embed_dim;
        mc.num_experts = experts;
        return std::make_unique<MlpVectorField>(mc, init_rng, part);
    }
    DitConfig dc;
    dc.channels = cfg.model_channels;
    dc.height = cfg.model_height;
    dc.width = cfg.model_width;
    dc.num_blocks = cfg.model_blocks;
    dc.attention = AttentionConfig{cfg.model_heads, cfg.model_head_dim, cfg.model_epsilon};
    dc.ffn_expand = cfg.model_ffn_expand;
    dc.stem_channels = cfg.model_stem_channels;
    dc.stem_in_channels = cfg.model_channels;
    dc.num_experts = experts;
    return std::make_unique<DitModel>(dc, init_rng, part);
}

/// Smooth random field: a handful of low-frequency sinusoids per channel.
TensorD toy_hr_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    TensorD img({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double fx = 1.0 + rng.uniform() * 2.0;
        const double fy = 1.0 + rng.uniform() * 2.0;
        const double px = rng.uniform() * 6.28;
        const double py = rng.uniform() * 6.28;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                img.data[(ch * h + i) * w + j] =
                    0.5 + 0.25 * std::sin(fx * i / double(h) * 6.28 + px) *
                              std::cos(fy * j / double(w) * 6.28 + py);
    }
    return img;
}

std::vector<DataPoint> build_dataset(const RunConfig& cfg, Rng& rng) {
    std::vector<DataPoint> ds;
    if (cfg.model_type == "mlp2d") return two_gaussians_dataset(cfg.data_num_samples, rng);
    for (std::size_t i = 0; i < cfg.data_num_samples; ++i) {
        DataPoint dp;
        dp.z1 = toy_hr_image(cfg.model_channels, cfg.model_height, cfg.model_width, rng);
        TensorD lr = toy_degrade(dp.z1, cfg.data_degrade_factor, cfg.data_noise_sigma, rng);
        dp.cond.x_lr = nearest_upsample(lr, cfg.data_degrade_factor);
        ds.push_back(std::move(dp));
    }
    return ds;
}

void apply_checkpoint(VectorFieldModel& model, const Checkpoint& ck) {
    if (ck.params.size() != model.params().size())
        throw FormatError("checkpoint has " + std::to_string(ck.params.size()) +
                          " tensors, model expects " + std::to_string(model.params().size()));
    for (auto& [name, t] : model.params()) {
        const TensorD* src = nullptr;
        for (const auto& [n2, t2] : ck.params)
            if (n2 == name) src = &t2;
        if (!src) throw FormatError("checkpoint missing tensor '" + name + "'");
        if (src->shape != t.shape)
            throw FormatError("checkpoint tensor '" + name + "' shape mismatch");
        t = *src;
    }
}

void write_pgm(const std::string& path, const TensorD& img, std::size_t channel = 0) {
    const std::size_t h = img.shape[1], w = img.shape[2];
    std::ofstream f(path, std::ios::binary);
    f << "P2\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            double v = img.data[(channel * h + i) * w + j];
            v = std::min(1.0, std::max(0.0, v));
            f << static_cast<int>(v * 255.0 + 0.5) << (j + 1 < w ? " " : "");
        }
        f << "\n";
    }
}

void write_ppm(const std::string& path, const TensorD& img) {
    const std::size_t h = img.shape[1], w = img.shape[2];
    std::ofstream f(path, std::ios::binary);
    f << "P3\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t c = 0; c < 3; ++c) {
                double v = img.data[(c * h + i) * w + j];
                v = std::min(1.0, std::max(0.0, v));
                f << static_cast<int>(v * 255.0 + 0.5) << (c < 2 ? " " : "");
            }
            f << (j + 1 < w ? "  " : "");
        }
        f << "\n";
    }
}

// 3-channel tensors become color PPMs, anything else a grayscale PGM of
// channel 0
std::string write_image(const std::string& stem, const TensorD& img) {
    if (img.shape[0] == 3) {
        write_ppm(stem + ".ppm", img);
        return stem + ".ppm";
    }
    write_pgm(stem + ".pgm", img);
    return stem + ".pgm";
}

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return parse_run_config(path);
}

TrainLoopConfig loop_config(const RunConfig& cfg, const std::string& ckpt_dir,
                            const std::string& stage) {
    TrainLoopConfig lc;
    lc.total_iters = cfg.train_iters;
    lc.batch_size = cfg.train_batch;
    lc.eval_interval = cfg.train_eval_interval;
    lc.adam = AdamConfig{cfg.opt_lr, cfg.opt_beta1, cfg.opt_beta2, cfg.opt_eps};
    lc.val_metric = cfg.model_type == "dit" ? ValidationMetric::Psnr : ValidationMetric::NegLoss;
    lc.sampler.num_steps = cfg.sampler_steps;
    lc.checkpoint_dir = ckpt_dir;
    lc.stage = stage;
    return lc;
}

int cmd_plan_moe(double sigma_min, double sigma_max, double anchor_t, std::size_t depth,
                 const std::string& format) {
    auto schedule = LogSnrSchedule::from_sigma(sigma_min, sigma_max);
    ExpertPartition part = derive_partition(schedule, anchor_t, depth);
    std::cout << emit_routing_table(part, format);
    return kExitOk;
}

int cmd_detect_knee(const std::string& trace_path, const std::string& metric, std::size_t window,
                    double min_gain, double osc_ratio) {
    std::vector<MetricTrace> traces = read_trace_csv(trace_path);
    const MetricTrace* chosen = nullptr;
    for (const auto& t : traces)
        if (metric.empty() || t.name == metric) {
            chosen = &t;
            break;
        }
    if (!chosen) throw DomainError("metric '" + metric + "' not found in trace file");
    KneeConfig cfg{window, min_gain, osc_ratio};
    KneeReport rep = detect_knee(*chosen, cfg);
    nlohmann::json j = knee_report_json(rep);
    j["metric"] = chosen->name;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_bench(const std::string& impls, BenchConfig bc, const std::string& out_dir) {
    std::vector<AttentionImpl> to_run;
    if (impls == "linear" || impls == "both") to_run.push_back(AttentionImpl::Linear);
    if (impls == "naive" || impls == "both") to_run.push_back(AttentionImpl::Naive);
    if (impls == "noop") to_run.push_back(AttentionImpl::Noop);
    if (to_run.empty()) throw DomainError("bench: --impl must be linear, naive, both or noop");

    nlohmann::json summary;
    std::string csv = "impl,n,d,heads,rep,seconds\n";
    for (AttentionImpl impl : to_run) {
        std::cerr << "benchmarking " << impl_name(impl) << " attention...\n";
        auto points = run_sweep(impl, bc);
        std::string part = bench_points_csv(points);
        csv += part.substr(part.find('\n') + 1);
        if (impl != AttentionImpl::Noop) {
            ScalingFit fit = fit_scaling(points);
            summary[impl_name(impl)] = bench_summary_json(points, fit);
        }
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir + "/bench.csv") << csv;
        std::ofstream(out_dir + "/bench_summary.json") << summary.dump(2) << "\n";
    }
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    Rng init_rng = rng.fork(1);
    Rng data_rng = rng.fork(2);
    Rng train_rng = rng.fork(3);

    auto model = build_model(cfg, init_rng);
    auto dataset = build_dataset(cfg, data_rng);
    const std::size_t holdout_n = std::min<std::size_t>(dataset.size() / 8 + 1, 32);
    std::vector<DataPoint> holdout(dataset.end() - holdout_n, dataset.end());
    dataset.resize(dataset.size() - holdout_n);

    TrainLoopConfig lc = loop_config(cfg, out_dir + "/checkpoints", "stage1");
    const ExpertPartition* part = model->partition();

    // iters = 0 still produces the initial checkpoint.
    fs::create_directories(lc.checkpoint_dir);
    nlohmann::json init_meta = {{"stage", lc.stage}, {"iteration", 0}};
    save_checkpoint(lc.checkpoint_dir + "/ckpt_0.lsrckpt", model->params(), init_meta);

    TrainResult res = train_loop(*model, dataset, holdout, lc, train_rng, part);
    write_trace_csv(out_dir + "/traces.csv", res.traces);

    nlohmann::json j;
    j["out_dir"] = out_dir;
    j["diverged"] = res.diverged;
    if (res.diverged) j["diverged_at"] = res.diverged_at;
    if (!res.last_good_checkpoint.empty()) j["last_good_checkpoint"] = res.last_good_checkpoint;
    std::cout << j.dump(2) << "\n";
    if (res.diverged) {
        std::cerr << "training diverged to NaN at iteration " << res.diverged_at << "\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt_path, std::size_t num,
               const std::string& out_dir) {
    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    Rng init_rng = rng.fork(1);
    Rng sample_rng = rng.fork(4);

    auto model = build_model(cfg, init_rng);
    if (!ckpt_path.empty()) apply_checkpoint(*model, load_checkpoint(ckpt_path));

    SamplerConfig sc{cfg.sampler_steps};
    if (cfg.model_type == "mlp2d") {
        std::ofstream f(out_dir + "/samples.csv");
        f << "index,x,y\n";
        f.precision(17);
        for (std::size_t i = 0; i < num; ++i) {
            TensorD z0 = sample_rng.normal_tensor<double>({2});
            TensorD z = euler_sample(*model, z0, Conditioning{}, sc);
            f << i << "," << z.data[0] << "," << z.data[1] << "\n";
        }
        std::cout << nlohmann::json{{"samples", num}, {"file", out_dir + "/samples.csv"}}.dump(2)
                  << "\n";
        return kExitOk;
    }

    Rng data_rng = rng.fork(2);
    for (std::size_t i = 0; i < num; ++i) {
        TensorD hr = toy_hr_image(cfg.model_channels, cfg.model_height, cfg.model_width, data_rng);
        TensorD lr = toy_degrade(hr, cfg.data_degrade_factor, cfg.data_noise_sigma, data_rng);
        Conditioning cond;
        cond.x_lr = nearest_upsample(lr, cfg.data_degrade_factor);
        TensorD z0 = sample_rng.normal_tensor<double>(hr.shape);
        TensorD out = euler_sample(*model, z0, cond, sc);
        write_image(out_dir + "/sample_" + std::to_string(i), out);
        write_image(out_dir + "/sample_" + std::to_string(i) + "_lr", cond.x_lr);
        write_image(out_dir + "/sample_" + std::to_string(i) + "_hr", hr);
    }
    std::cout << nlohmann::json{{"samples", num}, {"dir", out_dir}}.dump(2) << "\n";
    return kExitOk;
}

int cmd_validate_ckpt(const std::string& path) {
    ValidationReport rep = validate_checkpoint(path);
    nlohmann::json j;
    j["ok"] = rep.ok;
    j["version"] = rep.version;
    j["tensor_count"] = rep.tensor_count;
    j["total_elements"] = rep.total_elements;
    j["all_finite"] = rep.all_finite;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

/// Two-stage ESGF demonstration on the density toy: stage 1 trains past its
/// knee, stage 2 fine-tunes twice with a deliberately aggressive learning
/// rate, once from the knee checkpoint and once from the latest, and the
/// stability comparison is reported.
int cmd_esgf_demo(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    Rng init_rng = rng.fork(1);
    Rng data_rng = rng.fork(2);
    Rng train_rng = rng.fork(3);

    auto model = build_model(cfg, init_rng);
    auto dataset = build_dataset(cfg, data_rng);
    const std::size_t holdout_n = std::min<std::size_t>(dataset.size() / 8 + 1, 32);
    std::vector<DataPoint> holdout(dataset.end() - holdout_n, dataset.end());
    dataset.resize(dataset.size() - holdout_n);

    std::cerr << "stage 1: training " << cfg.train_iters << " iterations...\n";
    TrainLoopConfig lc1 = loop_config(cfg, out_dir + "/stage1_ckpts", "stage1");
    TrainResult stage1 = train_loop(*model, dataset, holdout, lc1, train_rng, model->partition());
    write_trace_csv(out_dir + "/stage1_traces.csv", stage1.traces);
    if (stage1.diverged) {
        std::cerr << "stage 1 diverged; cannot demo\n";
        return kExitDiverged;
    }

    // Knee on the validation trace, then the floor-rule checkpoint.
    const MetricTrace& val = stage1.traces[1];
    KneeReport knee = detect_knee(val);
    std::vector<CheckpointRef> ckpts;
    for (const auto& [it, v] : stage1.traces[0].points)
        ckpts.push_back({lc1.checkpoint_dir + "/ckpt_" + std::to_string(it) + ".lsrckpt", it});
    CheckpointRef knee_ckpt = select_finetune_checkpoint({val}, ckpts);
    CheckpointRef latest_ckpt = ckpts.back();
    std::cerr << "knee at iteration " << knee.knee_iteration << "; fine-tuning from "
              << knee_ckpt.iteration << " (knee) and " << latest_ckpt.iteration << " (latest)\n";

    auto finetune = [&](const CheckpointRef& start, const std::string& tag) {
        auto m2 = build_model(cfg, init_rng);
        apply_checkpoint(*m2, load_checkpoint(start.path));
        RunConfig c2 = cfg;
        c2.opt_lr = cfg.opt_lr * 50.0; // deliberately unstable stage-2 rate
        c2.train_iters = std::max<std::size_t>(cfg.train_iters / 4, 10 * cfg.train_eval_interval);
        TrainLoopConfig lc2 = loop_config(c2, "", "stage2-" + tag);
        Rng ft_rng = rng.fork(tag == "knee" ? 10 : 11);
        TrainResult r = train_loop(*m2, dataset, holdout, lc2, ft_rng, m2->partition());
        write_trace_csv(out_dir + "/stage2_" + tag + "_traces.csv", r.traces);
        return r;
    };

    TrainResult ft_knee = finetune(knee_ckpt, "knee");
    TrainResult ft_latest = finetune(latest_ckpt, "latest");

    StabilityReport rep = compare_stability(ft_knee.traces[0], ft_latest.traces[0]);
    nlohmann::json j = stability_report_json(rep);
    j["knee_iteration"] = knee.knee_iteration;
    j["knee_checkpoint"] = knee_ckpt.iteration;
    j["latest_checkpoint"] = latest_ckpt.iteration;
    j["run_a_is"] = "knee-start";
    j["run_b_is"] = "latest-start";
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"linearsr: linear-attention flow-matching toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "run config file (key = value)");
    app.add_option("--seed", seed_flag, "override the config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out-dir", out_dir, "output directory (default runs/<timestamp>-seed<seed>)");

    auto* train = app.add_subcommand("train", "train a flow-matching model, emit traces + checkpoints");
    auto* sample = app.add_subcommand("sample", "draw samples from a trained checkpoint");
    std::string ckpt_path;
    std::size_t num_samples = 16;
    sample->add_option("--ckpt", ckpt_path, "checkpoint to load");
    sample->add_option("--num", num_samples, "number of samples");

    auto* plan = app.add_subcommand("plan-moe", "derive log-SNR expert boundaries");
    double sigma_min = 0.0118, sigma_max = 33.78, anchor_t = 0.875;
    std::size_t depth = 2;
    std::string format = "json";
    plan->add_option("--sigma-min", sigma_min, "effective sigma_min");
    plan->add_option("--sigma-max", sigma_max, "effective sigma_max");
    plan->add_option("--anchor-t", anchor_t, "anchor time in (0,1)");
    plan->add_option("--depth", depth, "bisection depth (2^depth experts)");
    plan->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    auto* knee = app.add_subcommand("detect-knee", "knee-point report from a trace CSV");
    std::string trace_path, metric;
    std::size_t window = 9;
    double min_gain = 0.005, osc_ratio = 4.0;
    knee->add_option("--trace", trace_path, "trace CSV (iteration,metric_name,value)")->required();
    knee->add_option("--metric", metric, "metric name (default: first in file)");
    knee->add_option("--window", window, "smoothing window W");
    knee->add_option("--min-gain", min_gain, "plateau threshold as a fraction of total gain");
    knee->add_option("--osc-ratio", osc_ratio, "oscillation variance ratio rho");

    auto* bench = app.add_subcommand("bench", "attention complexity sweep + exponent fit");
    std::string impls = "both";
    BenchConfig bc;
    bench->add_option("--impl", impls, "linear, naive, both or noop");
    bench->add_option("--n-list", bc.n_list, "sequence lengths (ascending)");
    bench->add_option("--d", bc.d, "head dim");
    bench->add_option("--heads", bc.heads, "number of heads");
    bench->add_option("--reps", bc.reps, "timed repetitions per point");
    bench->add_option("--warmup", bc.warmup, "warmup iterations");

    auto* demo = app.add_subcommand("esgf-demo", "two-stage knee-vs-latest fine-tuning comparison");
    auto* validate = app.add_subcommand("validate-ckpt", "structural checkpoint validation");
    std::string validate_path;
    validate->add_option("ckpt", validate_path, "checkpoint path")->required();

    // Let --config/--seed/--out-dir appear after the subcommand name too.
    for (CLI::App* sc : app.get_subcommands([](const CLI::App*) { return true; }))
        sc->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        try {
            cfg = load_config_or_default(config_path);
        } catch (const ConfigError& e) {
            std::cerr << e.what() << "\n";
            return kExitConfig;
        }
        if (seed_set) cfg.seed = seed_flag;
        if (out_dir.empty()) out_dir = default_run_dir(cfg.seed);

        if (plan->parsed()) return cmd_plan_moe(sigma_min, sigma_max, anchor_t, depth, format);
        if (knee->parsed()) return cmd_detect_knee(trace_path, metric, window, min_gain, osc_ratio);
        if (bench->parsed()) return cmd_bench(impls, bc, out_dir);
        if (train->parsed()) return cmd_train(cfg, out_dir);
        if (sample->parsed()) return cmd_sample(cfg, ckpt_path, num_samples, out_dir);
        if (demo->parsed()) return cmd_esgf_demo(cfg, out_dir);
        if (validate->parsed()) return cmd_validate_ckpt(validate_path);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitError;
    }
    return kExitOk;
}
