#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "linearsr/errors.hpp"
#include "linearsr/tensor.hpp"

#include <json.hpp>

namespace linearsr {

/// Ordered named parameter tensors; the on-disk tensor directory preserves
/// this order so round trips are bit-exact.
using ParamSet = std::vector<std::pair<std::string, TensorD>>;

inline TensorD* find_param(ParamSet& params, const std::string& name) {
    for (auto& [n, t] : params)
        if (n == name) return &t;
    return nullptr;
}

struct Checkpoint {
    nlohmann::json metadata;
    ParamSet params;
};

namespace persist_detail {

constexpr char kMagic[8] = {'L', 'S', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string context = "header";

    void need(std::size_t n) {
        if (pos + n > buf.size())
            throw TruncationError("file truncated while reading " + context + " (need " +
                                  std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                                  ", file has " + std::to_string(buf.size()) + ")");
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }

    float f32() {
        std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace persist_detail

/// Layout (all integers little-endian):
///   magic "LSRCKPT1" | version u32 | meta_len u64 | metadata JSON (UTF-8)
///   | tensor_count u64 | per tensor: name_len u64, name, dtype u8
///   (0 = f32, 1 = f64), rank u64, extents u64..., raw LE scalar data.
/// Documented in docs/formats.md.
inline std::string encode_checkpoint(const ParamSet& params, const nlohmann::json& metadata) {
    using namespace persist_detail;
    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kVersion);
    const std::string meta = metadata.dump();
    put_u64(out, meta.size());
    out += meta;
    put_u64(out, params.size());
    for (const auto& [name, t] : params) {
        put_u64(out, name.size());
        out += name;
        out.push_back(1); // f64
        put_u64(out, t.rank());
        for (auto e : t.shape) put_u64(out, e);
        for (double d : t.data) put_f64(out, d);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            const nlohmann::json& metadata) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
    const std::string buf = encode_checkpoint(params, metadata);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("short write to " + path);
}

inline Checkpoint decode_checkpoint(const std::string& buf) {
    using namespace persist_detail;
    Reader r{buf};
    r.context = "magic";
    const std::string magic = r.bytes(8);
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw FormatError("bad checkpoint magic");
    r.context = "version";
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    r.context = "metadata";
    const std::uint64_t meta_len = r.u64();
    const std::string meta = r.bytes(static_cast<std::size_t>(meta_len));
    try {
        ck.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }

    r.context = "tensor directory";
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        r.context = "tensor name (entry " + std::to_string(i) + ")";
        const std::uint64_t name_len = r.u64();
        const std::string name = r.bytes(static_cast<std::size_t>(name_len));
        r.context = "tensor '" + name + "'";
        r.need(1);
        const unsigned char dtype = static_cast<unsigned char>(buf[r.pos++]);
        if (dtype != 0 && dtype != 1)
            throw FormatError("tensor '" + name + "': unknown dtype code " + std::to_string(dtype));
        const std::uint64_t rank = r.u64();
        if (rank > 16) throw FormatError("tensor '" + name + "': implausible rank");
        std::vector<std::size_t> shape;
        std::uint64_t elems = 1;
        for (std::uint64_t a = 0; a < rank; ++a) {
            const std::uint64_t e = r.u64();
            if (e == 0) throw FormatError("tensor '" + name + "': zero extent");
            shape.push_back(static_cast<std::size_t>(e));
            elems *= e;
        }
        TensorD t(shape);
        if (dtype == 1) {
            r.need(static_cast<std::size_t>(elems) * 8);
            for (std::uint64_t e = 0; e < elems; ++e) t.data[e] = r.f64();
        } else {
            r.need(static_cast<std::size_t>(elems) * 4);
            for (std::uint64_t e = 0; e < elems; ++e) t.data[e] = static_cast<double>(r.f32());
        }
        ck.params.push_back({name, std::move(t)});
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

struct ValidationReport {
    bool ok = false;
    std::uint32_t version = 0;
    std::size_t tensor_count = 0;
    std::size_t total_elements = 0;
    bool all_finite = false;
    std::string error;
};

/// Structural and finiteness check; throws the same errors loading would.
inline ValidationReport validate_checkpoint(const std::string& path) {
    ValidationReport rep;
    Checkpoint ck = load_checkpoint(path);
    rep.version = persist_detail::kVersion;
    rep.tensor_count = ck.params.size();
    for (const auto& [name, t] : ck.params) {
        rep.total_elements += t.size();
        if (!t.all_finite()) throw NonFiniteError("tensor '" + name + "' contains NaN/Inf");
    }
    rep.all_finite = true;
    rep.ok = true;
    return rep;
}

// ---------------------------------------------------------------------------
// RunConfig: flat `key = value` text with # comments and optional [section]
// headers that prefix keys ("[train]" + "iters = 5" -> "train.iters").
// Unknown keys are rejected.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string model_type = "mlp2d"; // mlp2d | dit
    std::size_t model_hidden = 64;
    std::size_t model_blocks = 2;
    std::size_t model_heads = 2;
    std::size_t model_head_dim = 8;
    double model_epsilon = 1e-6;
    std::size_t model_channels = 1;
    std::size_t model_height = 8;
    std::size_t model_width = 8;
    std::size_t model_stem_channels = 3;
    std::size_t model_ffn_expand = 2;
    std::size_t model_embed_dim = 16;

    bool moe_enabled = false;
    std::size_t moe_depth = 2;
    double moe_anchor_t = 0.875;
    double moe_sigma_min = 0.0118;
    double moe_sigma_max = 33.78;

    double opt_lr = 1e-3;
    double opt_beta1 = 0.9;
    double opt_beta2 = 0.999;
    double opt_eps = 1e-8;

    std::size_t sampler_steps = 20;

    std::size_t train_iters = 2000;
    std::size_t train_batch = 64;
    std::size_t train_eval_interval = 50;

    std::size_t data_num_samples = 2048;
    std::size_t data_degrade_factor = 2;
    double data_noise_sigma = 0.01;

    std::uint64_t seed = 0;
};

namespace persist_detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace persist_detail

inline RunConfig parse_run_config(std::istream& is) {
    using persist_detail::trim;
    RunConfig cfg;

    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto set_size = [](std::size_t& dst) {
        return [&dst](const std::string& v) { dst = std::stoull(v); };
    };
    auto set_f64 = [](double& dst) {
        return [&dst](const std::string& v) { dst = std::stod(v); };
    };
    setters["model.type"] = [&cfg](const std::string& v) {
        if (v != "mlp2d" && v != "dit") throw ConfigError("model.type must be mlp2d or dit");
        cfg.model_type = v;
    };
    setters["model.hidden"] = set_size(cfg.model_hidden);
    setters["model.blocks"] = set_size(cfg.model_blocks);
    setters["model.heads"] = set_size(cfg.model_heads);
    setters["model.head_dim"] = set_size(cfg.model_head_dim);
    setters["model.epsilon"] = set_f64(cfg.model_epsilon);
    setters["model.channels"] = set_size(cfg.model_channels);
    setters["model.height"] = set_size(cfg.model_height);
    setters["model.width"] = set_size(cfg.model_width);
    setters["model.stem_channels"] = set_size(cfg.model_stem_channels);
    setters["model.ffn_expand"] = set_size(cfg.model_ffn_expand);
    setters["model.embed_dim"] = set_size(cfg.model_embed_dim);
    setters["moe.enabled"] = [&cfg](const std::string& v) {
        if (v != "true" && v != "false") throw ConfigError("moe.enabled must be true or false");
        cfg.moe_enabled = v == "true";
    };
    setters["moe.depth"] = set_size(cfg.moe_depth);
    setters["moe.anchor_t"] = set_f64(cfg.moe_anchor_t);
    setters["moe.sigma_min"] = set_f64(cfg.moe_sigma_min);
    setters["moe.sigma_max"] = set_f64(cfg.moe_sigma_max);
    setters["opt.lr"] = set_f64(cfg.opt_lr);
    setters["opt.beta1"] = set_f64(cfg.opt_beta1);
    setters["opt.beta2"] = set_f64(cfg.opt_beta2);
    setters["opt.eps"] = set_f64(cfg.opt_eps);
    setters["sampler.steps"] = set_size(cfg.sampler_steps);
    setters["train.iters"] = set_size(cfg.train_iters);
    setters["train.batch"] = set_size(cfg.train_batch);
    setters["train.eval_interval"] = set_size(cfg.train_eval_interval);
    setters["data.num_samples"] = set_size(cfg.data_num_samples);
    setters["data.degrade_factor"] = set_size(cfg.data_degrade_factor);
    setters["data.noise_sigma"] = set_f64(cfg.data_noise_sigma);
    setters["seed"] = [&cfg](const std::string& v) { cfg.seed = std::stoull(v); };

    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        // Strip quotes around string values.
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("unknown config key '" + key + "' at line " + std::to_string(lineno));
        try {
            it->second(val);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad value for '" + key + "' at line " + std::to_string(lineno) +
                              ": " + val);
        }
    }

    if (cfg.sampler_steps == 0) throw ConfigError("sampler.steps must be >= 1");
    if (cfg.train_batch == 0) throw ConfigError("train.batch must be >= 1");
    if (cfg.train_eval_interval == 0) throw ConfigError("train.eval_interval must be >= 1");
    return cfg;
}

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    return parse_run_config(f);
}

} // namespace linearsr
