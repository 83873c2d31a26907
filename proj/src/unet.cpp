#include "stvid/unet.hpp"

#include <cmath>

namespace stvid {

int T2IConfig::channels_at(int level) const {
    if (level < 0 || level >= levels) throw ConfigError("level out of range");
    return base_channels * channel_mult[static_cast<std::size_t>(level)];
}

void T2IConfig::validate() const {
    if (levels < 2) throw ConfigError("T2IConfig: levels must be >= 2");
    if (static_cast<int>(channel_mult.size()) != levels)
        throw ConfigError("T2IConfig: channel_mult must have one entry per level");
    if (cond_dim % 2 != 0) throw ConfigError("T2IConfig: cond_dim must be even");
    for (int l = 0; l < levels; ++l)
        if (channels_at(l) % 2 != 0) throw ConfigError("T2IConfig: channels must be even at every level");
    if (in_channels < 1 || out_channels < 1 || num_classes < 1) throw ConfigError("T2IConfig: bad channel/class counts");
}

namespace {

Tensor init_normal(std::vector<int> shape, double std_dev, Rng& rng) {
    Tensor t = Tensor::randn(std::move(shape), rng);
    for (double& v : t.data) v *= std_dev;
    return quantize_f32(t);
}

void add_conv(NamedVars& p, const std::string& name, int out_ch, int in_ch, int kh, int kw, Rng& rng,
              bool zero = false) {
    double std_dev = 1.0 / std::sqrt(static_cast<double>(in_ch * kh * kw));
    p[name + ".w"] = leaf(zero ? Tensor::zeros({out_ch, in_ch, kh, kw}) : init_normal({out_ch, in_ch, kh, kw}, std_dev, rng));
    p[name + ".b"] = leaf(Tensor::zeros({out_ch}));
}

void add_norm(NamedVars& p, const std::string& name, int ch) {
    p[name + ".g"] = leaf(Tensor::full({ch}, 1.0));
    p[name + ".b"] = leaf(Tensor::zeros({ch}));
}

void add_linear(NamedVars& p, const std::string& name, int out_ch, int in_ch, Rng& rng) {
    p[name + ".w"] = leaf(init_normal({out_ch, in_ch}, 1.0 / std::sqrt(static_cast<double>(in_ch)), rng));
    p[name + ".b"] = leaf(Tensor::zeros({out_ch}));
}

void add_res_block(NamedVars& p, const std::string& prefix, int in_ch, int out_ch, int cond_dim, Rng& rng) {
    add_conv(p, prefix + ".conv1", out_ch, in_ch, 3, 3, rng);
    add_norm(p, prefix + ".norm1", out_ch);
    add_linear(p, prefix + ".emb", out_ch, cond_dim, rng);
    add_conv(p, prefix + ".conv2", out_ch, out_ch, 3, 3, rng);
    add_norm(p, prefix + ".norm2", out_ch);
    if (in_ch != out_ch) add_conv(p, prefix + ".skip", out_ch, in_ch, 1, 1, rng);
}

}  // namespace

T2IModel build_t2i(const T2IConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x7321));
    T2IModel m;
    m.cfg = cfg;
    NamedVars& p = m.params;
    int c0 = cfg.channels_at(0);

    add_conv(p, "in_conv", c0, cfg.in_channels, 3, 3, rng);
    add_linear(p, "temb.fc1", cfg.cond_dim, cfg.cond_dim, rng);
    add_linear(p, "temb.fc2", cfg.cond_dim, cfg.cond_dim, rng);
    p["cls.table"] = leaf(init_normal({cfg.num_classes, cfg.cond_dim},
                                      1.0 / std::sqrt(static_cast<double>(cfg.cond_dim)), rng));

    for (int l = 0; l < cfg.levels; ++l) {
        int in_ch = (l == 0) ? c0 : cfg.channels_at(l - 1);
        add_res_block(p, "enc" + std::to_string(l), in_ch, cfg.channels_at(l), cfg.cond_dim, rng);
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        int in_ch = cfg.channels_at(l + 1) + cfg.channels_at(l);
        add_res_block(p, "dec" + std::to_string(l), in_ch, cfg.channels_at(l), cfg.cond_dim, rng);
    }
    add_norm(p, "out_norm", c0);
    add_conv(p, "out_conv", cfg.out_channels, c0, 3, 3, rng, /*zero=*/true);
    return m;
}

Tensor sinusoidal_embedding(const std::vector<int>& ts, int dim) {
    if (dim % 2 != 0) throw ConfigError("sinusoidal_embedding: dim must be even");
    int half = dim / 2;
    Tensor out({static_cast<int>(ts.size()), dim});
    for (std::size_t n = 0; n < ts.size(); ++n)
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            double a = static_cast<double>(ts[n]) * freq;
            out.at(static_cast<int>(n), 2 * i) = std::sin(a);
            out.at(static_cast<int>(n), 2 * i + 1) = std::cos(a);
        }
    return out;
}

const Var& get_param(const NamedVars& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw ConfigError("missing parameter tensor: " + name);
    return it->second;
}

namespace {

Var res_block(const NamedVars& p, const std::string& prefix, const Var& x, const Var& emb) {
    Var h = conv2d(x, get_param(p, prefix + ".conv1.w"), 1, 1);
    h = add_channel_bias(h, get_param(p, prefix + ".conv1.b"));
    h = group_norm(h, get_param(p, prefix + ".norm1.g"), get_param(p, prefix + ".norm1.b"));
    h = silu(h);
    h = add_sample_channel(h, linear(emb, get_param(p, prefix + ".emb.w"), get_param(p, prefix + ".emb.b")));
    h = conv2d(h, get_param(p, prefix + ".conv2.w"), 1, 1);
    h = add_channel_bias(h, get_param(p, prefix + ".conv2.b"));
    h = group_norm(h, get_param(p, prefix + ".norm2.g"), get_param(p, prefix + ".norm2.b"));
    h = silu(h);
    Var skip = x;
    if (p.count(prefix + ".skip.w")) {
        skip = conv2d(x, get_param(p, prefix + ".skip.w"), 0, 0);
        skip = add_channel_bias(skip, get_param(p, prefix + ".skip.b"));
    }
    return add(h, skip);
}

}  // namespace

Var embed_condition(const NamedVars& p, const std::vector<int>& ts, const std::vector<int>& labels, int cond_dim) {
    Var e = constant(sinusoidal_embedding(ts, cond_dim));
    e = linear(e, get_param(p, "temb.fc1.w"), get_param(p, "temb.fc1.b"));
    e = silu(e);
    e = linear(e, get_param(p, "temb.fc2.w"), get_param(p, "temb.fc2.b"));
    return add(e, row_select(get_param(p, "cls.table"), labels));
}

Var forward_t2i(const T2IModel& m, const Var& x, const std::vector<int>& ts, const std::vector<int>& labels) {
    const T2IConfig& cfg = m.cfg;
    const NamedVars& p = m.params;
    const Tensor& X = x->value;
    if (X.rank() != 4 || X.shape[1] != cfg.in_channels)
        throw ConfigError("forward_t2i: expected [N," + std::to_string(cfg.in_channels) + ",H,W], got " + X.shape_str());
    int N = X.shape[0], H = X.shape[2], W = X.shape[3];
    int div = 1 << (cfg.levels - 1);
    if (H % div != 0 || W % div != 0)
        throw ConfigError("forward_t2i: H,W " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by " + std::to_string(div));
    if (static_cast<int>(ts.size()) != N || static_cast<int>(labels.size()) != N)
        throw ConfigError("forward_t2i: ts/labels length must equal batch size");

    Var emb = embed_condition(p, ts, labels, cfg.cond_dim);
    Var h = conv2d(x, get_param(p, "in_conv.w"), 1, 1);
    h = add_channel_bias(h, get_param(p, "in_conv.b"));

    std::vector<Var> skips;
    for (int l = 0; l < cfg.levels; ++l) {
        h = res_block(p, "enc" + std::to_string(l), h, emb);
        if (l < cfg.levels - 1) {
            skips.push_back(h);
            h = resize_nearest(h, 2, Resize::down);
            h = resize_nearest(h, 3, Resize::down);
        }
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        h = resize_nearest(h, 2, Resize::up);
        h = resize_nearest(h, 3, Resize::up);
        h = concat(h, skips[static_cast<std::size_t>(l)], 1);
        h = res_block(p, "dec" + std::to_string(l), h, emb);
    }
    h = group_norm(h, get_param(p, "out_norm.g"), get_param(p, "out_norm.b"));
    h = silu(h);
    h = conv2d(h, get_param(p, "out_conv.w"), 1, 1);
    h = add_channel_bias(h, get_param(p, "out_conv.b"));
    return h;
}

Tensor forward_t2i(const T2IModel& m, const Tensor& x, const std::vector<int>& ts, const std::vector<int>& labels) {
    return forward_t2i(m, constant(x), ts, labels)->value;
}

std::int64_t t2i_param_count(const T2IConfig& cfg) {
    auto conv = [](int o, int i, int k) { return static_cast<std::int64_t>(o) * i * k * k + o; };
    auto norm = [](int c) { return static_cast<std::int64_t>(2) * c; };
    auto lin = [](int o, int i) { return static_cast<std::int64_t>(o) * i + o; };
    auto res = [&](int in_ch, int out_ch, int e) {
        std::int64_t n = conv(out_ch, in_ch, 3) + norm(out_ch) + lin(out_ch, e) + conv(out_ch, out_ch, 3) + norm(out_ch);
        if (in_ch != out_ch) n += conv(out_ch, in_ch, 1);
        return n;
    };
    int c0 = cfg.channels_at(0), e = cfg.cond_dim;
    std::int64_t total = conv(c0, cfg.in_channels, 3) + 2 * lin(e, e) +
                         static_cast<std::int64_t>(cfg.num_classes) * e;
    for (int l = 0; l < cfg.levels; ++l)
        total += res(l == 0 ? c0 : cfg.channels_at(l - 1), cfg.channels_at(l), e);
    for (int l = cfg.levels - 2; l >= 0; --l)
        total += res(cfg.channels_at(l + 1) + cfg.channels_at(l), cfg.channels_at(l), e);
    total += norm(c0) + conv(cfg.out_channels, c0, 3);
    return total;
}

NamedTensors snapshot(const NamedVars& p) {
    NamedTensors out;
    for (const auto& [name, var] : p) out[name] = var->value;
    return out;
}

std::uint64_t hash_params(const NamedVars& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, var] : p) {
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= fnv1a(var->value);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace stvid
