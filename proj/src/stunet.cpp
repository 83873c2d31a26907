#include "stvid/stunet.hpp"

#include <algorithm>
#include <cmath>

namespace stvid {

void STUNetConfig::validate() const {
    t2i.validate();
    if (temporal_kernel < 3 || temporal_kernel % 2 == 0)
        throw ConfigError("STUNetConfig: temporal_kernel must be odd and >= 3");
    if (attn_blocks_coarsest < 1) throw ConfigError("STUNetConfig: need at least one temporal attention block");
    for (int l : temporal_levels)
        if (l < 0 || l >= t2i.levels - 1)
            throw ConfigError("STUNetConfig: temporal level transition " + std::to_string(l) + " out of range");
}

namespace {

bool has_temporal(const STUNetConfig& cfg, int transition) {
    return std::find(cfg.temporal_levels.begin(), cfg.temporal_levels.end(), transition) != cfg.temporal_levels.end();
}

Tensor nn_down_kernel(int ch, int kt) {
    Tensor k({ch, ch, kt});
    for (int c = 0; c < ch; ++c) k.at(c, c, (kt - 1) / 2) = 1.0;
    return k;
}

Tensor nn_up_kernel(int ch, int kt) {
    // out[2i] = out[2i+1] = x[i] at init (taps j = 0 and 1)
    Tensor k({ch, ch, kt});
    for (int c = 0; c < ch; ++c) {
        k.at(c, c, 0) = 1.0;
        k.at(c, c, 1) = 1.0;
    }
    return k;
}

// factorized space-time convolution: new spatial 3x3, then temporal kt, with a
// zero-initialized output projection gating the residual branch
void add_temporal_conv_block(NamedVars& p, const std::string& prefix, int ch, int kt, Rng& rng) {
    Tensor sw = Tensor::randn({ch, ch, 3, 3}, rng);
    double s_std = 1.0 / std::sqrt(static_cast<double>(ch * 9));
    for (double& v : sw.data) v *= s_std;
    p[prefix + ".sconv.w"] = leaf(quantize_f32(sw));
    p[prefix + ".sconv.b"] = leaf(Tensor::zeros({ch}));
    p[prefix + ".norm1.g"] = leaf(Tensor::full({ch}, 1.0));
    p[prefix + ".norm1.b"] = leaf(Tensor::zeros({ch}));
    Tensor w = Tensor::randn({ch, ch, kt}, rng);
    double t_std = 1.0 / std::sqrt(static_cast<double>(ch * kt));
    for (double& v : w.data) v *= t_std;
    p[prefix + ".tconv.w"] = leaf(quantize_f32(w));
    p[prefix + ".tconv.b"] = leaf(Tensor::zeros({ch}));
    p[prefix + ".norm2.g"] = leaf(Tensor::full({ch}, 1.0));
    p[prefix + ".norm2.b"] = leaf(Tensor::zeros({ch}));
    p[prefix + ".proj.w"] = leaf(Tensor::zeros({ch, ch, 1}));
    p[prefix + ".proj.b"] = leaf(Tensor::zeros({ch}));
}

void add_attn_block(NamedVars& p, const std::string& prefix, int ch, Rng& rng) {
    double std_dev = 1.0 / std::sqrt(static_cast<double>(ch));
    for (const char* n : {".q.w", ".k.w", ".v.w"}) {
        Tensor w = Tensor::randn({ch, ch}, rng);
        for (double& v : w.data) v *= std_dev;
        p[prefix + n] = leaf(quantize_f32(w));
    }
    p[prefix + ".proj.w"] = leaf(Tensor::zeros({ch, ch}));
    p[prefix + ".proj.b"] = leaf(Tensor::zeros({ch}));
}

Var temporal_conv_block(const NamedVars& p, const std::string& prefix, const Var& x, int kt) {
    Var h = conv2d(x, get_param(p, prefix + ".sconv.w"), 1, 1);
    h = add_channel_bias(h, get_param(p, prefix + ".sconv.b"));
    h = group_norm(h, get_param(p, prefix + ".norm1.g"), get_param(p, prefix + ".norm1.b"));
    h = silu(h);
    h = conv1d_time(h, get_param(p, prefix + ".tconv.w"), (kt - 1) / 2);
    h = add_channel_bias(h, get_param(p, prefix + ".tconv.b"));
    h = group_norm(h, get_param(p, prefix + ".norm2.g"), get_param(p, prefix + ".norm2.b"));
    h = silu(h);
    h = conv1d_time(h, get_param(p, prefix + ".proj.w"), 0);
    h = add_channel_bias(h, get_param(p, prefix + ".proj.b"));
    return add(x, h);
}

Var temporal_attn_block(const NamedVars& p, const std::string& prefix, const Var& x) {
    const Var& wq = get_param(p, prefix + ".q.w");
    const Var& wk = get_param(p, prefix + ".k.w");
    const Var& wv = get_param(p, prefix + ".v.w");
    const Var& wp = get_param(p, prefix + ".proj.w");
    int H = x->value.shape[2], W = x->value.shape[3];
    std::vector<Var> sites;
    sites.reserve(static_cast<std::size_t>(H) * W);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            Var s = site(x, h, w);  // [T,C]
            Var o = attention(matmul(s, wq), matmul(s, wk), matmul(s, wv));
            sites.push_back(matmul(o, wp));
        }
    Var out = scatter_sites(sites, H, W);
    out = add_channel_bias(out, get_param(p, prefix + ".proj.b"));
    return add(x, out);
}

}  // namespace

STUNetModel inflate(const T2IModel& t2i, const STUNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.t2i.levels != t2i.cfg.levels || cfg.t2i.base_channels != t2i.cfg.base_channels ||
        cfg.t2i.channel_mult != t2i.cfg.channel_mult || cfg.t2i.in_channels != t2i.cfg.in_channels ||
        cfg.t2i.cond_dim != t2i.cfg.cond_dim)
        throw ConfigError("inflate: STUNetConfig.t2i does not match the image model config");

    STUNetModel m;
    m.cfg = cfg;
    m.cfg.cond_expanded = false;
    for (const auto& [name, var] : t2i.params) m.spatial[name] = leaf(var->value, /*requires_grad=*/false);

    Rng rng(mix_seed(seed, 0x57a9));
    int kt = cfg.temporal_kernel;
    int coarsest = cfg.t2i.levels - 1;
    for (int l = 0; l < cfg.t2i.levels; ++l) {
        if (l == coarsest) continue;  // coarsest level gets attention blocks instead
        add_temporal_conv_block(m.temporal, "tenc" + std::to_string(l), cfg.t2i.channels_at(l), kt, rng);
    }
    for (int i = 0; i < cfg.attn_blocks_coarsest; ++i)
        add_attn_block(m.temporal, "tmid.attn" + std::to_string(i), cfg.t2i.channels_at(coarsest), rng);
    for (int l = cfg.t2i.levels - 2; l >= 0; --l)
        add_temporal_conv_block(m.temporal, "tdec" + std::to_string(l), cfg.t2i.channels_at(l), kt, rng);
    for (int l : cfg.temporal_levels) {
        m.temporal["tdown" + std::to_string(l) + ".w"] = leaf(nn_down_kernel(cfg.t2i.channels_at(l), kt));
        m.temporal["tup" + std::to_string(l) + ".w"] = leaf(nn_up_kernel(cfg.t2i.channels_at(l + 1), kt));
    }
    return m;
}

STUNetModel build_ssr(STUNetConfig cfg, std::uint64_t seed) {
    cfg.t2i.in_channels = 6;  // noisy high-res + upsampled low-res conditioning
    T2IModel img = build_t2i(cfg.t2i, mix_seed(seed, 0x55f2));
    return inflate(img, cfg, seed);
}

namespace {

void collect_stats(std::vector<ActStat>* collect, const std::string& block, const Var& x) {
    if (collect == nullptr) return;
    double mean = 0.0;
    for (double v : x->value.data) mean += v;
    mean /= static_cast<double>(x->value.numel());
    double var = 0.0;
    for (double v : x->value.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x->value.numel());
    collect->push_back({block, mean, std::sqrt(var)});
}

}  // namespace

Var forward_stunet(const STUNetModel& m, const Var& x, int t, int label, std::vector<ActStat>* collect) {
    const STUNetConfig& cfg = m.cfg;
    const T2IConfig& icfg = cfg.t2i;
    const NamedVars& sp = m.spatial;
    const Tensor& X = x->value;
    int expected_in = cfg.cond_expanded ? icfg.in_channels + 4 : icfg.in_channels;
    if (X.rank() != 4 || X.shape[1] != expected_in)
        throw ConfigError("forward_stunet: expected [T," + std::to_string(expected_in) + ",H,W], got " + X.shape_str());
    int T = X.shape[0], H = X.shape[2], W = X.shape[3];
    int sdiv = 1 << (icfg.levels - 1);
    if (H % sdiv != 0 || W % sdiv != 0)
        throw ConfigError("forward_stunet: H,W " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by " + std::to_string(sdiv));
    int tdiv = 1 << cfg.temporal_downsamples();
    if (T % tdiv != 0)
        throw ConfigError("forward_stunet: T " + std::to_string(T) + " not divisible by " + std::to_string(tdiv));

    // frames share one timestep/label; the embedding row count must follow the
    // current (possibly temporally downsampled) frame count
    std::map<int, Var> emb_cache;
    auto emb_for = [&](int frames) -> Var {
        auto it = emb_cache.find(frames);
        if (it != emb_cache.end()) return it->second;
        std::vector<int> ts(static_cast<std::size_t>(frames), t);
        std::vector<int> labels(static_cast<std::size_t>(frames), label);
        Var e = embed_condition(sp, ts, labels, icfg.cond_dim);
        emb_cache.emplace(frames, e);
        return e;
    };

    Var h;
    if (cfg.cond_expanded) {
        Var xj = slice(x, 1, 0, icfg.in_channels);
        Var xc = slice(x, 1, icfg.in_channels, 4);
        h = add(conv2d(xj, get_param(sp, "in_conv.w"), 1, 1),
                conv2d(xc, get_param(m.temporal, "cond_in.w"), 1, 1));
    } else {
        h = conv2d(x, get_param(sp, "in_conv.w"), 1, 1);
    }
    h = add_channel_bias(h, get_param(sp, "in_conv.b"));

    int kt = cfg.temporal_kernel;
    int coarsest = icfg.levels - 1;
    std::vector<Var> skips;

    // res_block is spatial-only; frames behave as a batch axis, matching the
    // image model frame for frame.
    auto spatial_block = [&](const std::string& prefix, const Var& v) {
        Var h2 = conv2d(v, get_param(sp, prefix + ".conv1.w"), 1, 1);
        h2 = add_channel_bias(h2, get_param(sp, prefix + ".conv1.b"));
        h2 = group_norm(h2, get_param(sp, prefix + ".norm1.g"), get_param(sp, prefix + ".norm1.b"));
        h2 = silu(h2);
        Var emb = emb_for(h2->value.shape[0]);
        h2 = add_sample_channel(h2, linear(emb, get_param(sp, prefix + ".emb.w"), get_param(sp, prefix + ".emb.b")));
        h2 = conv2d(h2, get_param(sp, prefix + ".conv2.w"), 1, 1);
        h2 = add_channel_bias(h2, get_param(sp, prefix + ".conv2.b"));
        h2 = group_norm(h2, get_param(sp, prefix + ".norm2.g"), get_param(sp, prefix + ".norm2.b"));
        h2 = silu(h2);
        Var skip = v;
        if (sp.count(prefix + ".skip.w")) {
            skip = conv2d(v, get_param(sp, prefix + ".skip.w"), 0, 0);
            skip = add_channel_bias(skip, get_param(sp, prefix + ".skip.b"));
        }
        return add(h2, skip);
    };

    for (int l = 0; l < icfg.levels; ++l) {
        h = spatial_block("enc" + std::to_string(l), h);
        if (l == coarsest) {
            for (int i = 0; i < cfg.attn_blocks_coarsest; ++i) {
                collect_stats(collect, "tmid.attn" + std::to_string(i), h);
                h = temporal_attn_block(m.temporal, "tmid.attn" + std::to_string(i), h);
            }
        } else {
            collect_stats(collect, "tenc" + std::to_string(l), h);
            h = temporal_conv_block(m.temporal, "tenc" + std::to_string(l), h, kt);
            skips.push_back(h);
            h = resize_nearest(h, 2, Resize::down);
            h = resize_nearest(h, 3, Resize::down);
            if (has_temporal(cfg, l)) h = time_down_conv(h, get_param(m.temporal, "tdown" + std::to_string(l) + ".w"));
        }
    }
    for (int l = icfg.levels - 2; l >= 0; --l) {
        h = resize_nearest(h, 2, Resize::up);
        h = resize_nearest(h, 3, Resize::up);
        if (has_temporal(cfg, l)) h = time_up_conv(h, get_param(m.temporal, "tup" + std::to_string(l) + ".w"));
        h = concat(h, skips[static_cast<std::size_t>(l)], 1);
        h = spatial_block("dec" + std::to_string(l), h);
        collect_stats(collect, "tdec" + std::to_string(l), h);
        h = temporal_conv_block(m.temporal, "tdec" + std::to_string(l), h, kt);
    }
    h = group_norm(h, get_param(sp, "out_norm.g"), get_param(sp, "out_norm.b"));
    h = silu(h);
    h = conv2d(h, get_param(sp, "out_conv.w"), 1, 1);
    h = add_channel_bias(h, get_param(sp, "out_conv.b"));
    return h;
}

Tensor forward_stunet(const STUNetModel& m, const Tensor& x, int t, int label) {
    return forward_stunet(m, constant(x), t, label)->value;
}

void expand_input_conv(STUNetModel& m) {
    if (m.cfg.cond_expanded) throw ConfigError("expand_input_conv: input already expanded");
    if (m.cfg.t2i.in_channels != 3)
        throw ConfigError("expand_input_conv: only a 3-channel model can be expanded to 7");
    int c0 = m.cfg.t2i.channels_at(0);
    m.temporal["cond_in.w"] = leaf(Tensor::zeros({c0, 4, 3, 3}));
    m.cfg.cond_expanded = true;
}

void install_spatial(STUNetModel& m, const NamedTensors& spatial) {
    if (spatial.size() != m.spatial.size())
        throw ConfigError("install_spatial: tensor count mismatch");
    for (const auto& [name, t] : spatial) {
        auto it = m.spatial.find(name);
        if (it == m.spatial.end()) throw ConfigError("install_spatial: unknown tensor " + name);
        if (t.shape != it->second->value.shape)
            throw ConfigError("install_spatial: shape mismatch for " + name + ": " + shape_str(t.shape) +
                              " vs " + it->second->value.shape_str());
    }
    for (const auto& [name, t] : spatial) m.spatial[name] = leaf(t, /*requires_grad=*/false);
}

std::vector<LevelStats> activation_stats(const STUNetConfig& cfg, int T, int H, int W) {
    cfg.validate();
    std::vector<LevelStats> out;
    int in_ch = cfg.cond_expanded ? cfg.t2i.in_channels + 4 : cfg.t2i.in_channels;
    out.push_back({-1, T, H, W, in_ch, static_cast<std::int64_t>(T) * H * W * in_ch});
    int t = T, h = H, w = W;
    for (int l = 0; l < cfg.t2i.levels; ++l) {
        int c = cfg.t2i.channels_at(l);
        out.push_back({l, t, h, w, c, static_cast<std::int64_t>(t) * h * w * c});
        if (l < cfg.t2i.levels - 1) {
            h /= 2;
            w /= 2;
            if (has_temporal(cfg, l)) t /= 2;
        }
    }
    return out;
}

double coarsest_compression_ratio(const STUNetConfig& cfg, int T, int H, int W) {
    auto stats = activation_stats(cfg, T, H, W);
    return static_cast<double>(stats.back().elements) / static_cast<double>(stats.front().elements);
}

}  // namespace stvid
