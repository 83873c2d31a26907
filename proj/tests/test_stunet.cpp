#include <doctest.h>

#include <cmath>

#include "stvid/diffusion.hpp"
#include "stvid/train.hpp"

using namespace stvid;

namespace {

STUNetConfig tiny_cfg() {
    STUNetConfig cfg;
    cfg.t2i.levels = 2;
    cfg.t2i.base_channels = 4;
    cfg.t2i.channel_mult = {1, 2};
    cfg.t2i.cond_dim = 8;
    cfg.temporal_kernel = 3;
    cfg.temporal_levels = {0};
    cfg.attn_blocks_coarsest = 2;
    return cfg;
}

// stands in for a trained image model: the zero output head would otherwise
// block every upstream gradient and hide real defects
void randomize_head(T2IModel& t2i, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn(t2i.params.at("out_conv.w")->value.shape, rng);
    for (double& v : w.data) v *= 0.2;
    t2i.params["out_conv.w"] = leaf(quantize_f32(w));
}

STUNetModel tiny_model(std::uint64_t seed = 0) {
    STUNetConfig cfg = tiny_cfg();
    T2IModel t2i = build_t2i(cfg.t2i, seed);
    randomize_head(t2i, mix_seed(seed, 77));
    return inflate(t2i, cfg, seed);
}

Tensor constant_clip(const Tensor& frame, int T) {
    Tensor clip({T, frame.shape[0], frame.shape[1], frame.shape[2]});
    for (int t = 0; t < T; ++t)
        std::copy(frame.data.begin(), frame.data.end(), clip.data.begin() + t * frame.numel());
    return clip;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

// one optimizer step on the temporal weights from a random denoising objective
void temporal_step(STUNetModel& m, Adam& opt, std::uint64_t seed) {
    Rng rng(seed);
    int in_ch = m.cfg.cond_expanded ? 7 : m.cfg.t2i.in_channels;
    Tensor x = Tensor::randn({4, in_ch, 8, 8}, rng);
    if (m.cfg.cond_expanded) {
        // make channels 3..6 a valid <C,M> pair: M binary, C masked
        for (int t = 0; t < 4; ++t)
            for (int h = 0; h < 8; ++h)
                for (int w = 0; w < 8; ++w) {
                    double mv = (rng.uniform() < 0.5) ? 1.0 : 0.0;
                    x.at(t, 6, h, w) = mv;
                    for (int c = 3; c < 6; ++c) x.at(t, c, h, w) *= mv;
                }
    }
    Tensor target = Tensor::randn({4, 3, 8, 8}, rng);
    Var loss = mse(forward_stunet(m, constant(x), 3, 1), constant(target));
    GradMap gm = backward(loss);
    NamedTensors grads;
    for (const auto& [name, var] : m.temporal)
        if (var->requires_grad) grads[name] = grad_of(gm, var);
    opt.step(m.temporal, grads);
}

}  // namespace

TEST_CASE("inflate: temporal resamplers reproduce nearest-neighbor at init") {
    STUNetModel m = tiny_model();
    const Tensor& down_k = get_param(m.temporal, "tdown0.w")->value;
    const Tensor& up_k = get_param(m.temporal, "tup0.w")->value;

    int cd = down_k.shape[0];
    Tensor x({4, cd, 1, 1});
    for (int t = 0; t < 4; ++t)
        for (int c = 0; c < cd; ++c) x.at(t, c, 0, 0) = 10.0 * (t + 1) + c;
    Tensor d = time_down_conv(constant(x), constant(down_k))->value;
    CHECK(d.shape[0] == 2);
    for (int c = 0; c < cd; ++c) {
        CHECK(d.at(0, c, 0, 0) == x.at(0, c, 0, 0));  // [a,b,c,d] -> [a,c]
        CHECK(d.at(1, c, 0, 0) == x.at(2, c, 0, 0));
    }

    int cu = up_k.shape[0];
    Tensor x2({2, cu, 1, 1});
    for (int t = 0; t < 2; ++t)
        for (int c = 0; c < cu; ++c) x2.at(t, c, 0, 0) = 10.0 * (t + 1) + c;
    Tensor u = time_up_conv(constant(x2), constant(up_k))->value;
    CHECK(u.shape[0] == 4);
    for (int c = 0; c < cu; ++c) {  // [a,c] -> [a,a,c,c]
        CHECK(u.at(0, c, 0, 0) == x2.at(0, c, 0, 0));
        CHECK(u.at(1, c, 0, 0) == x2.at(0, c, 0, 0));
        CHECK(u.at(2, c, 0, 0) == x2.at(1, c, 0, 0));
        CHECK(u.at(3, c, 0, 0) == x2.at(1, c, 0, 0));
    }
}

TEST_CASE("inflate: every temporal output projection starts at exactly zero") {
    STUNetModel m = tiny_model();
    int proj_tensors = 0;
    for (const auto& [name, var] : m.temporal)
        if (name.find(".proj.") != std::string::npos) {
            ++proj_tensors;
            for (double v : var->value.data) CHECK(v == 0.0);
        }
    CHECK(proj_tensors > 0);
}

TEST_CASE("inflate: spatial tensors are a frozen copy of the image model") {
    STUNetConfig cfg = tiny_cfg();
    T2IModel t2i = build_t2i(cfg.t2i, 11);
    STUNetModel m = inflate(t2i, cfg, 11);
    CHECK(m.spatial.size() == t2i.params.size());
    for (const auto& [name, var] : t2i.params) {
        REQUIRE(m.spatial.count(name) == 1);
        CHECK(fnv1a(m.spatial.at(name)->value) == fnv1a(var->value));
        CHECK_FALSE(m.spatial.at(name)->requires_grad);
    }
}

TEST_CASE("forward_stunet: identity at init on temporally constant clips") {
    STUNetConfig cfg = tiny_cfg();
    T2IModel t2i = build_t2i(cfg.t2i, 21);
    randomize_head(t2i, 210);
    STUNetModel m = inflate(t2i, cfg, 21);
    Rng rng(100);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor frame = Tensor::randn({3, 8, 8}, rng);
        Tensor clip = constant_clip(frame, 4);
        for (int t : {0, 250, 999}) {
            Tensor video_out = forward_stunet(m, clip, t, 1);
            Tensor img_in({1, 3, 8, 8}, frame.data);
            Tensor img_out = forward_t2i(t2i, img_in, {t}, {1});
            for (int f = 0; f < 4; ++f) {
                Tensor frame_out({1, 3, 8, 8});
                std::copy(video_out.data.begin() + f * img_out.numel(),
                          video_out.data.begin() + (f + 1) * img_out.numel(), frame_out.data.begin());
                CHECK(max_abs_diff(frame_out, img_out) < 1e-6);
            }
        }
    }
}

TEST_CASE("forward_stunet: output shape equals input shape for T=8, H=W=16") {
    STUNetModel m = tiny_model(2);
    Rng rng(3);
    Tensor x = Tensor::randn({8, 3, 16, 16}, rng);
    Tensor y = forward_stunet(m, x, 10, 0);
    CHECK(y.shape == std::vector<int>{8, 3, 16, 16});
}

TEST_CASE("forward_stunet: temporal indivisibility errors at forward time") {
    STUNetModel m = tiny_model(2);
    Rng rng(4);
    Tensor x = Tensor::randn({5, 3, 8, 8}, rng);
    CHECK_THROWS_AS(forward_stunet(m, x, 0, 0), ConfigError);
}

TEST_CASE("training step on temporal weights leaves spatial weights bit-exact") {
    STUNetModel m = tiny_model(5);
    std::uint64_t spatial_before = hash_params(m.spatial);
    std::uint64_t temporal_before = hash_params(m.temporal);
    Adam opt;
    opt.lr = 1e-2;
    temporal_step(m, opt, 42);
    CHECK(hash_params(m.spatial) == spatial_before);
    CHECK(hash_params(m.temporal) != temporal_before);
}

TEST_CASE("gradient flow: composed loss passes grad_check on temporal weights") {
    STUNetModel m = tiny_model(6);
    Adam opt;
    opt.lr = 1e-2;
    temporal_step(m, opt, 7);  // move off the zero-projection init so every path is live
    temporal_step(m, opt, 8);

    Rng rng(9);
    Tensor x = Tensor::randn({4, 3, 8, 8}, rng);
    Tensor target = Tensor::randn({4, 3, 8, 8}, rng);
    for (const std::string name : {"tenc0.proj.w", "tdown0.w", "tmid.attn0.q.w", "tdec0.tconv.w"}) {
        STUNetModel probe = m;  // shallow copy; replacing a map entry is local
        Tensor w0 = get_param(m.temporal, name)->value;
        auto f = [&](const Var& v) {
            probe.temporal[name] = v;
            return mse(forward_stunet(probe, constant(x), 5, 2), constant(target));
        };
        CHECK(grad_check(f, w0) < 1e-3);
    }
}

TEST_CASE("expand_input_conv: zero-init equivalence is bit-exact") {
    STUNetModel m = tiny_model(12);
    Rng rng(13);
    Tensor j = Tensor::randn({4, 3, 8, 8}, rng);
    Tensor before = forward_stunet(m, j, 77, 1);
    Tensor in_conv_before = get_param(m.spatial, "in_conv.w")->value;

    expand_input_conv(m);
    CHECK_THROWS_AS(expand_input_conv(m), ConfigError);

    Tensor j7({4, 7, 8, 8});
    for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 8; ++h)
                for (int w = 0; w < 8; ++w) j7.at(t, c, h, w) = j.at(t, c, h, w);
    Tensor after = forward_stunet(m, j7, 77, 1);
    REQUIRE(after.same_shape(before));
    for (std::size_t i = 0; i < after.data.size(); ++i) CHECK(after.data[i] == before.data[i]);

    // the pretrained kernel slice is untouched
    CHECK(fnv1a(get_param(m.spatial, "in_conv.w")->value) == fnv1a(in_conv_before));
}

TEST_CASE("expand_input_conv: gradients reach the new conditioning slices") {
    STUNetModel m = tiny_model(14);
    expand_input_conv(m);
    Adam opt;
    opt.lr = 1e-2;
    temporal_step(m, opt, 15);
    double norm = 0.0;
    for (double v : get_param(m.temporal, "cond_in.w")->value.data) norm += v * v;
    CHECK(norm > 0.0);
}

TEST_CASE("build_ssr: 6-channel input, 3-channel output, deterministic build") {
    STUNetConfig cfg = tiny_cfg();
    STUNetModel a = build_ssr(cfg, 31);
    STUNetModel b = build_ssr(cfg, 31);
    CHECK(hash_params(a.spatial) == hash_params(b.spatial));
    CHECK(hash_params(a.temporal) == hash_params(b.temporal));
    CHECK(a.cfg.t2i.in_channels == 6);

    Rng rng(32);
    Tensor x = Tensor::randn({4, 6, 8, 8}, rng);
    Tensor y = forward_stunet(a, x, 100, 0);
    CHECK(y.shape == std::vector<int>{4, 3, 8, 8});
}

TEST_CASE("build_ssr: identity at init against the per-frame image-SSR oracle") {
    STUNetConfig cfg = tiny_cfg();
    cfg.t2i.in_channels = 6;
    T2IModel img = build_t2i(cfg.t2i, mix_seed(33, 0x55f2));
    STUNetModel ssr = build_ssr(tiny_cfg(), 33);
    // at init both predict zero through the shared zero head; compare anyway

    Rng rng(34);
    Tensor frame = Tensor::randn({6, 8, 8}, rng);
    Tensor clip = constant_clip(frame, 4);
    Tensor video_out = forward_stunet(ssr, clip, 40, 2);
    Tensor img_out = forward_t2i(img, Tensor({1, 6, 8, 8}, frame.data), {40}, {2});
    for (int f = 0; f < 4; ++f) {
        Tensor frame_out({1, 3, 8, 8});
        std::copy(video_out.data.begin() + f * img_out.numel(),
                  video_out.data.begin() + (f + 1) * img_out.numel(), frame_out.data.begin());
        CHECK(max_abs_diff(frame_out, img_out) < 1e-6);
    }
}

TEST_CASE("install_spatial: swaps values, keeps temporal weights untouched") {
    STUNetModel m = tiny_model(41);
    std::uint64_t temporal_before = hash_params(m.temporal);
    NamedTensors repl = snapshot(m.spatial);
    for (auto& [name, t] : repl)
        for (double& v : t.data) v += 0.125;
    install_spatial(m, repl);
    CHECK(hash_params(m.temporal) == temporal_before);
    CHECK(fnv1a(get_param(m.spatial, "in_conv.w")->value) == fnv1a(repl.at("in_conv.w")));

    NamedTensors bad = repl;
    bad.erase("in_conv.w");
    CHECK_THROWS_AS(install_spatial(m, bad), ConfigError);
}

TEST_CASE("compression accounting: coarsest level holds < 1/16 of the input elements") {
    STUNetConfig cfg;
    cfg.t2i.levels = 3;
    cfg.t2i.base_channels = 4;
    cfg.t2i.channel_mult = {1, 2, 2};
    cfg.t2i.cond_dim = 8;
    cfg.temporal_levels = {0, 1};  // two temporal downsamples
    auto stats = activation_stats(cfg, 8, 16, 16);
    CHECK(stats.front().elements == 8 * 16 * 16 * 3);
    CHECK(stats.back().frames == 2);
    CHECK(stats.back().height == 4);
    double ratio = coarsest_compression_ratio(cfg, 8, 16, 16);
    CHECK(ratio < 1.0 / 16.0);
}
