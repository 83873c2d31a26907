#include "stvid/applications.hpp"

#include <cmath>

namespace stvid {

namespace {

void require_binary(const Tensor& mask, const char* what) {
    for (double v : mask.data)
        if (v != 0.0 && v != 1.0) throw ConfigError(std::string(what) + ": mask values must be exactly 0 or 1");
}

}  // namespace

ConditioningPair cond_image_to_video(const Tensor& first_frame, int T) {
    if (first_frame.rank() != 3 || first_frame.shape[0] != 3)
        throw ConfigError("cond_image_to_video: first frame must be [3,H,W], got " + first_frame.shape_str());
    if (T < 2) throw ConfigError("cond_image_to_video: T must be >= 2, nothing to animate");
    int H = first_frame.shape[1], W = first_frame.shape[2];
    ConditioningPair pair;
    pair.C = Tensor::zeros({T, 3, H, W});
    pair.M = Tensor::zeros({T, 1, H, W});
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) pair.C.at(0, c, h, w) = first_frame.at(c, h, w);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) pair.M.at(0, 0, h, w) = 1.0;
    return pair;
}

ConditioningPair cond_inpaint(const Tensor& video, const Tensor& region) {
    if (video.rank() != 4 || video.shape[1] != 3)
        throw ConfigError("cond_inpaint: video must be [T,3,H,W], got " + video.shape_str());
    if (region.rank() != 4 || region.shape[1] != 1 || region.shape[0] != video.shape[0] ||
        region.shape[2] != video.shape[2] || region.shape[3] != video.shape[3])
        throw ConfigError("cond_inpaint: region " + region.shape_str() + " does not match video " +
                          video.shape_str());
    require_binary(region, "cond_inpaint");
    int T = video.shape[0], H = video.shape[2], W = video.shape[3];
    ConditioningPair pair;
    pair.C = Tensor::zeros(video.shape);
    pair.M = Tensor::zeros(region.shape);
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double keep = 1.0 - region.at(t, 0, h, w);
                pair.M.at(t, 0, h, w) = keep;
                for (int c = 0; c < 3; ++c) pair.C.at(t, c, h, w) = video.at(t, c, h, w) * keep;
            }
    return pair;
}

ConditioningPair cond_cinemagraph(const Tensor& image, const Tensor& region, int T) {
    if (image.rank() != 3 || image.shape[0] != 3)
        throw ConfigError("cond_cinemagraph: image must be [3,H,W], got " + image.shape_str());
    if (region.rank() != 3 || region.shape[0] != 1 || region.shape[1] != image.shape[1] ||
        region.shape[2] != image.shape[2])
        throw ConfigError("cond_cinemagraph: region " + region.shape_str() + " does not match image " +
                          image.shape_str());
    if (T < 2) throw ConfigError("cond_cinemagraph: T must be >= 2");
    require_binary(region, "cond_cinemagraph");
    int H = image.shape[1], W = image.shape[2];
    ConditioningPair pair;
    pair.C = Tensor::zeros({T, 3, H, W});
    pair.M = Tensor::zeros({T, 1, H, W});
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                // the whole first frame is unmasked; later frames are masked
                // inside the region to animate
                double keep = (t == 0) ? 1.0 : 1.0 - region.at(0, h, w);
                pair.M.at(t, 0, h, w) = keep;
                for (int c = 0; c < 3; ++c) pair.C.at(t, c, h, w) = image.at(c, h, w) * keep;
            }
    return pair;
}

void StylePair::validate() const {
    if (orig.size() != style.size()) throw ConfigError("StylePair: tensor name sets differ in size");
    for (const auto& [name, t] : orig) {
        auto it = style.find(name);
        if (it == style.end()) throw ConfigError("StylePair: style map missing tensor " + name);
        if (it->second.shape != t.shape)
            throw ConfigError("StylePair: shape mismatch for " + name + ": " + shape_str(t.shape) + " vs " +
                              shape_str(it->second.shape));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("StylePair: alpha must be in [0,1]");
}

NamedTensors interpolate_style(const StylePair& pair) {
    pair.validate();
    NamedTensors out;
    for (const auto& [name, orig_t] : pair.orig) {
        const Tensor& style_t = pair.style.at(name);
        if (pair.alpha == 1.0) {
            out[name] = style_t;
        } else if (pair.alpha == 0.0) {
            out[name] = orig_t;
        } else {
            Tensor t = orig_t;
            for (std::size_t i = 0; i < t.data.size(); ++i)
                t.data[i] = pair.alpha * style_t.data[i] + (1.0 - pair.alpha) * orig_t.data[i];
            out[name] = std::move(t);
        }
    }
    return out;
}

NamedTensors interpolate_style(const NamedTensors& orig, const NamedTensors& style, double alpha) {
    StylePair pair{orig, style, alpha};
    return interpolate_style(pair);
}

Tensor sdedit_loop(const Denoiser& eps_fn, const NoiseSchedule& sch, const Tensor& input,
                   double strength, SamplerMode mode, int n_steps, std::uint64_t seed) {
    if (!(strength > 0.0 && strength <= 1.0))
        throw ConfigError("sdedit: strength must be in (0,1], got " + std::to_string(strength));
    int t0 = static_cast<int>(std::llround(strength * sch.steps));
    t0 = std::max(1, std::min(t0, sch.steps));
    if (t0 >= sch.steps)  // full re-noise: identical to unconditional sampling
        return sample_loop(eps_fn, sch, mode, n_steps, input.shape, seed);
    Rng rng(mix_seed(seed, 0xd1f));
    Tensor eps = Tensor::randn(input.shape, rng);
    Tensor x = q_sample(input, t0 - 1, eps, sch);
    return reverse_from(eps_fn, sch, mode, std::move(x), t0 - 1, n_steps, rng);
}

Tensor sdedit_video(const STUNetModel& m, const NoiseSchedule& sch, const Tensor& input,
                    double strength, SamplerMode mode, int n_steps, std::uint64_t seed, int label) {
    return sdedit_loop(model_denoiser(m, label), sch, input, strength, mode, n_steps, seed);
}

}  // namespace stvid
