#pragma once

#include "stvid/diffusion.hpp"

namespace stvid {

// ---- mask-conditioning constructors (all outputs satisfy C == C*M, M binary) ----

// Animate from a given first frame [3,H,W]: C holds the frame at t=0 and zeros
// after; M is all-ones on frame 0 and zero elsewhere. T must be >= 2.
ConditioningPair cond_image_to_video(const Tensor& first_frame, int T);

// Complete the region marked 1 in `region` [T,1,H,W]: M = 1 - region, C = video*M.
ConditioningPair cond_inpaint(const Tensor& video, const Tensor& region);

// Animate only `region` [1,H,W] of a still image [3,H,W]: frame 0 fully unmasked,
// later frames masked inside the region; C duplicates the image under M.
ConditioningPair cond_cinemagraph(const Tensor& image, const Tensor& region, int T);

// ---- stylized generation ----

struct StylePair {
    NamedTensors orig;
    NamedTensors style;
    double alpha = 0.5;  // operating range [0.5, 1]

    void validate() const;
};

// Elementwise alpha*style + (1-alpha)*orig over matching named tensors.
// alpha in [0,1] accepted; the endpoints reproduce the inputs bit-exactly.
NamedTensors interpolate_style(const StylePair& pair);
NamedTensors interpolate_style(const NamedTensors& orig, const NamedTensors& style, double alpha);

// ---- video-to-video editing ----

// Noises `input` to t0 = round(strength*steps) forward steps, then reverse-samples.
// strength 1 reproduces unconditional sampling exactly (same seed, same output).
Tensor sdedit_loop(const Denoiser& eps_fn, const NoiseSchedule& sch, const Tensor& input,
                   double strength, SamplerMode mode, int n_steps, std::uint64_t seed);
Tensor sdedit_video(const STUNetModel& m, const NoiseSchedule& sch, const Tensor& input,
                    double strength, SamplerMode mode, int n_steps, std::uint64_t seed, int label);

}  // namespace stvid
