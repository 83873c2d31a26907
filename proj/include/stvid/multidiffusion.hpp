#pragma once

#include "stvid/diffusion.hpp"

namespace stvid {

// Overlapping temporal segments of length T' covering [0, T). Starts advance by
// `stride`; the final start is clamped (shifted back) to T - T' so the tail is
// covered with a full-length segment.
struct WindowPlan {
    int total_frames = 0;    // T
    int segment_frames = 0;  // T'
    int stride = 0;
    std::vector<int> starts;

    int count() const { return static_cast<int>(starts.size()); }
    std::vector<int> coverage_counts() const;
    void validate() const;
};

WindowPlan plan_windows(int T, int T_prime, int stride);

// Least-squares reconciliation of per-segment predictions: the unique minimizer
// of sum_i ||J' - Phi(J_i)||^2 over the overlap structure, i.e. the per-frame
// coverage-weighted mean. Each prediction is [T',C,H,W]; result is [T,C,H,W].
Tensor aggregate(const WindowPlan& plan, const std::vector<Tensor>& segment_predictions);

// Per-segment noise prediction: x_seg is [T',C,H,W], `start` the segment offset.
using SegmentDenoiser = std::function<Tensor(const Tensor& x_seg, int segment_index, int start, int t)>;

// Reverse diffusion where every step denoises each overlapping segment and
// carries the aggregated video as the single state between steps. With a
// one-segment plan this is bit-identical to the windowless sampler.
Tensor multidiffusion_sample_loop(const SegmentDenoiser& eps_fn, const WindowPlan& plan,
                                  const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                                  const std::vector<int>& full_shape, std::uint64_t seed);

// SSR stage: spatially upsample `low_res` (nearest, 2x), then multidiffuse the
// high-res video with the SSR model conditioned per segment on the matching
// low-res segment.
Tensor ssr_multidiffusion_sample(const STUNetModel& ssr, const Tensor& low_res, const WindowPlan& plan,
                                 const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                                 std::uint64_t seed, int label);

}  // namespace stvid
