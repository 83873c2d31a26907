#pragma once

#include <functional>
#include <optional>

#include "stvid/stunet.hpp"

namespace stvid {

enum class ScheduleKind { linear, cosine };
enum class SamplerMode { ddpm, ddim };

// Per-step noising tables. beta in (0,1), alpha = 1-beta, alpha_bar strictly
// decreasing with alpha_bar[0] close to 1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta, alpha, alpha_bar;

    void validate() const;
};

NoiseSchedule make_schedule(ScheduleKind kind, int steps);
ScheduleKind schedule_kind_from(const std::string& name);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sch);

// Masked conditioning video C [T,3,H,W] plus binary mask M [T,1,H,W].
// Invariants: M binary, C zero wherever M is zero.
struct ConditioningPair {
    Tensor C;
    Tensor M;

    void validate() const;
};

// Channel concat <J, C, M> -> [T,7,H,W]
Tensor assemble_conditional_input(const Tensor& J, const ConditioningPair& pair);

// Noise prediction at a given state and timestep index.
using Denoiser = std::function<Tensor(const Tensor& x, int t)>;

// One reverse transition tau -> tp of the eta-parameterized DDIM family
// (eta=0: DDIM, eta=1: DDPM ancestral). `z` is the posterior noise; null means none.
Tensor reverse_transition(const Tensor& x, const Tensor& eps_hat, const NoiseSchedule& sch, int tau,
                          int tp, SamplerMode mode, const Tensor* z);

// Evenly spaced descending timesteps from t_start to 0 (at most n_steps of them).
std::vector<int> timestep_ladder(int t_start, int n_steps);

// Reverse transitions from state `x` at timestep index `t_start` down to index 0,
// over `n_steps` evenly spaced timesteps. DDIM is the eta=0 update; DDPM draws
// posterior noise from `rng` per transition (none on the last). The returned
// tensor is the index-0 state.
Tensor reverse_from(const Denoiser& eps_fn, const NoiseSchedule& sch, SamplerMode mode, Tensor x,
                    int t_start, int n_steps, Rng& rng);

// Full reverse path from a fresh Gaussian draw of `shape`. Deterministic per seed.
Tensor sample_loop(const Denoiser& eps_fn, const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                   const std::vector<int>& shape, std::uint64_t seed);

struct SampleOpts {
    SamplerMode mode = SamplerMode::ddim;
    int n_steps = 50;
    std::uint64_t seed = 0;
    int frames = 16, height = 16, width = 16;
    int label = 0;
};

// Video sampler over an inflated model; when `cond` is set the model must be
// expanded and each denoiser call sees the 7-channel <J,C,M> input.
Tensor sample_video(const STUNetModel& m, const NoiseSchedule& sch, const SampleOpts& opts,
                    const std::optional<ConditioningPair>& cond = std::nullopt);

// Wraps a model as a Denoiser (applies conditioning when given).
Denoiser model_denoiser(const STUNetModel& m, int label,
                        const std::optional<ConditioningPair>& cond = std::nullopt);

// eps-prediction MSE for one (x0, t, eps) draw; `model` maps (x_t, t) to a
// prediction Var so gradients reach the weights.
Var diffusion_step_loss(const std::function<Var(const Tensor& x_t, int t)>& model, const Tensor& x0,
                        int t, const Tensor& eps, const NoiseSchedule& sch);

}  // namespace stvid
