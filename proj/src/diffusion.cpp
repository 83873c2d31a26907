#include "stvid/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace stvid {

void NoiseSchedule::validate() const {
    if (steps < 2) throw ConfigError("NoiseSchedule: steps must be >= 2");
    if (static_cast<int>(beta.size()) != steps || static_cast<int>(alpha.size()) != steps ||
        static_cast<int>(alpha_bar.size()) != steps)
        throw ConfigError("NoiseSchedule: table lengths must equal steps");
    double prev = 1.0;
    for (int i = 0; i < steps; ++i) {
        if (!(beta[static_cast<std::size_t>(i)] > 0.0 && beta[static_cast<std::size_t>(i)] < 1.0))
            throw ConfigError("NoiseSchedule: beta out of (0,1) at step " + std::to_string(i));
        if (!(alpha_bar[static_cast<std::size_t>(i)] < prev))
            throw ConfigError("NoiseSchedule: alpha_bar not strictly decreasing at step " + std::to_string(i));
        prev = alpha_bar[static_cast<std::size_t>(i)];
    }
    if (alpha_bar[0] < 0.9) throw ConfigError("NoiseSchedule: alpha_bar[0] not close to 1");
}

ScheduleKind schedule_kind_from(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind: " + name);
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps) {
    if (steps < 2) throw ConfigError("make_schedule: steps must be >= 2");
    NoiseSchedule sch;
    sch.steps = steps;
    sch.beta.resize(static_cast<std::size_t>(steps));
    if (kind == ScheduleKind::linear) {
        const double b0 = 1e-4, b1 = 0.02;
        for (int i = 0; i < steps; ++i)
            sch.beta[static_cast<std::size_t>(i)] = b0 + (b1 - b0) * static_cast<double>(i) / static_cast<double>(steps - 1);
        sch.beta[0] = b0;
        sch.beta[static_cast<std::size_t>(steps - 1)] = b1;
    } else {
        const double s = 0.008;
        auto f = [&](double u) {
            double a = std::cos((u / static_cast<double>(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return a * a;
        };
        double f0 = f(0.0);
        double prev_abar = 1.0;
        for (int i = 0; i < steps; ++i) {
            double abar = f(static_cast<double>(i + 1)) / f0;
            double b = 1.0 - abar / prev_abar;
            sch.beta[static_cast<std::size_t>(i)] = std::min(std::max(b, 1e-8), 0.999);
            prev_abar = abar;
        }
    }
    sch.alpha.resize(static_cast<std::size_t>(steps));
    sch.alpha_bar.resize(static_cast<std::size_t>(steps));
    double cum = 1.0;
    for (int i = 0; i < steps; ++i) {
        sch.alpha[static_cast<std::size_t>(i)] = 1.0 - sch.beta[static_cast<std::size_t>(i)];
        cum *= sch.alpha[static_cast<std::size_t>(i)];
        sch.alpha_bar[static_cast<std::size_t>(i)] = cum;
    }
    sch.validate();
    return sch;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sch) {
    if (t < 0 || t >= sch.steps) throw ConfigError("q_sample: t " + std::to_string(t) + " out of range");
    if (!x0.same_shape(eps)) throw ConfigError("q_sample: x0 " + x0.shape_str() + " vs eps " + eps.shape_str());
    double a = sch.alpha_bar[static_cast<std::size_t>(t)];
    double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sa * x0.data[i] + sb * eps.data[i];
    return out;
}

void ConditioningPair::validate() const {
    if (C.rank() != 4 || M.rank() != 4 || M.shape[1] != 1)
        throw ConfigError("ConditioningPair: expected C [T,3,H,W] and M [T,1,H,W], got C" + C.shape_str() +
                          " M" + M.shape_str());
    if (C.shape[0] != M.shape[0] || C.shape[2] != M.shape[2] || C.shape[3] != M.shape[3])
        throw ConfigError("ConditioningPair: C " + C.shape_str() + " and M " + M.shape_str() + " disagree on T/H/W");
    int T = C.shape[0], Cc = C.shape[1], H = C.shape[2], W = C.shape[3];
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double m = M.at(t, 0, h, w);
                if (m != 0.0 && m != 1.0)
                    throw ConfigError("ConditioningPair: mask not binary at frame " + std::to_string(t));
                if (m == 0.0)
                    for (int c = 0; c < Cc; ++c)
                        if (C.at(t, c, h, w) != 0.0)
                            throw ConfigError("ConditioningPair: C nonzero in masked region at frame " +
                                              std::to_string(t));
            }
}

Tensor assemble_conditional_input(const Tensor& J, const ConditioningPair& pair) {
    if (J.rank() != 4) throw ConfigError("assemble_conditional_input: J must be [T,3,H,W], got " + J.shape_str());
    if (J.shape[0] != pair.C.shape[0] || J.shape[2] != pair.C.shape[2] || J.shape[3] != pair.C.shape[3])
        throw ConfigError("assemble_conditional_input: J " + J.shape_str() + " vs C " + pair.C.shape_str());
    Var out = concat(concat(constant(J), constant(pair.C), 1), constant(pair.M), 1);
    return out->value;
}

// One reverse transition tau -> tp (the eta-parameterized DDIM family; eta=1 is
// DDPM ancestral, eta=0 the deterministic update).
Tensor reverse_transition(const Tensor& x, const Tensor& eps_hat, const NoiseSchedule& sch, int tau, int tp,
                          SamplerMode mode, const Tensor* z) {
    double a_t = sch.alpha_bar[static_cast<std::size_t>(tau)];
    double a_p = sch.alpha_bar[static_cast<std::size_t>(tp)];
    double sqa_t = std::sqrt(a_t), sq1a_t = std::sqrt(1.0 - a_t);
    double sigma2 = 0.0;
    if (mode == SamplerMode::ddpm) sigma2 = (1.0 - a_p) / (1.0 - a_t) * (1.0 - a_t / a_p);
    double dir = std::sqrt(std::max(1.0 - a_p - sigma2, 0.0));
    double sqa_p = std::sqrt(a_p);
    double sigma = std::sqrt(std::max(sigma2, 0.0));
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double x0hat = (x.data[i] - sq1a_t * eps_hat.data[i]) / sqa_t;
        out.data[i] = sqa_p * x0hat + dir * eps_hat.data[i];
        if (z != nullptr) out.data[i] += sigma * z->data[i];
    }
    return out;
}

std::vector<int> timestep_ladder(int t_start, int n_steps) {
    if (t_start < 0) throw ConfigError("reverse_from: negative start timestep");
    if (n_steps < 2) throw ConfigError("reverse_from: n_steps must be >= 2");
    n_steps = std::min(n_steps, t_start + 1);
    std::vector<int> taus;
    if (n_steps <= 1) {
        taus.push_back(t_start);
        return taus;
    }
    for (int i = 0; i < n_steps; ++i) {
        int t = static_cast<int>(std::llround(static_cast<double>(t_start) *
                                              (1.0 - static_cast<double>(i) / static_cast<double>(n_steps - 1))));
        if (taus.empty() || t < taus.back()) taus.push_back(t);
    }
    return taus;  // descending, starts at t_start, ends at 0
}

Tensor reverse_from(const Denoiser& eps_fn, const NoiseSchedule& sch, SamplerMode mode, Tensor x,
                    int t_start, int n_steps, Rng& rng) {
    if (t_start >= sch.steps) throw ConfigError("reverse_from: start timestep out of range");
    std::vector<int> taus = timestep_ladder(t_start, n_steps);
    for (std::size_t k = 0; k + 1 < taus.size(); ++k) {
        int tau = taus[k], tp = taus[k + 1];
        Tensor eps_hat = eps_fn(x, tau);
        if (!eps_hat.same_shape(x))
            throw ConfigError("reverse_from: denoiser output " + eps_hat.shape_str() + " vs state " + x.shape_str());
        bool last = (k + 2 == taus.size());
        if (mode == SamplerMode::ddpm && !last) {
            Tensor z = Tensor::randn(x.shape, rng);
            x = reverse_transition(x, eps_hat, sch, tau, tp, mode, &z);
        } else {
            x = reverse_transition(x, eps_hat, sch, tau, tp, mode, nullptr);
        }
        require_finite(x, ("reverse step to t=" + std::to_string(tp)).c_str());
    }
    return x;
}

Tensor sample_loop(const Denoiser& eps_fn, const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                   const std::vector<int>& shape, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xd1f));
    Tensor x = Tensor::randn(shape, rng);
    return reverse_from(eps_fn, sch, mode, std::move(x), sch.steps - 1, n_steps, rng);
}

Denoiser model_denoiser(const STUNetModel& m, int label, const std::optional<ConditioningPair>& cond) {
    if (cond.has_value()) {
        if (!m.cfg.cond_expanded)
            throw ConfigError("model_denoiser: conditioning given but model input is not expanded");
        cond->validate();
        return [&m, label, cond](const Tensor& x, int t) {
            return forward_stunet(m, assemble_conditional_input(x, *cond), t, label);
        };
    }
    return [&m, label](const Tensor& x, int t) { return forward_stunet(m, x, t, label); };
}

Tensor sample_video(const STUNetModel& m, const NoiseSchedule& sch, const SampleOpts& opts,
                    const std::optional<ConditioningPair>& cond) {
    Denoiser f = model_denoiser(m, opts.label, cond);
    return sample_loop(f, sch, opts.mode, opts.n_steps, {opts.frames, 3, opts.height, opts.width}, opts.seed);
}

Var diffusion_step_loss(const std::function<Var(const Tensor& x_t, int t)>& model, const Tensor& x0,
                        int t, const Tensor& eps, const NoiseSchedule& sch) {
    Tensor x_t = q_sample(x0, t, eps, sch);
    Var pred = model(x_t, t);
    return mse(pred, constant(eps));
}

}  // namespace stvid
