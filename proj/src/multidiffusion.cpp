#include "stvid/multidiffusion.hpp"

namespace stvid {

std::vector<int> WindowPlan::coverage_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(total_frames), 0);
    for (int s : starts)
        for (int f = s; f < s + segment_frames; ++f) ++counts[static_cast<std::size_t>(f)];
    return counts;
}

void WindowPlan::validate() const {
    if (total_frames < 1 || segment_frames < 1 || segment_frames > total_frames)
        throw ConfigError("WindowPlan: bad frame counts T=" + std::to_string(total_frames) +
                          " T'=" + std::to_string(segment_frames));
    if (starts.empty()) throw ConfigError("WindowPlan: no segments");
    for (int s : starts)
        if (s < 0 || s + segment_frames > total_frames)
            throw ConfigError("WindowPlan: segment at " + std::to_string(s) + " out of range");
    for (std::size_t i = 0; i < starts.size(); ++i)
        for (std::size_t j = i + 1; j < starts.size(); ++j)
            if (starts[i] == starts[j]) throw ConfigError("WindowPlan: duplicate segment start");
    for (int c : coverage_counts())
        if (c < 1) throw ConfigError("WindowPlan: uncovered frame");
}

WindowPlan plan_windows(int T, int T_prime, int stride) {
    if (!(1 <= stride && stride < T_prime && T_prime <= T))
        throw ConfigError("plan_windows: need 1 <= stride < T' <= T, got T=" + std::to_string(T) +
                          " T'=" + std::to_string(T_prime) + " stride=" + std::to_string(stride));
    WindowPlan plan;
    plan.total_frames = T;
    plan.segment_frames = T_prime;
    plan.stride = stride;
    for (int s = 0; s + T_prime < T; s += stride) plan.starts.push_back(s);
    int clamp = T - T_prime;  // shift the last window back instead of shortening it
    if (plan.starts.empty() || plan.starts.back() != clamp) plan.starts.push_back(clamp);
    plan.validate();
    return plan;
}

Tensor aggregate(const WindowPlan& plan, const std::vector<Tensor>& segment_predictions) {
    plan.validate();
    if (static_cast<int>(segment_predictions.size()) != plan.count())
        throw ConfigError("aggregate: expected " + std::to_string(plan.count()) + " predictions, got " +
                          std::to_string(segment_predictions.size()));
    const Tensor& first = segment_predictions.front();
    if (first.rank() != 4 || first.shape[0] != plan.segment_frames)
        throw ConfigError("aggregate: prediction shape " + first.shape_str() + " does not match plan T'=" +
                          std::to_string(plan.segment_frames));
    for (const Tensor& p : segment_predictions)
        if (!p.same_shape(first)) throw ConfigError("aggregate: prediction shapes not uniform");

    std::vector<int> out_shape = first.shape;
    out_shape[0] = plan.total_frames;
    Tensor out(out_shape);
    std::int64_t frame_elems = first.numel() / plan.segment_frames;
    std::vector<int> counts = plan.coverage_counts();
    for (int i = 0; i < plan.count(); ++i) {
        const Tensor& p = segment_predictions[static_cast<std::size_t>(i)];
        int start = plan.starts[static_cast<std::size_t>(i)];
        for (int f = 0; f < plan.segment_frames; ++f) {
            double* op = &out.data[static_cast<std::size_t>((start + f) * frame_elems)];
            const double* ip = &p.data[static_cast<std::size_t>(f * frame_elems)];
            for (std::int64_t j = 0; j < frame_elems; ++j) op[j] += ip[j];
        }
    }
    for (int f = 0; f < plan.total_frames; ++f) {
        if (counts[static_cast<std::size_t>(f)] == 0) throw ConfigError("aggregate: uncovered frame");
        double cnt = static_cast<double>(counts[static_cast<std::size_t>(f)]);
        double* op = &out.data[static_cast<std::size_t>(f * frame_elems)];
        for (std::int64_t j = 0; j < frame_elems; ++j) op[j] /= cnt;
    }
    return out;
}

namespace {

Tensor slice_frames(const Tensor& x, int start, int len) {
    std::vector<int> shape = x.shape;
    shape[0] = len;
    Tensor out(shape);
    std::int64_t frame_elems = x.numel() / x.shape[0];
    std::copy(x.data.begin() + start * frame_elems, x.data.begin() + (start + len) * frame_elems,
              out.data.begin());
    return out;
}

}  // namespace

Tensor multidiffusion_sample_loop(const SegmentDenoiser& eps_fn, const WindowPlan& plan,
                                  const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                                  const std::vector<int>& full_shape, std::uint64_t seed) {
    plan.validate();
    if (full_shape.empty() || full_shape[0] != plan.total_frames)
        throw ConfigError("multidiffusion_sample_loop: state shape " + shape_str(full_shape) +
                          " does not match plan T=" + std::to_string(plan.total_frames));
    Rng rng(mix_seed(seed, 0xd1f));
    Tensor x = Tensor::randn(full_shape, rng);
    std::vector<int> taus = timestep_ladder(sch.steps - 1, n_steps);
    int Tp = plan.segment_frames;
    for (std::size_t k = 0; k + 1 < taus.size(); ++k) {
        int tau = taus[k], tp = taus[k + 1];
        bool last = (k + 2 == taus.size());
        Tensor z;
        bool has_z = (mode == SamplerMode::ddpm && !last);
        if (has_z) z = Tensor::randn(full_shape, rng);

        std::vector<Tensor> updates;
        updates.reserve(static_cast<std::size_t>(plan.count()));
        for (int i = 0; i < plan.count(); ++i) {
            int start = plan.starts[static_cast<std::size_t>(i)];
            Tensor x_seg = slice_frames(x, start, Tp);
            Tensor eps_hat = eps_fn(x_seg, i, start, tau);
            if (!eps_hat.same_shape(x_seg))
                throw ConfigError("multidiffusion: denoiser output " + eps_hat.shape_str() + " vs segment " +
                                  x_seg.shape_str());
            if (has_z) {
                Tensor z_seg = slice_frames(z, start, Tp);
                updates.push_back(reverse_transition(x_seg, eps_hat, sch, tau, tp, mode, &z_seg));
            } else {
                updates.push_back(reverse_transition(x_seg, eps_hat, sch, tau, tp, mode, nullptr));
            }
        }
        x = aggregate(plan, updates);
        require_finite(x, ("multidiffusion step to t=" + std::to_string(tp)).c_str());
    }
    return x;
}

Tensor ssr_multidiffusion_sample(const STUNetModel& ssr, const Tensor& low_res, const WindowPlan& plan,
                                 const NoiseSchedule& sch, SamplerMode mode, int n_steps,
                                 std::uint64_t seed, int label) {
    if (low_res.rank() != 4 || low_res.shape[1] != 3)
        throw ConfigError("ssr_multidiffusion_sample: low_res must be [T,3,h,w], got " + low_res.shape_str());
    if (low_res.shape[0] != plan.total_frames)
        throw ConfigError("ssr_multidiffusion_sample: low_res T=" + std::to_string(low_res.shape[0]) +
                          " does not match plan T=" + std::to_string(plan.total_frames));
    if (ssr.cfg.t2i.in_channels != 6)
        throw ConfigError("ssr_multidiffusion_sample: model is not a 6-channel SSR network");
    // nearest-neighbor 2x spatial upsampling of the conditioning video
    Tensor up = resize_nearest_fw(resize_nearest_fw(low_res, 2, Resize::up), 3, Resize::up);
    SegmentDenoiser f = [&ssr, &up, label](const Tensor& x_seg, int, int start, int t) {
        Tensor cond = slice_frames(up, start, x_seg.shape[0]);
        Tensor input = concat(constant(x_seg), constant(cond), 1)->value;
        return forward_stunet(ssr, input, t, label);
    };
    std::vector<int> shape = {plan.total_frames, 3, up.shape[2], up.shape[3]};
    return multidiffusion_sample_loop(f, plan, sch, mode, n_steps, shape, seed);
}

}  // namespace stvid
