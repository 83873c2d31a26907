#include "stvid/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stvid {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kTieFactor = 1.5;  // travel ratio under which the TSR cannot rank hypotheses
}  // namespace

void MotionSpec::validate() const {
    if (frequency < 0.0) throw ConfigError("MotionSpec: frequency must be >= 0");
    if (object_size <= 0.0) throw ConfigError("MotionSpec: object_size must be positive");
}

void CascadeSpec::validate() const {
    if (keyframe_stride < 1) throw ConfigError("CascadeSpec: keyframe_stride must be >= 1");
    if (tsr_window < 2) throw ConfigError("CascadeSpec: tsr_window must be >= 2");
}

double motion_offset(const MotionSpec& spec, double t) {
    switch (spec.kind) {
        case MotionKind::sinusoid:
            return spec.amplitude * std::sin(2.0 * kPi * spec.frequency * t + spec.phase);
        case MotionKind::bounce: {
            // sine-like triangle wave: zero at phase 0, peak at a quarter period
            double u = spec.frequency * t + spec.phase / (2.0 * kPi);
            double fr = u - std::floor(u - 0.25) - 0.25;  // frac(u - 0.25)
            fr -= std::floor(fr);
            return spec.amplitude * (4.0 * std::fabs(fr - 0.5) - 1.0);
        }
        case MotionKind::linear:
            return spec.amplitude * t;
    }
    throw ConfigError("MotionSpec: unknown kind");
}

Tensor render_video(const MotionSpec& spec, int T, int H, int W, std::uint64_t /*seed*/) {
    spec.validate();
    if (T < 1 || H < 4 || W < 4) throw ConfigError("render_video: bad dimensions");
    double sigma = spec.object_size / 2.0;
    double margin = 3.0 * sigma;
    double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    // linear motion is centered over the clip so the object stays in frame longest
    double t_mid = (spec.kind == MotionKind::linear) ? (T - 1) / 2.0 : 0.0;

    Tensor video({T, 3, H, W});
    for (int t = 0; t < T; ++t) {
        double off = motion_offset(spec, static_cast<double>(t) - t_mid);
        double px = cx, py = cy;
        if (spec.axis == MotionAxis::horizontal)
            px += off;
        else
            py += off;
        if (px - margin < 0.0 || px + margin > W - 1 || py - margin < 0.0 || py + margin > H - 1)
            throw ConfigError("render_video: object out of bounds at frame " + std::to_string(t));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double dx = x - px, dy = y - py;
                double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                for (int c = 0; c < 3; ++c) video.at(t, c, y, x) = v;
            }
    }
    return video;
}

Tensor xt_slice(const Tensor& video, int row) {
    if (video.rank() != 4) throw ConfigError("xt_slice: video must be [T,C,H,W], got " + video.shape_str());
    int T = video.shape[0], C = video.shape[1], H = video.shape[2], W = video.shape[3];
    if (row < 0 || row >= H) throw ConfigError("xt_slice: row " + std::to_string(row) + " out of range [0," +
                                               std::to_string(H) + ")");
    Tensor out({T, W});
    for (int t = 0; t < T; ++t)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c) acc += video.at(t, c, row, x);
            out.at(t, x) = acc / static_cast<double>(C);
        }
    return out;
}

namespace {

double normalize_phase(double phi) {
    double p = std::fmod(phi, 2.0 * kPi);
    if (p < 0.0) p += 2.0 * kPi;
    return p;
}

// positions at the keyframes t = 0, s, 2s, ...
std::vector<double> keyframe_offsets(const MotionSpec& spec, int s, int count) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) out.push_back(motion_offset(spec, static_cast<double>(k) * s));
    return out;
}

bool same_trajectory(const MotionSpec& a, const MotionSpec& b, int frames, double tol) {
    for (int t = 0; t < frames; ++t)
        if (std::fabs(motion_offset(a, t) - motion_offset(b, t)) > tol) return false;
    return true;
}

}  // namespace

std::vector<MotionSpec> alias_ambiguity(const MotionSpec& spec, int s) {
    spec.validate();
    if (spec.kind != MotionKind::sinusoid) throw ConfigError("alias_ambiguity: only sinusoid motion is supported");
    if (s < 1) throw ConfigError("alias_ambiguity: stride must be >= 1");

    std::vector<MotionSpec> out{spec};
    int probe_frames = 4 * s + 1;
    std::vector<double> ref = keyframe_offsets(spec, s, probe_frames / s + 1);

    double band = 0.5 / static_cast<double>(s);  // keyframe Nyquist, cycles/frame
    auto consider = [&](double f_prime, double phase) {
        if (f_prime < -1e-12 || f_prime > band + 1e-12) return;
        f_prime = std::max(f_prime, 0.0);
        MotionSpec cand = spec;
        cand.frequency = f_prime;
        cand.phase = normalize_phase(phase);
        for (const MotionSpec& have : out)
            if (same_trajectory(have, cand, probe_frames, 1e-9)) return;
        // analytic candidate, verified by rendering the keyframes
        std::vector<double> kf = keyframe_offsets(cand, s, static_cast<int>(ref.size()));
        for (std::size_t k = 0; k < ref.size(); ++k)
            if (std::fabs(kf[k] - ref[k]) > 1e-9) return;
        out.push_back(cand);
    };
    int m_max = static_cast<int>(std::ceil(spec.frequency * s)) + 1;
    for (int m = -m_max; m <= m_max; ++m) {
        consider(spec.frequency + static_cast<double>(m) / s, spec.phase);
        consider(-spec.frequency + static_cast<double>(m) / s, kPi - spec.phase);
    }
    std::sort(out.begin() + 1, out.end(), [](const MotionSpec& a, const MotionSpec& b) {
        if (a.frequency != b.frequency) return a.frequency < b.frequency;
        return a.phase < b.phase;
    });
    return out;
}

std::vector<std::pair<double, double>> centroid_trajectory(const Tensor& video) {
    if (video.rank() != 4) throw ConfigError("centroid_trajectory: video must be [T,C,H,W]");
    int T = video.shape[0], C = video.shape[1], H = video.shape[2], W = video.shape[3];
    std::vector<std::pair<double, double>> out;
    out.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        double total = 0.0, sx = 0.0, sy = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = 0.0;
                for (int c = 0; c < C; ++c) v += video.at(t, c, y, x);
                total += v;
                sx += v * x;
                sy += v * y;
            }
        if (total < 1e-9) throw NumericError("centroid_trajectory: empty frame " + std::to_string(t));
        out.emplace_back(sx / total, sy / total);
    }
    return out;
}

bool has_direction_flip(const CascadeResult& res, const CascadeSpec& cascade) {
    if (res.window_hypothesis.size() < 2) return false;
    auto traj = centroid_trajectory(res.video);
    int s = cascade.keyframe_stride, w = cascade.tsr_window;
    int T = res.video.shape[0];
    for (std::size_t i = 0; i + 1 < res.window_hypothesis.size(); ++i) {
        const MotionSpec& a = res.window_hypothesis[i];
        const MotionSpec& b = res.window_hypothesis[i + 1];
        if (a.frequency == b.frequency && a.phase == b.phase) continue;
        int boundary = (static_cast<int>(i) + 1) * (w - 1) * s;  // shared keyframe
        if (boundary - 1 < 0 || boundary + 1 >= T) continue;
        auto comp = [&](int t) {
            return (a.axis == MotionAxis::horizontal) ? traj[static_cast<std::size_t>(t)].first
                                                      : traj[static_cast<std::size_t>(t)].second;
        };
        double before = comp(boundary) - comp(boundary - 1);
        double after = comp(boundary + 1) - comp(boundary);
        if (before * after < 0.0) return true;
    }
    return false;
}

double consistency_metric(const Tensor& video) {
    auto traj = centroid_trajectory(video);
    int T = static_cast<int>(traj.size());
    if (T < 3) throw ConfigError("consistency_metric: need at least 3 frames");
    double acc = 0.0;
    for (int t = 1; t + 1 < T; ++t) {
        double ddx = traj[t + 1].first - 2.0 * traj[t].first + traj[t - 1].first;
        double ddy = traj[t + 1].second - 2.0 * traj[t].second + traj[t - 1].second;
        acc += ddx * ddx + ddy * ddy;
    }
    return acc / static_cast<double>(T - 2);
}

CascadeResult simulate_cascade(const Tensor& video, const MotionSpec& spec, const CascadeSpec& cascade,
                               std::uint64_t seed) {
    spec.validate();
    cascade.validate();
    if (video.rank() != 4) throw ConfigError("simulate_cascade: video must be [T,C,H,W]");
    int T = video.shape[0], H = video.shape[2], W = video.shape[3];
    int s = cascade.keyframe_stride, w = cascade.tsr_window;

    CascadeResult res;
    res.video = video;
    if (s == 1) return res;  // every frame is a keyframe

    if ((T - 1) % s != 0)
        throw ConfigError("simulate_cascade: T-1 (" + std::to_string(T - 1) + ") not divisible by stride " +
                          std::to_string(s));
    int gaps = (T - 1) / s;
    if (gaps % (w - 1) != 0)
        throw ConfigError("simulate_cascade: keyframe gap count " + std::to_string(gaps) +
                          " not divisible by window span " + std::to_string(w - 1));
    int n_windows = gaps / (w - 1);

    if (spec.kind != MotionKind::sinusoid)
        throw ConfigError("simulate_cascade: the TSR oracle models sinusoid motion");

    // The two minimum-travel sinusoid hypotheses through the keyframes: apparent
    // per-keyframe phase advance delta (forward) or delta-1 (reversed family).
    double delta = spec.frequency * s - std::floor(spec.frequency * s);
    MotionSpec fwd = spec;
    fwd.frequency = delta / s;
    fwd.phase = normalize_phase(spec.phase);
    MotionSpec bwd = spec;
    bwd.frequency = (1.0 - delta) / s;
    bwd.phase = normalize_phase(kPi - spec.phase);

    double travel_fwd = delta, travel_bwd = 1.0 - delta;
    std::vector<MotionSpec> hyps;
    if (travel_fwd <= 1e-12) {
        hyps = {fwd};
    } else if (travel_bwd <= 1e-12) {
        hyps = {bwd};
    } else if (std::max(travel_fwd, travel_bwd) <= kTieFactor * std::min(travel_fwd, travel_bwd) + 1e-9) {
        hyps = (travel_fwd <= travel_bwd) ? std::vector<MotionSpec>{fwd, bwd} : std::vector<MotionSpec>{bwd, fwd};
    } else {
        hyps = {(travel_fwd < travel_bwd) ? fwd : bwd};
    }

    std::int64_t frame_elems = video.numel() / T;
    for (int win = 0; win < n_windows; ++win) {
        int first_kf = win * (w - 1);
        res.window_starts.push_back(first_kf);
        bool tie = hyps.size() > 1;
        int choice = 0;
        if (tie) {
            Rng coin(mix_seed(seed, static_cast<std::uint64_t>(win) + 1));
            choice = coin.uniform_int(2);
        }
        const MotionSpec& h = hyps[static_cast<std::size_t>(choice)];
        res.window_hypothesis.push_back(h);
        res.window_was_tie.push_back(tie);
        // render interior frames of this window from the chosen hypothesis;
        // keyframes stay bit-identical to the input
        int f_lo = first_kf * s, f_hi = (first_kf + w - 1) * s;
        Tensor recon = render_video(h, f_hi + 1, H, W);
        for (int f = f_lo; f <= f_hi; ++f) {
            if (f % s == 0) continue;
            std::copy(recon.data.begin() + f * frame_elems, recon.data.begin() + (f + 1) * frame_elems,
                      res.video.data.begin() + f * frame_elems);
        }
    }
    return res;
}

}  // namespace stvid
