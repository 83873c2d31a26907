#pragma once

#include "stvid/tensor.hpp"

#include <vector>

namespace stvid {

enum class MotionKind { sinusoid, bounce, linear };
enum class MotionAxis { horizontal, vertical };

// A bright Gaussian blob moving over a dark background along a 1-D law.
struct MotionSpec {
    MotionKind kind = MotionKind::sinusoid;
    MotionAxis axis = MotionAxis::horizontal;
    double amplitude = 8.0;    // px; for `linear` this is the velocity in px/frame
    double frequency = 0.1;    // cycles/frame, >= 0
    double phase = 0.0;        // radians
    double object_size = 5.0;  // px; blob sigma = object_size / 2

    void validate() const;
};

// Keyframe stride s and TSR context window w (keyframes per non-overlapping call;
// consecutive calls share their boundary keyframe).
struct CascadeSpec {
    int keyframe_stride = 4;
    int tsr_window = 2;

    void validate() const;
};

// Offset of the object from the frame center at (fractional) time t, in px.
double motion_offset(const MotionSpec& spec, double t);

// Deterministic anti-aliased rasterization; frames are [0,1]-valued, 3 channels.
// The seed parameter is accepted for interface symmetry and unused.
Tensor render_video(const MotionSpec& spec, int T, int H, int W, std::uint64_t seed = 0);

// Fixed-row slice video[:, row, :] (channel mean) as a [T,W] image.
Tensor xt_slice(const Tensor& video, int row);

// All sinusoid motions whose stride-s keyframes coincide with spec's: the motion
// itself plus every distinct (f', phase') with f' = +/-f (mod 1/s) whose
// keyframe-rate phase advance lies within the keyframe Nyquist band
// (f'*s <= 0.5 cycles per keyframe). Verified by rendering the keyframes.
std::vector<MotionSpec> alias_ambiguity(const MotionSpec& spec, int s);

struct CascadeResult {
    Tensor video;                     // reconstruction, keyframes bit-identical to input
    std::vector<int> window_starts;   // first keyframe index of each TSR window
    std::vector<MotionSpec> window_hypothesis;
    std::vector<bool> window_was_tie;
};

// Keyframe + windowed-TSR cascade with an idealized TSR: keep frames at stride s,
// fill interior frames per non-overlapping window of w keyframes by rendering the
// minimum-travel sinusoid hypothesis consistent with those keyframes. When the
// forward and reversed hypotheses travel within a factor 1.5 of each other the
// choice is a coin flip seeded per window.
CascadeResult simulate_cascade(const Tensor& video, const MotionSpec& spec, const CascadeSpec& cascade,
                               std::uint64_t seed);

// True if some pair of adjacent TSR windows resolved the ambiguity differently
// and the reconstructed centroid displacement changes sign across their shared
// boundary keyframe.
bool has_direction_flip(const CascadeResult& res, const CascadeSpec& cascade);

// Mean squared second temporal difference of the intensity-weighted centroid
// trajectory; zero for any affine-in-time motion and translation-invariant.
double consistency_metric(const Tensor& video);

// Centroid (cx, cy) per frame, intensity-weighted. Errors on an empty frame.
std::vector<std::pair<double, double>> centroid_trajectory(const Tensor& video);

}  // namespace stvid
