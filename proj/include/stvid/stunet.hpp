#pragma once

#include "stvid/unet.hpp"

namespace stvid {

// Space-time U-Net built by inflating a pretrained image U-Net: temporal conv
// blocks after the pretrained spatial blocks, temporal attention at the coarsest
// level, and learnable temporal resamplers (initialized to nearest-neighbor)
// adjacent to each spatial resize on the selected level transitions.
struct STUNetConfig {
    T2IConfig t2i;
    int temporal_kernel = 3;               // kt, odd, >= 3
    std::vector<int> temporal_levels = {0};  // transition indices in [0, levels-1)
    int attn_blocks_coarsest = 2;
    bool cond_expanded = false;  // input grown 3 -> 7 for <J,C,M> conditioning

    int temporal_downsamples() const { return static_cast<int>(temporal_levels.size()); }
    void validate() const;
};

struct STUNetModel {
    STUNetConfig cfg;
    NamedVars spatial;   // copied from the image model, frozen
    NamedVars temporal;  // inserted modules (and the conditioning input slice), trainable
};

// Copies the image-model weights (frozen) and inserts zero-projection temporal
// blocks so that at init the model acts frame-wise like the image model.
STUNetModel inflate(const T2IModel& t2i, const STUNetConfig& cfg, std::uint64_t seed);

// Inflated spatial super-resolution model: same architecture over 6 input
// channels (noisy high-res + nearest-upsampled low-res conditioning).
STUNetModel build_ssr(STUNetConfig cfg, std::uint64_t seed);

// Input statistics of one inserted temporal block during a forward pass; used
// to inspect distribution shift when style-interpolated spatial weights are
// installed (logged only, never asserted).
struct ActStat {
    std::string block;
    double mean = 0.0, stdev = 0.0;
};

// x [T,Cin,H,W] (Cin = 7 when cond_expanded), one clip, shared timestep and label.
Var forward_stunet(const STUNetModel& m, const Var& x, int t, int label,
                   std::vector<ActStat>* collect = nullptr);
Tensor forward_stunet(const STUNetModel& m, const Tensor& x, int t, int label);

// Grows the model input from 3 to 7 channels: adds a zero-initialized, trainable
// kernel slice for the 4 conditioning channels. Errors if already expanded.
void expand_input_conv(STUNetModel& m);

// Swaps in a new set of spatial weights (e.g. style-interpolated); names and
// shapes must match, temporal tensors are untouched.
void install_spatial(STUNetModel& m, const NamedTensors& spatial);

// Per-level activation geometry of the encoder path, plus the input row.
struct LevelStats {
    int level;  // -1 for the network input
    int frames, height, width, channels;
    std::int64_t elements;
};
std::vector<LevelStats> activation_stats(const STUNetConfig& cfg, int T, int H, int W);
// elements at the coarsest level / elements of the input tensor
double coarsest_compression_ratio(const STUNetConfig& cfg, int T, int H, int W);

}  // namespace stvid
