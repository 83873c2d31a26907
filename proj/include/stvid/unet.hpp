#pragma once

#include <map>
#include <string>
#include <vector>

#include "stvid/autodiff.hpp"

namespace stvid {

using NamedVars = std::map<std::string, Var>;
using NamedTensors = std::map<std::string, Tensor>;

// Toy class-conditional image denoising U-Net; stands in for a pretrained
// text-to-image backbone at desk scale.
struct T2IConfig {
    int levels = 2;
    int base_channels = 8;
    std::vector<int> channel_mult = {1, 2};
    int cond_dim = 16;  // timestep/class embedding width, must be even
    int in_channels = 3;
    int out_channels = 3;
    int num_classes = 4;

    int channels_at(int level) const;
    void validate() const;
};

struct T2IModel {
    T2IConfig cfg;
    NamedVars params;
};

// Deterministic build: two calls with the same seed produce bit-identical weights.
// The output head is zero-initialized. All weights sit on the float32 grid.
T2IModel build_t2i(const T2IConfig& cfg, std::uint64_t seed);

// x [N,Cin,H,W], per-sample timesteps and class labels -> predicted noise [N,out,H,W].
Var forward_t2i(const T2IModel& m, const Var& x, const std::vector<int>& ts, const std::vector<int>& labels);
Tensor forward_t2i(const T2IModel& m, const Tensor& x, const std::vector<int>& ts, const std::vector<int>& labels);

// Sinusoidal position embedding of integer timesteps, width `dim` (even).
Tensor sinusoidal_embedding(const std::vector<int>& ts, int dim);

// Combined timestep + class embedding [N, cond_dim] (shared by the inflated model).
Var embed_condition(const NamedVars& p, const std::vector<int>& ts, const std::vector<int>& labels, int cond_dim);

// Closed-form number of scalar parameters of build_t2i's layout for `cfg`.
std::int64_t t2i_param_count(const T2IConfig& cfg);

// ---- named-map helpers ----
const Var& get_param(const NamedVars& p, const std::string& name);
NamedTensors snapshot(const NamedVars& p);
std::uint64_t hash_params(const NamedVars& p);

}  // namespace stvid
