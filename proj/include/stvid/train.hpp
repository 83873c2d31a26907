#pragma once

#include <filesystem>

#include "stvid/diffusion.hpp"
#include "stvid/io.hpp"

namespace stvid {

// Adam over a named gradient map. Parameters and moments are re-quantized to the
// float32 grid after every update so checkpoints round-trip bit-exactly and a
// resumed run reproduces the original loss curve.
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;  // completed update steps
    NamedTensors m, v;

    void step(NamedVars& params, const NamedTensors& grads);
};

// ---- synthetic dataset ---------------------------------------------------------

struct GenDataConfig {
    int count = 512;
    int frames = 16;
    int size = 32;  // H == W
    std::uint64_t seed = 0;
};

struct DatasetItem {
    std::string file;
    int label = 0;
};

// Renders class-labeled clips (classes are motion kinds/axes) and a manifest CSV.
std::vector<DatasetItem> generate_dataset(const std::filesystem::path& dir, const GenDataConfig& cfg);

struct Dataset {
    std::vector<Tensor> clips;  // [T,3,H,W] in [0,1]
    std::vector<int> labels;
    int frames = 0, height = 0, width = 0;
};

Dataset load_dataset(const std::filesystem::path& dir);

// ---- training ------------------------------------------------------------------

enum class VideoTask { none, image2video, inpaint, cinemagraph, ssr };
VideoTask video_task_from(const std::string& name);

struct TrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int image_size = 16;  // base-model resolution; clips are downsampled to it
    std::filesystem::path loss_csv;  // optional per-step loss log
};

struct TrainResult {
    std::vector<double> losses;  // one entry per executed step
    double first_loss = 0.0, last_loss = 0.0;
};

// Trains all image-model weights on individual frames.
TrainResult train_t2i(T2IModel& model, const Dataset& data, const NoiseSchedule& sch,
                      const TrainConfig& cfg, Adam& opt);

// Trains only the temporal weights of an inflated model (the spatial hash is
// checked before/after; any change is a hard failure). Conditional tasks build
// the <J,C,M> input per batch item; the ssr task trains the 6-channel model on
// (low-res, high-res) pairs over random segments.
TrainResult train_video(STUNetModel& model, const Dataset& data, const NoiseSchedule& sch,
                        const TrainConfig& cfg, Adam& opt, VideoTask task, int segment_frames = 8);

// Worker cap: min(STUNET_THREADS if set, hardware concurrency).
int worker_count(int jobs);

// ---- checkpoint conversion ------------------------------------------------------

std::string t2i_config_json(const T2IConfig& cfg);
T2IConfig t2i_config_from_json(const std::string& js);
std::string stunet_config_json(const STUNetConfig& cfg);
STUNetConfig stunet_config_from_json(const std::string& js);

Checkpoint checkpoint_of(const T2IModel& m, const Adam* opt, long long step);
Checkpoint checkpoint_of(const STUNetModel& m, const Adam* opt, long long step);
T2IModel t2i_from_checkpoint(const Checkpoint& ck);
STUNetModel stunet_from_checkpoint(const Checkpoint& ck);
Adam adam_from_checkpoint(const Checkpoint& ck, double lr);

// Nearest-neighbor spatial halving of a [T,C,H,W] clip, repeated `times`.
Tensor spatial_down(const Tensor& v, int times);
// [0,1] -> [-1,1]
Tensor normalize_video(const Tensor& v);
Tensor denormalize_video(const Tensor& v);

}  // namespace stvid
