#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "stvid/unet.hpp"

namespace stvid {

// ---- layout conversion -------------------------------------------------------
// Compute layout is [T,C,H,W]; files store frame-major T,H,W,C.
Tensor tchw_to_thwc(const Tensor& v);
Tensor thwc_to_tchw(const Tensor& v);

// ---- raw video files (.stvf) -------------------------------------------------
// magic "STVF", uint32 LE T,H,W,C, then T*H*W*C little-endian float32, frame-major.
void write_vidfile(const std::filesystem::path& path, const Tensor& video_tchw);
Tensor read_vidfile(const std::filesystem::path& path);  // -> [T,C,H,W]

// ---- portable gray/color maps --------------------------------------------------
// P5/P6, maxval 255; values clamped from [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor& image_hw);
void write_ppm(const std::filesystem::path& path, const Tensor& image_chw);
Tensor read_pgm(const std::filesystem::path& path);  // -> [H,W] in [0,1]
Tensor read_ppm(const std::filesystem::path& path);  // -> [3,H,W] in [0,1]

// 0/255 PGM regions -> binary {0,1} mask [1,H,W]
Tensor read_region_mask(const std::filesystem::path& path);

// ---- checkpoints (.stvc) -------------------------------------------------------
// magic "STVC", uint32 LE header length, JSON header, float32 LE payload.
// Header: {"version":1,"kind":...,"step":...,"config":{...},
//          "tensors":{name:{"shape":[...],"dtype":"f32","offset":bytes,"frozen":bool}}}
struct Checkpoint {
    int version = 1;
    std::string kind;  // "t2i" | "stunet" | "ssr"
    long long step = 0;
    std::string config_json;          // model config echo
    NamedTensors tensors;             // includes optimizer state under "opt." names
    std::map<std::string, bool> frozen;

    const Tensor& tensor(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---- small CSV writer ----------------------------------------------------------
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& cells);

private:
    std::filesystem::path path_;
    std::string buffer_;
    std::size_t columns_;
    void flush();
};

std::string format_double(double v);

}  // namespace stvid
