#include "stvid/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stvid {

using nlohmann::json;

Tensor tchw_to_thwc(const Tensor& v) {
    if (v.rank() != 4) throw ConfigError("tchw_to_thwc: expected rank 4, got " + v.shape_str());
    int T = v.shape[0], C = v.shape[1], H = v.shape[2], W = v.shape[3];
    Tensor out({T, H, W, C});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) out.at(t, h, w, c) = v.at(t, c, h, w);
    return out;
}

Tensor thwc_to_tchw(const Tensor& v) {
    if (v.rank() != 4) throw ConfigError("thwc_to_tchw: expected rank 4, got " + v.shape_str());
    int T = v.shape[0], H = v.shape[1], W = v.shape[2], C = v.shape[3];
    Tensor out({T, C, H, W});
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) out.at(t, c, h, w) = v.at(t, h, w, c);
    return out;
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

void put_f32(std::string& s, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(s, bits);
}

float get_f32(const std::string& s, std::size_t off) {
    std::uint32_t bits = get_u32(s, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ConfigError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

}  // namespace

void write_vidfile(const std::filesystem::path& path, const Tensor& video_tchw) {
    Tensor v = tchw_to_thwc(video_tchw);
    std::string out = "STVF";
    for (int i = 0; i < 4; ++i) put_u32(out, static_cast<std::uint32_t>(v.shape[static_cast<std::size_t>(i)]));
    out.reserve(out.size() + v.data.size() * 4);
    for (double x : v.data) put_f32(out, static_cast<float>(x));
    write_file(path, out);
}

Tensor read_vidfile(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 20 || bytes.compare(0, 4, "STVF") != 0)
        throw ConfigError("not a video file (bad magic): " + path.string());
    int T = static_cast<int>(get_u32(bytes, 4));
    int H = static_cast<int>(get_u32(bytes, 8));
    int W = static_cast<int>(get_u32(bytes, 12));
    int C = static_cast<int>(get_u32(bytes, 16));
    std::size_t expect = 20 + static_cast<std::size_t>(T) * H * W * C * 4;
    if (bytes.size() != expect)
        throw ConfigError("truncated or oversized video payload in " + path.string() + ": have " +
                          std::to_string(bytes.size() - 20) + " bytes, header implies " +
                          std::to_string(expect - 20));
    Tensor v({T, H, W, C});
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(get_f32(bytes, 20 + 4 * i));
    return thwc_to_tchw(v);
}

namespace {

unsigned char to_byte(double v) {
    double x = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<unsigned char>(std::lround(x));
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image_hw) {
    if (image_hw.rank() != 2) throw ConfigError("write_pgm: expected [H,W], got " + image_hw.shape_str());
    int H = image_hw.shape[0], W = image_hw.shape[1];
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (double v : image_hw.data) out.push_back(static_cast<char>(to_byte(v)));
    write_file(path, out);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image_chw) {
    if (image_chw.rank() != 3 || image_chw.shape[0] != 3)
        throw ConfigError("write_ppm: expected [3,H,W], got " + image_chw.shape_str());
    int H = image_chw.shape[1], W = image_chw.shape[2];
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(image_chw.at(c, h, w))));
    write_file(path, out);
}

namespace {

struct PnmHeader {
    int width, height, maxval;
    std::size_t data_offset;
};

PnmHeader parse_pnm(const std::string& bytes, const char* magic, const std::filesystem::path& path) {
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
        throw ConfigError(std::string("not a ") + magic + " file: " + path.string());
    std::size_t pos = 2;
    auto next_int = [&]() {
        while (pos < bytes.size() && (std::isspace(static_cast<unsigned char>(bytes[pos])) || bytes[pos] == '#')) {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            else
                ++pos;
        }
        int v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw ConfigError("malformed header in " + path.string());
        return v;
    };
    PnmHeader h{};
    h.width = next_int();
    h.height = next_int();
    h.maxval = next_int();
    if (h.maxval != 255) throw ConfigError("unsupported maxval in " + path.string());
    h.data_offset = pos + 1;  // single whitespace after maxval
    return h;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    PnmHeader h = parse_pnm(bytes, "P5", path);
    std::size_t need = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() < h.data_offset + need) throw ConfigError("truncated PGM payload in " + path.string());
    Tensor out({h.height, h.width});
    for (std::size_t i = 0; i < need; ++i)
        out.data[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0;
    return out;
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    PnmHeader h = parse_pnm(bytes, "P6", path);
    std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
    if (bytes.size() < h.data_offset + need) throw ConfigError("truncated PPM payload in " + path.string());
    Tensor out({3, h.height, h.width});
    std::size_t i = 0;
    for (int y = 0; y < h.height; ++y)
        for (int x = 0; x < h.width; ++x)
            for (int c = 0; c < 3; ++c, ++i)
                out.at(c, y, x) = static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0;
    return out;
}

Tensor read_region_mask(const std::filesystem::path& path) {
    Tensor g = read_pgm(path);
    Tensor out({1, g.shape[0], g.shape[1]});
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (g.data[i] != 0.0 && g.data[i] != 1.0)
            throw ConfigError("region mask must contain only 0/255 pixels: " + path.string());
        out.data[i] = g.data[i];
    }
    return out;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("checkpoint is missing tensor: " + name);
    return it->second;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    json header;
    header["version"] = ck.version;
    header["kind"] = ck.kind;
    header["step"] = ck.step;
    header["config"] = ck.config_json.empty() ? json::object() : json::parse(ck.config_json);
    json tensors = json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        json rec;
        rec["shape"] = t.shape;
        rec["dtype"] = "f32";
        rec["offset"] = offset;
        auto fz = ck.frozen.find(name);
        rec["frozen"] = (fz != ck.frozen.end()) ? fz->second : false;
        tensors[name] = rec;
        offset += static_cast<std::size_t>(t.numel()) * 4;
    }
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::string out = "STVC";
    put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out += hs;
    for (const auto& [name, t] : ck.tensors)
        for (double v : t.data) put_f32(out, static_cast<float>(v));
    write_file(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 8 || bytes.compare(0, 4, "STVC") != 0)
        throw ConfigError("not a checkpoint (bad magic): " + path.string());
    std::size_t hlen = get_u32(bytes, 4);
    if (bytes.size() < 8 + hlen) throw ConfigError("truncated checkpoint header: " + path.string());
    json header = json::parse(bytes.substr(8, hlen));
    Checkpoint ck;
    ck.version = header.at("version").get<int>();
    if (ck.version != 1)
        throw ConfigError("unsupported checkpoint version " + std::to_string(ck.version) + " in " + path.string());
    ck.kind = header.at("kind").get<std::string>();
    ck.step = header.value("step", 0LL);
    ck.config_json = header.at("config").dump();

    std::size_t payload_off = 8 + hlen;
    std::size_t payload_len = bytes.size() - payload_off;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, bytes
    for (const auto& [name, rec] : header.at("tensors").items()) {
        std::vector<int> shape = rec.at("shape").get<std::vector<int>>();
        if (rec.at("dtype").get<std::string>() != "f32")
            throw ConfigError("tensor " + name + " has unsupported dtype in " + path.string());
        std::size_t off = rec.at("offset").get<std::size_t>();
        std::size_t n = static_cast<std::size_t>(numel_of(shape));
        if (off % 4 != 0 || off + n * 4 > payload_len)
            throw ConfigError("tensor " + name + " payload span out of bounds in " + path.string());
        spans.emplace_back(off, n * 4);
        Tensor t(shape);
        for (std::size_t i = 0; i < n; ++i)
            t.data[i] = static_cast<double>(get_f32(bytes, payload_off + off + 4 * i));
        ck.tensors[name] = std::move(t);
        ck.frozen[name] = rec.value("frozen", false);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].first < spans[i - 1].first + spans[i - 1].second)
            throw ConfigError("overlapping tensor payloads in " + path.string());
    return ck;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) buffer_ += (i ? "," : "") + header[i];
    buffer_ += "\n";
    flush();
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw ConfigError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) buffer_ += (i ? "," : "") + cells[i];
    buffer_ += "\n";
    flush();
}

void CsvWriter::flush() {
    std::ofstream f(path_, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path_.string());
    f.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace stvid
