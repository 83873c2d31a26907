#include "stvid/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "stvid/applications.hpp"
#include "stvid/cascade.hpp"

namespace stvid {

using nlohmann::json;

void Adam::step(NamedVars& params, const NamedTensors& grads) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("Adam: gradient for unknown parameter " + name);
        Tensor& w = it->second->value;
        if (!w.same_shape(g)) throw ConfigError("Adam: gradient shape mismatch for " + name);
        Tensor& mm = m.try_emplace(name, Tensor::zeros(w.shape)).first->second;
        Tensor& vv = v.try_emplace(name, Tensor::zeros(w.shape)).first->second;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            mm.data[i] = quantize_f32(beta1 * mm.data[i] + (1.0 - beta1) * g.data[i]);
            vv.data[i] = quantize_f32(beta2 * vv.data[i] + (1.0 - beta2) * g.data[i] * g.data[i]);
            double mhat = mm.data[i] / bc1;
            double vhat = vv.data[i] / bc2;
            w.data[i] = quantize_f32(w.data[i] - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

int worker_count(int jobs) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("STUNET_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::max(1, std::min(n, jobs));
}

// ---- dataset ---------------------------------------------------------------

namespace {

MotionSpec class_motion(int label, Rng& rng, int size, int frames) {
    MotionSpec spec;
    // small fast objects: hard to localize frame by frame under noise, easy to
    // track across frames, so temporal context carries real signal
    spec.object_size = size * (0.10 + 0.04 * rng.uniform());
    // keep the blob (3 sigma) inside the frame at the motion extremes
    double max_amp = (size - 1) / 2.0 - 1.5 * spec.object_size - 1.0;
    switch (label % 4) {
        case 0:
            spec.kind = MotionKind::sinusoid;
            spec.axis = MotionAxis::horizontal;
            break;
        case 1:
            spec.kind = MotionKind::sinusoid;
            spec.axis = MotionAxis::vertical;
            break;
        case 2:
            spec.kind = MotionKind::linear;
            spec.axis = MotionAxis::horizontal;
            break;
        default:
            spec.kind = MotionKind::bounce;
            spec.axis = MotionAxis::vertical;
            break;
    }
    if (spec.kind == MotionKind::linear) {
        double max_v = max_amp / ((frames - 1) / 2.0);
        spec.amplitude = max_v * (0.4 + 0.6 * rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        spec.frequency = 0.0;
        spec.phase = 0.0;
    } else {
        spec.amplitude = max_amp * (0.55 + 0.45 * rng.uniform());
        spec.frequency = 0.08 + 0.22 * rng.uniform();
        spec.phase = 2.0 * 3.14159265358979323846 * rng.uniform();
    }
    return spec;
}

const char* kind_name(MotionKind k) {
    switch (k) {
        case MotionKind::sinusoid: return "sinusoid";
        case MotionKind::bounce: return "bounce";
        case MotionKind::linear: return "linear";
    }
    return "?";
}

}  // namespace

std::vector<DatasetItem> generate_dataset(const std::filesystem::path& dir, const GenDataConfig& cfg) {
    if (cfg.count < 1 || cfg.frames < 2 || cfg.size < 8) throw ConfigError("generate_dataset: bad config");
    std::filesystem::create_directories(dir);
    CsvWriter manifest(dir / "manifest.csv",
                       {"file", "label", "kind", "axis", "amplitude", "frequency", "phase", "object_size", "seed"});
    std::vector<DatasetItem> items;
    for (int i = 0; i < cfg.count; ++i) {
        std::uint64_t item_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
        Rng rng(item_seed);
        int label = i % 4;
        MotionSpec spec = class_motion(label, rng, cfg.size, cfg.frames);
        Tensor video = render_video(spec, cfg.frames, cfg.size, cfg.size, item_seed);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.stvf", i);
        write_vidfile(dir / name, video);
        manifest.row({name, std::to_string(label), kind_name(spec.kind),
                      spec.axis == MotionAxis::horizontal ? "h" : "v", format_double(spec.amplitude),
                      format_double(spec.frequency), format_double(spec.phase), format_double(spec.object_size),
                      std::to_string(item_seed)});
        items.push_back({name, label});
    }
    return items;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw ConfigError("load_dataset: missing manifest in " + dir.string());
    Dataset data;
    std::string line;
    std::getline(manifest, line);  // header
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string file, label;
        std::getline(ls, file, ',');
        std::getline(ls, label, ',');
        Tensor clip = read_vidfile(dir / file);
        if (data.clips.empty()) {
            data.frames = clip.shape[0];
            data.height = clip.shape[2];
            data.width = clip.shape[3];
        } else if (clip.shape[0] != data.frames || clip.shape[2] != data.height || clip.shape[3] != data.width) {
            throw ConfigError("load_dataset: clip " + file + " has mismatched shape " + clip.shape_str());
        }
        data.clips.push_back(std::move(clip));
        data.labels.push_back(std::stoi(label));
    }
    if (data.clips.empty()) throw ConfigError("load_dataset: empty dataset in " + dir.string());
    return data;
}

Tensor spatial_down(const Tensor& v, int times) {
    Tensor out = v;
    for (int i = 0; i < times; ++i) {
        out = resize_nearest_fw(out, 2, Resize::down);
        out = resize_nearest_fw(out, 3, Resize::down);
    }
    return out;
}

Tensor normalize_video(const Tensor& v) {
    Tensor out = v;
    for (double& x : out.data) x = 2.0 * x - 1.0;
    return out;
}

Tensor denormalize_video(const Tensor& v) {
    Tensor out = v;
    for (double& x : out.data) x = (x + 1.0) / 2.0;
    return out;
}

// ---- training ---------------------------------------------------------------

VideoTask video_task_from(const std::string& name) {
    if (name == "none") return VideoTask::none;
    if (name == "image2video") return VideoTask::image2video;
    if (name == "inpaint") return VideoTask::inpaint;
    if (name == "cinemagraph") return VideoTask::cinemagraph;
    if (name == "ssr") return VideoTask::ssr;
    throw ConfigError("unknown video task: " + name);
}

namespace {

int down_factor(int from, int to) {
    int times = 0;
    while (from > to) {
        if (from % 2 != 0) throw ConfigError("training: clip size not reducible to image_size");
        from /= 2;
        ++times;
    }
    if (from != to) throw ConfigError("training: image_size must divide the clip size by powers of 2");
    return times;
}

void log_losses(const std::filesystem::path& csv, const std::vector<double>& losses) {
    if (csv.empty()) return;
    CsvWriter out(csv, {"step", "loss"});
    std::vector<double>::size_type i = 0;
    for (; i < losses.size(); ++i) out.row({std::to_string(i + 1), format_double(losses[i])});
}

NamedTensors trainable_grads(const NamedVars& params, const GradMap& gm) {
    NamedTensors grads;
    for (const auto& [name, var] : params)
        if (var->requires_grad) grads[name] = grad_of(gm, var);
    return grads;
}

void accumulate(NamedTensors& total, const NamedTensors& part, double scale) {
    for (const auto& [name, g] : part) {
        auto it = total.find(name);
        if (it == total.end()) {
            Tensor t = g;
            for (double& x : t.data) x *= scale;
            total[name] = std::move(t);
        } else {
            for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += scale * g.data[i];
        }
    }
}

// Random axis-aligned box region over frames [f0,f1], used by the inpaint and
// cinemagraph fine-tunes.
Tensor random_region(Rng& rng, int T, int H, int W, bool all_frames) {
    Tensor region({T, 1, H, W});
    int bh = 4 + rng.uniform_int(std::max(1, H / 2 - 3));
    int bw = 4 + rng.uniform_int(std::max(1, W / 2 - 3));
    int y0 = rng.uniform_int(H - bh + 1);
    int x0 = rng.uniform_int(W - bw + 1);
    int f0 = 0, f1 = T - 1;
    if (!all_frames) {
        f0 = rng.uniform_int(T);
        f1 = f0 + rng.uniform_int(T - f0);
    }
    for (int t = f0; t <= f1; ++t)
        for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) region.at(t, 0, y, x) = 1.0;
    return region;
}

}  // namespace

TrainResult train_t2i(T2IModel& model, const Dataset& data, const NoiseSchedule& sch,
                      const TrainConfig& cfg, Adam& opt) {
    if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("train_t2i: steps and batch must be >= 1");
    int times = down_factor(data.height, cfg.image_size);
    int n = static_cast<int>(data.clips.size());
    TrainResult res;
    opt.lr = cfg.lr;
    long long start = opt.t;
    bool ssr_image = (model.cfg.in_channels == 6);
    for (long long step = start; step < start + cfg.steps; ++step) {
        Rng rng(mix_seed(cfg.seed, 0xb7a3c0de + static_cast<std::uint64_t>(step)));
        int B = cfg.batch;
        int S = cfg.image_size;
        Tensor input({B, model.cfg.in_channels, S, S});
        Tensor eps({B, 3, S, S});
        std::vector<int> ts(static_cast<std::size_t>(B)), labels(static_cast<std::size_t>(B));
        std::int64_t plane = static_cast<std::int64_t>(S) * S;
        for (int b = 0; b < B; ++b) {
            int ci = rng.uniform_int(n);
            int fi = rng.uniform_int(data.frames);
            labels[static_cast<std::size_t>(b)] = data.labels[static_cast<std::size_t>(ci)];
            int t = rng.uniform_int(sch.steps);
            ts[static_cast<std::size_t>(b)] = t;
            double a = sch.alpha_bar[static_cast<std::size_t>(t)];

            Tensor scaled = spatial_down(data.clips[static_cast<std::size_t>(ci)], times);
            Tensor frame({1, 3, S, S});
            std::copy(scaled.data.begin() + fi * 3 * plane, scaled.data.begin() + (fi + 1) * 3 * plane,
                      frame.data.begin());
            for (std::int64_t i = 0; i < 3 * plane; ++i) {
                double x = 2.0 * frame.data[static_cast<std::size_t>(i)] - 1.0;
                double e = rng.normal();
                eps.data[static_cast<std::size_t>(b * 3 * plane + i)] = e;
                input.data[static_cast<std::size_t>(b) * model.cfg.in_channels * plane + i] =
                    std::sqrt(a) * x + std::sqrt(1.0 - a) * e;
            }
            if (ssr_image) {
                // channels 3..5: nearest-upsampled low-res version of the frame
                Tensor low_up = resize_nearest_fw(
                    resize_nearest_fw(spatial_down(frame, 1), 2, Resize::up), 3, Resize::up);
                for (std::int64_t i = 0; i < 3 * plane; ++i)
                    input.data[static_cast<std::size_t>(b) * 6 * plane + 3 * plane + i] =
                        2.0 * low_up.data[static_cast<std::size_t>(i)] - 1.0;
            }
        }
        Var pred = forward_t2i(model, constant(input), ts, labels);
        Var loss = mse(pred, constant(eps));
        double lv = loss->value.data[0];
        if (!std::isfinite(lv))
            throw NumericError("train_t2i: non-finite loss at step " + std::to_string(step + 1));
        GradMap gm = backward(loss);
        opt.step(model.params, trainable_grads(model.params, gm));
        res.losses.push_back(lv);
    }
    res.first_loss = res.losses.front();
    res.last_loss = res.losses.back();
    log_losses(cfg.loss_csv, res.losses);
    return res;
}

TrainResult train_video(STUNetModel& model, const Dataset& data, const NoiseSchedule& sch,
                        const TrainConfig& cfg, Adam& opt, VideoTask task, int segment_frames) {
    if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("train_video: steps and batch must be >= 1");
    bool is_ssr = (task == VideoTask::ssr);
    bool conditional = (task == VideoTask::image2video || task == VideoTask::inpaint ||
                        task == VideoTask::cinemagraph);
    if (conditional && !model.cfg.cond_expanded)
        throw ConfigError("train_video: conditional task requires an expanded (7-channel) model");
    if (is_ssr && model.cfg.t2i.in_channels != 6)
        throw ConfigError("train_video: ssr task requires the 6-channel SSR model");

    int times = is_ssr ? 0 : down_factor(data.height, cfg.image_size);
    int n = static_cast<int>(data.clips.size());
    std::uint64_t spatial_before = hash_params(model.spatial);
    TrainResult res;
    opt.lr = cfg.lr;
    long long start = opt.t;

    for (long long step = start; step < start + cfg.steps; ++step) {
        std::uint64_t step_seed = mix_seed(cfg.seed, 0x51de0c0de + static_cast<std::uint64_t>(step));
        int B = cfg.batch;
        std::vector<double> item_loss(static_cast<std::size_t>(B), 0.0);
        std::vector<NamedTensors> item_grads(static_cast<std::size_t>(B));

        auto run_item = [&](int b) {
            Rng rng(mix_seed(step_seed, static_cast<std::uint64_t>(b)));
            int ci = rng.uniform_int(n);
            int label = data.labels[static_cast<std::size_t>(ci)];
            int t = rng.uniform_int(sch.steps);
            Var loss;
            if (is_ssr) {
                const Tensor& clip = data.clips[static_cast<std::size_t>(ci)];
                int T = clip.shape[0];
                int Tp = std::min(segment_frames, T);
                int s0 = rng.uniform_int(T - Tp + 1);
                Var full = constant(clip);
                Tensor high = normalize_video(slice(full, 0, s0, Tp)->value);
                Tensor low_up = normalize_video(
                    resize_nearest_fw(resize_nearest_fw(spatial_down(slice(full, 0, s0, Tp)->value, 1), 2,
                                                        Resize::up),
                                      3, Resize::up));
                Tensor eps = Tensor::randn(high.shape, rng);
                loss = diffusion_step_loss(
                    [&](const Tensor& x_t, int tt) {
                        Var input = concat(constant(x_t), constant(low_up), 1);
                        return forward_stunet(model, input, tt, label);
                    },
                    high, t, eps, sch);
            } else {
                Tensor x0 = normalize_video(spatial_down(data.clips[static_cast<std::size_t>(ci)], times));
                int T = x0.shape[0], H = x0.shape[2], W = x0.shape[3];
                std::optional<ConditioningPair> pair;
                if (task == VideoTask::image2video) {
                    Var first = slice(constant(x0), 0, 0, 1);
                    Tensor frame({3, H, W}, first->value.data);
                    pair = cond_image_to_video(frame, T);
                } else if (task == VideoTask::inpaint) {
                    pair = cond_inpaint(x0, random_region(rng, T, H, W, false));
                } else if (task == VideoTask::cinemagraph) {
                    Var first = slice(constant(x0), 0, 0, 1);
                    Tensor frame({3, H, W}, first->value.data);
                    Tensor region3 = random_region(rng, 1, H, W, true);
                    Tensor region({1, H, W}, region3.data);
                    pair = cond_cinemagraph(frame, region, T);
                    // cinemagraph target: true motion inside the region, the
                    // frozen first frame everywhere else
                    Tensor orig = x0;
                    x0 = pair->C;
                    for (int tt = 0; tt < T; ++tt)
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x)
                                if (pair->M.at(tt, 0, y, x) == 0.0)
                                    for (int c = 0; c < 3; ++c) x0.at(tt, c, y, x) = orig.at(tt, c, y, x);
                }
                Tensor eps = Tensor::randn(x0.shape, rng);
                loss = diffusion_step_loss(
                    [&](const Tensor& x_t, int tt) {
                        if (pair.has_value())
                            return forward_stunet(model, constant(assemble_conditional_input(x_t, *pair)), tt,
                                                  label);
                        return forward_stunet(model, constant(x_t), tt, label);
                    },
                    x0, t, eps, sch);
            }
            item_loss[static_cast<std::size_t>(b)] = loss->value.data[0];
            GradMap gm = backward(loss);
            item_grads[static_cast<std::size_t>(b)] = trainable_grads(model.temporal, gm);
        };

        int workers = worker_count(B);
        if (workers <= 1) {
            for (int b = 0; b < B; ++b) run_item(b);
        } else {
            std::vector<std::thread> pool;
            std::atomic<int> next{0};
            for (int wk = 0; wk < workers; ++wk)
                pool.emplace_back([&]() {
                    for (int b = next.fetch_add(1); b < B; b = next.fetch_add(1)) run_item(b);
                });
            for (auto& th : pool) th.join();
        }

        double lv = 0.0;
        NamedTensors grads;
        for (int b = 0; b < B; ++b) {  // fixed-order reduction
            lv += item_loss[static_cast<std::size_t>(b)] / B;
            accumulate(grads, item_grads[static_cast<std::size_t>(b)], 1.0 / B);
        }
        if (!std::isfinite(lv))
            throw NumericError("train_video: non-finite loss at step " + std::to_string(step + 1));
        opt.step(model.temporal, grads);
        res.losses.push_back(lv);
    }

    if (hash_params(model.spatial) != spatial_before)
        throw NumericError("train_video: frozen spatial weights were mutated");
    res.first_loss = res.losses.front();
    res.last_loss = res.losses.back();
    log_losses(cfg.loss_csv, res.losses);
    return res;
}

// ---- config json ---------------------------------------------------------------

std::string t2i_config_json(const T2IConfig& cfg) {
    json j;
    j["levels"] = cfg.levels;
    j["base_channels"] = cfg.base_channels;
    j["channel_mult"] = cfg.channel_mult;
    j["cond_dim"] = cfg.cond_dim;
    j["in_channels"] = cfg.in_channels;
    j["out_channels"] = cfg.out_channels;
    j["num_classes"] = cfg.num_classes;
    return j.dump();
}

T2IConfig t2i_config_from_json(const std::string& js) {
    json j = json::parse(js);
    T2IConfig cfg;
    cfg.levels = j.at("levels").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.channel_mult = j.at("channel_mult").get<std::vector<int>>();
    cfg.cond_dim = j.at("cond_dim").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.out_channels = j.at("out_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    return cfg;
}

std::string stunet_config_json(const STUNetConfig& cfg) {
    json j;
    j["t2i"] = json::parse(t2i_config_json(cfg.t2i));
    j["temporal_kernel"] = cfg.temporal_kernel;
    j["temporal_levels"] = cfg.temporal_levels;
    j["attn_blocks_coarsest"] = cfg.attn_blocks_coarsest;
    j["cond_expanded"] = cfg.cond_expanded;
    return j.dump();
}

STUNetConfig stunet_config_from_json(const std::string& js) {
    json j = json::parse(js);
    STUNetConfig cfg;
    cfg.t2i = t2i_config_from_json(j.at("t2i").dump());
    cfg.temporal_kernel = j.at("temporal_kernel").get<int>();
    cfg.temporal_levels = j.at("temporal_levels").get<std::vector<int>>();
    cfg.attn_blocks_coarsest = j.at("attn_blocks_coarsest").get<int>();
    cfg.cond_expanded = j.at("cond_expanded").get<bool>();
    return cfg;
}

// ---- checkpoint conversion -------------------------------------------------------

namespace {

void add_opt_state(Checkpoint& ck, const Adam* opt) {
    if (opt == nullptr) return;
    for (const auto& [name, t] : opt->m) ck.tensors["opt.m." + name] = t;
    for (const auto& [name, t] : opt->v) ck.tensors["opt.v." + name] = t;
}

}  // namespace

Checkpoint checkpoint_of(const T2IModel& m, const Adam* opt, long long step) {
    Checkpoint ck;
    ck.kind = "t2i";
    ck.step = step;
    ck.config_json = json{{"model", json::parse(t2i_config_json(m.cfg))}}.dump();
    for (const auto& [name, var] : m.params) {
        ck.tensors[name] = var->value;
        ck.frozen[name] = false;
    }
    add_opt_state(ck, opt);
    return ck;
}

Checkpoint checkpoint_of(const STUNetModel& m, const Adam* opt, long long step) {
    Checkpoint ck;
    ck.kind = (m.cfg.t2i.in_channels == 6) ? "ssr" : "stunet";
    ck.step = step;
    ck.config_json = json{{"model", json::parse(stunet_config_json(m.cfg))}}.dump();
    for (const auto& [name, var] : m.spatial) {
        ck.tensors[name] = var->value;
        ck.frozen[name] = true;
    }
    for (const auto& [name, var] : m.temporal) {
        ck.tensors[name] = var->value;
        ck.frozen[name] = false;
    }
    add_opt_state(ck, opt);
    return ck;
}

namespace {

void install_from_checkpoint(NamedVars& params, const Checkpoint& ck, bool frozen) {
    for (auto& [name, var] : params) {
        const Tensor& t = ck.tensor(name);
        if (t.shape != var->value.shape)
            throw ConfigError("checkpoint tensor " + name + " has shape " + shape_str(t.shape) +
                              ", model expects " + var->value.shape_str());
        var = leaf(t, !frozen);
    }
}

}  // namespace

T2IModel t2i_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "t2i") throw ConfigError("expected a t2i checkpoint, got kind '" + ck.kind + "'");
    T2IModel m = build_t2i(t2i_config_from_json(json::parse(ck.config_json).at("model").dump()), 0);
    install_from_checkpoint(m.params, ck, false);
    return m;
}

STUNetModel stunet_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "stunet" && ck.kind != "ssr")
        throw ConfigError("expected a stunet/ssr checkpoint, got kind '" + ck.kind + "'");
    STUNetConfig cfg = stunet_config_from_json(json::parse(ck.config_json).at("model").dump());
    bool expanded = cfg.cond_expanded;
    cfg.cond_expanded = false;
    T2IModel skeleton = build_t2i(cfg.t2i, 0);
    STUNetModel m = inflate(skeleton, cfg, 0);
    if (expanded) expand_input_conv(m);
    install_from_checkpoint(m.spatial, ck, true);
    install_from_checkpoint(m.temporal, ck, false);
    return m;
}

Adam adam_from_checkpoint(const Checkpoint& ck, double lr) {
    Adam opt;
    opt.lr = lr;
    opt.t = ck.step;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("opt.m.", 0) == 0) opt.m[name.substr(6)] = t;
        if (name.rfind("opt.v.", 0) == 0) opt.v[name.substr(6)] = t;
    }
    return opt;
}

}  // namespace stvid
