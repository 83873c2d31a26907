// stvid: desk-scale space-time video diffusion pipelines.
//
// Subcommands: gen-data, train-t2i, train-video, sample, alias-lab.
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <memory>

#include "stvid/applications.hpp"
#include "stvid/cascade.hpp"
#include "stvid/multidiffusion.hpp"
#include "stvid/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stvid;

namespace {

NoiseSchedule schedule_from_config(const std::string& config_json) {
    json j = json::parse(config_json);
    if (!j.contains("schedule")) return make_schedule(ScheduleKind::linear, 1000);
    return make_schedule(schedule_kind_from(j["schedule"]["kind"].get<std::string>()),
                         j["schedule"]["steps"].get<int>());
}

std::string with_schedule(const std::string& config_json, const std::string& kind, int steps) {
    json j = json::parse(config_json);
    j["schedule"] = {{"kind", kind}, {"steps", steps}};
    return j.dump();
}

void write_frames(const fs::path& dir, const Tensor& video) {
    fs::create_directories(dir);
    int T = video.shape[0];
    for (int t = 0; t < T; ++t) {
        Tensor frame({3, video.shape[2], video.shape[3]});
        std::int64_t n = frame.numel();
        std::copy(video.data.begin() + t * n, video.data.begin() + (t + 1) * n, frame.data.begin());
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", t);
        write_ppm(dir / name, frame);
    }
}

Tensor region_over_frames(const Tensor& region_1hw, int T, int f0, int f1) {
    int H = region_1hw.shape[1], W = region_1hw.shape[2];
    Tensor out({T, 1, H, W});
    for (int t = std::max(0, f0); t <= std::min(T - 1, f1); ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) out.at(t, 0, h, w) = region_1hw.at(0, h, w);
    return out;
}

struct GenArgs {
    std::string out;
    GenDataConfig cfg;
};

int cmd_gen_data(const GenArgs& a) {
    auto items = generate_dataset(a.out, a.cfg);
    std::cout << "wrote " << items.size() << " clips to " << a.out << "\n";
    return 0;
}

struct TrainT2IArgs {
    std::string data, out, resume, log;
    TrainConfig train;
    T2IConfig model;
    std::string schedule_kind = "linear";
    int schedule_steps = 1000;
};

int cmd_train_t2i(const TrainT2IArgs& a) {
    Dataset data = load_dataset(a.data);
    NoiseSchedule sch = make_schedule(schedule_kind_from(a.schedule_kind), a.schedule_steps);
    T2IModel model;
    Adam opt;
    if (!a.resume.empty()) {
        Checkpoint ck = read_checkpoint(a.resume);
        model = t2i_from_checkpoint(ck);
        opt = adam_from_checkpoint(ck, a.train.lr);
        sch = schedule_from_config(ck.config_json);
    } else {
        model = build_t2i(a.model, a.train.seed);
    }
    TrainConfig cfg = a.train;
    cfg.loss_csv = a.log.empty() ? fs::path() : fs::path(a.log);
    TrainResult res = train_t2i(model, data, sch, cfg, opt);
    Checkpoint ck = checkpoint_of(model, &opt, opt.t);
    ck.config_json = with_schedule(ck.config_json, a.schedule_kind, a.schedule_steps);
    write_checkpoint(a.out, ck);
    std::cout << "t2i: step " << opt.t << ", loss " << res.first_loss << " -> " << res.last_loss << "\n";
    return 0;
}

struct TrainVideoArgs {
    std::string data, t2i, resume, out, log, task = "none";
    TrainConfig train;
    int temporal_kernel = 3;
    int attn_blocks = 2;
    std::vector<int> temporal_levels = {0};
    int segment_frames = 8;
    std::string schedule_kind = "linear";
    int schedule_steps = 1000;
};

int cmd_train_video(const TrainVideoArgs& a) {
    Dataset data = load_dataset(a.data);
    VideoTask task = video_task_from(a.task);
    NoiseSchedule sch = make_schedule(schedule_kind_from(a.schedule_kind), a.schedule_steps);
    STUNetModel model;
    Adam opt;
    if (!a.resume.empty()) {
        Checkpoint ck = read_checkpoint(a.resume);
        model = stunet_from_checkpoint(ck);
        opt = adam_from_checkpoint(ck, a.train.lr);
        sch = schedule_from_config(ck.config_json);
    } else {
        STUNetConfig cfg;
        cfg.temporal_kernel = a.temporal_kernel;
        cfg.temporal_levels = a.temporal_levels;
        cfg.attn_blocks_coarsest = a.attn_blocks;
        if (task == VideoTask::ssr && a.t2i.empty()) {
            // no pretrained 6-channel image model: build the SSR net from seed
            model = build_ssr(cfg, a.train.seed);
        } else {
            if (a.t2i.empty()) throw ConfigError("train-video: --t2i checkpoint required");
            T2IModel img = t2i_from_checkpoint(read_checkpoint(a.t2i));
            if (task == VideoTask::ssr && img.cfg.in_channels != 6)
                throw ConfigError("train-video --task ssr: the t2i checkpoint must be a 6-channel SSR image model");
            cfg.t2i = img.cfg;
            model = inflate(img, cfg, a.train.seed);
            if (task != VideoTask::none && task != VideoTask::ssr) expand_input_conv(model);
        }
    }
    TrainConfig cfg = a.train;
    if (task == VideoTask::ssr) cfg.image_size = data.height;
    cfg.loss_csv = a.log.empty() ? fs::path() : fs::path(a.log);
    TrainResult res = train_video(model, data, sch, cfg, opt, task, a.segment_frames);
    Checkpoint ck = checkpoint_of(model, &opt, opt.t);
    ck.config_json = with_schedule(ck.config_json, a.schedule_kind, a.schedule_steps);
    write_checkpoint(a.out, ck);
    std::cout << "video[" << a.task << "]: step " << opt.t << ", loss " << res.first_loss << " -> "
              << res.last_loss << "\n";
    return 0;
}

struct SampleArgs {
    std::string ckpt, out, frames_dir;
    std::uint64_t seed = 0;
    std::string mode = "ddim";
    int steps = 50;
    int label = 0;
    int frames = 16;
    std::string ssr_ckpt;
    int ssr_tprime = 8, ssr_stride = 6;
    std::string style_ckpt;
    std::vector<double> alphas = {1.0};
    std::string act_log;
    std::string sdedit_in;
    double strength = 0.97;
    std::string task;  // empty | image2video | inpaint | cinemagraph
    std::string cond_image, cond_video, region;
    int region_start = 0, region_end = 1 << 30;
};

int cmd_sample(const SampleArgs& a) {
    Checkpoint ck = read_checkpoint(a.ckpt);
    if (ck.kind != "stunet")
        throw ConfigError("sample: expected a video-model checkpoint (kind 'stunet'), got '" + ck.kind + "'");
    STUNetModel model = stunet_from_checkpoint(ck);
    NoiseSchedule sch = schedule_from_config(ck.config_json);
    SamplerMode mode = (a.mode == "ddpm") ? SamplerMode::ddpm
                                          : (a.mode == "ddim" ? SamplerMode::ddim
                                                              : throw ConfigError("unknown sampler mode: " + a.mode));

    NamedTensors orig_spatial, style_spatial;
    if (!a.style_ckpt.empty()) {
        Checkpoint style_ck = read_checkpoint(a.style_ckpt);
        if (style_ck.kind != "t2i") throw ConfigError("--style expects a t2i checkpoint");
        orig_spatial = snapshot(model.spatial);
        for (const auto& [name, var] : model.spatial) style_spatial[name] = style_ck.tensor(name);
    }

    int size = 8 << (model.cfg.t2i.levels - 1);  // minimal lattice; paired with dataset defaults below
    size = std::max(size, 16);
    int T = a.frames;
    std::optional<ConditioningPair> cond;
    if (!a.task.empty()) {
        if (!model.cfg.cond_expanded)
            throw ConfigError("sample: checkpoint is not conditioning-expanded; train with --task first");
        if (a.task == "image2video") {
            Tensor img = normalize_video(read_ppm(a.cond_image));
            size = img.shape[1];
            cond = cond_image_to_video(img, T);
        } else if (a.task == "inpaint") {
            Tensor video = normalize_video(read_vidfile(a.cond_video));
            T = video.shape[0];
            size = video.shape[2];
            Tensor region = region_over_frames(read_region_mask(a.region), T, a.region_start, a.region_end);
            cond = cond_inpaint(video, region);
        } else if (a.task == "cinemagraph") {
            Tensor img = normalize_video(read_ppm(a.cond_image));
            size = img.shape[1];
            cond = cond_cinemagraph(img, read_region_mask(a.region), T);
        } else {
            throw ConfigError("unknown conditioning task: " + a.task);
        }
    }

    bool sweep = a.alphas.size() > 1;
    if (sweep && a.style_ckpt.empty()) throw ConfigError("sample: an alpha sweep needs --style");
    std::unique_ptr<CsvWriter> act_csv;
    if (!a.act_log.empty())
        act_csv = std::make_unique<CsvWriter>(a.act_log, std::vector<std::string>{"alpha", "block", "mean", "stdev"});

    for (double alpha : a.alphas) {
        if (!a.style_ckpt.empty())
            install_spatial(model, interpolate_style(orig_spatial, style_spatial, alpha));

        if (act_csv) {
            // input statistics of every temporal block on the initial noise draw
            Rng rng(mix_seed(a.seed, 0xd1f));
            Tensor x0 = Tensor::randn({T, model.cfg.cond_expanded ? 7 : 3, size, size}, rng);
            if (model.cfg.cond_expanded && cond.has_value()) x0 = assemble_conditional_input(
                Tensor({T, 3, size, size}, std::vector<double>(x0.data.begin(),
                                                               x0.data.begin() + static_cast<std::size_t>(T) * 3 * size * size)),
                *cond);
            std::vector<ActStat> stats;
            forward_stunet(model, constant(x0), sch.steps - 1, a.label, &stats);
            for (const ActStat& s : stats)
                act_csv->row({format_double(alpha), s.block, format_double(s.mean), format_double(s.stdev)});
        }

        Tensor base;
        if (!a.sdedit_in.empty()) {
            Tensor input = normalize_video(read_vidfile(a.sdedit_in));
            base = sdedit_video(model, sch, input, a.strength, mode, a.steps, a.seed, a.label);
        } else {
            SampleOpts opts;
            opts.mode = mode;
            opts.n_steps = a.steps;
            opts.seed = a.seed;
            opts.frames = T;
            opts.height = size;
            opts.width = size;
            opts.label = a.label;
            base = sample_video(model, sch, opts, cond);
        }

        Tensor result = base;
        if (!a.ssr_ckpt.empty()) {
            Checkpoint ssr_ck = read_checkpoint(a.ssr_ckpt);
            if (ssr_ck.kind != "ssr") throw ConfigError("--ssr expects an ssr checkpoint");
            STUNetModel ssr = stunet_from_checkpoint(ssr_ck);
            NoiseSchedule ssr_sch = schedule_from_config(ssr_ck.config_json);
            WindowPlan plan = plan_windows(base.shape[0], a.ssr_tprime, a.ssr_stride);
            result = ssr_multidiffusion_sample(ssr, base, plan, ssr_sch, mode, a.steps,
                                               mix_seed(a.seed, 0x55f2), a.label);
        }

        fs::path out_path = a.out;
        fs::path frames_path = a.frames_dir;
        if (sweep) {
            std::string tag = "_a" + format_double(alpha);
            out_path = out_path.parent_path() / (out_path.stem().string() + tag + out_path.extension().string());
            if (!frames_path.empty()) frames_path += tag;
        }
        Tensor out01 = denormalize_video(result);
        write_vidfile(out_path, out01);
        if (!frames_path.empty()) write_frames(frames_path, out01);
        std::cout << "sampled " << shape_str(out01.shape) << " -> " << out_path.string() << "\n";
    }
    return 0;
}

struct AliasLabArgs {
    std::string out;
    std::vector<double> freqs = {0.05, 0.1, 0.4};
    std::vector<int> strides = {2, 4, 10};
    int window = 2;
    int frames = 81;
    int size = 32;
    double amplitude = 8.0;
    double phase = 0.0;
    std::uint64_t seed = 0;
    int flip_seeds = 64;
};

int cmd_alias_lab(const AliasLabArgs& a) {
    fs::create_directories(a.out);
    CsvWriter csv(fs::path(a.out) / "metrics.csv",
                  {"kind", "axis", "amplitude", "frequency", "phase", "object_size", "s", "w", "metric",
                   "metric_ground_truth", "ambiguity_count", "flip_found"});
    for (double f : a.freqs)
        for (int s : a.strides) {
            MotionSpec spec;
            spec.kind = MotionKind::sinusoid;
            spec.amplitude = a.amplitude;
            spec.frequency = f;
            spec.phase = a.phase;
            Tensor gt = render_video(spec, a.frames, a.size, a.size, a.seed);
            auto ambiguity = alias_ambiguity(spec, s);

            CascadeSpec cas{s, a.window};
            bool flip = false;
            CascadeResult picked;
            bool have = false;
            for (int ws = 0; ws < a.flip_seeds; ++ws) {
                CascadeResult res = simulate_cascade(gt, spec, cas, mix_seed(a.seed, static_cast<std::uint64_t>(ws)));
                if (!have) {
                    picked = res;
                    have = true;
                }
                if (has_direction_flip(res, cas)) {
                    picked = res;
                    flip = true;
                    break;
                }
            }
            double metric_gt = consistency_metric(gt);
            double metric_cas = consistency_metric(picked.video);
            csv.row({"sinusoid", "h", format_double(spec.amplitude), format_double(f), format_double(spec.phase),
                     format_double(spec.object_size), std::to_string(s), std::to_string(a.window),
                     format_double(metric_cas), format_double(metric_gt), std::to_string(ambiguity.size()),
                     flip ? "1" : "0"});

            char tag[64];
            std::snprintf(tag, sizeof(tag), "f%0.3f_s%d", f, s);
            write_pgm(fs::path(a.out) / (std::string("slice_truth_") + tag + ".pgm"),
                      xt_slice(gt, a.size / 2));
            write_pgm(fs::path(a.out) / (std::string("slice_cascade_") + tag + ".pgm"),
                      xt_slice(picked.video, a.size / 2));
        }
    std::cout << "alias lab results in " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale space-time video diffusion"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* cgen = app.add_subcommand("gen-data", "render a synthetic labeled video dataset");
    cgen->add_option("--out", gen.out, "output directory")->required();
    cgen->add_option("--count", gen.cfg.count, "number of clips");
    cgen->add_option("--frames", gen.cfg.frames, "frames per clip");
    cgen->add_option("--size", gen.cfg.size, "frame height/width");
    cgen->add_option("--seed", gen.cfg.seed, "dataset seed")->required();

    TrainT2IArgs t2i;
    auto* ct2i = app.add_subcommand("train-t2i", "train the toy image diffusion model on frames");
    ct2i->add_option("--data", t2i.data, "dataset directory")->required();
    ct2i->add_option("--out", t2i.out, "output checkpoint")->required();
    ct2i->add_option("--resume", t2i.resume, "checkpoint to resume from");
    ct2i->add_option("--steps", t2i.train.steps, "training steps");
    ct2i->add_option("--batch", t2i.train.batch, "batch size");
    ct2i->add_option("--lr", t2i.train.lr, "learning rate");
    ct2i->add_option("--seed", t2i.train.seed, "training seed")->required();
    ct2i->add_option("--image-size", t2i.train.image_size, "training resolution");
    ct2i->add_option("--levels", t2i.model.levels, "U-Net levels");
    ct2i->add_option("--base-ch", t2i.model.base_channels, "base channels");
    ct2i->add_option("--mult", t2i.model.channel_mult, "per-level channel multipliers");
    ct2i->add_option("--cond-dim", t2i.model.cond_dim, "embedding width");
    ct2i->add_option("--in-channels", t2i.model.in_channels, "input channels (6 for an SSR image model)");
    ct2i->add_option("--classes", t2i.model.num_classes, "class vocabulary size");
    ct2i->add_option("--schedule", t2i.schedule_kind, "linear|cosine");
    ct2i->add_option("--schedule-steps", t2i.schedule_steps, "diffusion steps");
    ct2i->add_option("--log", t2i.log, "per-step loss CSV");

    TrainVideoArgs vid;
    auto* cvid = app.add_subcommand("train-video", "inflate a t2i checkpoint and train temporal weights");
    cvid->add_option("--data", vid.data, "dataset directory")->required();
    cvid->add_option("--t2i", vid.t2i, "pretrained t2i checkpoint");
    cvid->add_option("--resume", vid.resume, "video checkpoint to resume from");
    cvid->add_option("--out", vid.out, "output checkpoint")->required();
    cvid->add_option("--task", vid.task, "none|image2video|inpaint|cinemagraph|ssr");
    cvid->add_option("--steps", vid.train.steps, "training steps");
    cvid->add_option("--batch", vid.train.batch, "batch size");
    cvid->add_option("--lr", vid.train.lr, "learning rate");
    cvid->add_option("--seed", vid.train.seed, "training seed")->required();
    cvid->add_option("--image-size", vid.train.image_size, "base-model resolution");
    cvid->add_option("--kt", vid.temporal_kernel, "temporal kernel size");
    cvid->add_option("--attn-blocks", vid.attn_blocks, "temporal attention blocks at the coarsest level");
    cvid->add_option("--temporal-levels", vid.temporal_levels, "transitions with temporal resampling");
    cvid->add_option("--segment-frames", vid.segment_frames, "SSR training segment length");
    cvid->add_option("--schedule", vid.schedule_kind, "linear|cosine");
    cvid->add_option("--schedule-steps", vid.schedule_steps, "diffusion steps");
    cvid->add_option("--log", vid.log, "per-step loss CSV");

    SampleArgs smp;
    auto* csmp = app.add_subcommand("sample", "sample videos from a trained checkpoint");
    csmp->add_option("--ckpt", smp.ckpt, "video-model checkpoint")->required();
    csmp->add_option("--out", smp.out, "output .stvf")->required();
    csmp->add_option("--frames-dir", smp.frames_dir, "also write PPM frames here");
    csmp->add_option("--seed", smp.seed, "sampling seed")->required();
    csmp->add_option("--mode", smp.mode, "ddim|ddpm");
    csmp->add_option("--steps", smp.steps, "sampler steps");
    csmp->add_option("--class-id", smp.label, "class label");
    csmp->add_option("--frames", smp.frames, "frames to generate");
    csmp->add_option("--ssr", smp.ssr_ckpt, "SSR checkpoint for the MultiDiffusion stage");
    csmp->add_option("--ssr-tprime", smp.ssr_tprime, "SSR segment length T'");
    csmp->add_option("--ssr-stride", smp.ssr_stride, "SSR window stride");
    csmp->add_option("--style", smp.style_ckpt, "style-finetuned t2i checkpoint");
    csmp->add_option("--alpha", smp.alphas, "style interpolation coefficient(s); several run a sweep");
    csmp->add_option("--log-activations", smp.act_log, "CSV of temporal-block input statistics");
    csmp->add_option("--sdedit", smp.sdedit_in, "input .stvf for video-to-video editing");
    csmp->add_option("--strength", smp.strength, "SDEdit noising strength");
    csmp->add_option("--task", smp.task, "conditioning task; needs a matching checkpoint");
    csmp->add_option("--cond-image", smp.cond_image, "conditioning frame (PPM)");
    csmp->add_option("--cond-video", smp.cond_video, "conditioning video (.stvf)");
    csmp->add_option("--region", smp.region, "region mask (PGM, 0/255)");
    csmp->add_option("--region-start", smp.region_start, "first frame the region applies to");
    csmp->add_option("--region-end", smp.region_end, "last frame the region applies to");

    AliasLabArgs lab;
    auto* clab = app.add_subcommand("alias-lab", "temporal-aliasing cascade simulation sweep");
    clab->add_option("--out", lab.out, "output directory")->required();
    clab->add_option("--freqs", lab.freqs, "sinusoid frequencies, cycles/frame");
    clab->add_option("--strides", lab.strides, "keyframe strides");
    clab->add_option("--window", lab.window, "TSR window (keyframes per call)");
    clab->add_option("--frames", lab.frames, "video length");
    clab->add_option("--size", lab.size, "frame size");
    clab->add_option("--amplitude", lab.amplitude, "motion amplitude, px");
    clab->add_option("--phase", lab.phase, "motion phase, radians");
    clab->add_option("--seed", lab.seed, "lab seed")->required();
    clab->add_option("--flip-seeds", lab.flip_seeds, "window seeds to scan for direction flips");

    try {
        app.parse(argc, argv);
        if (cgen->parsed()) return cmd_gen_data(gen);
        if (ct2i->parsed()) return cmd_train_t2i(t2i);
        if (cvid->parsed()) return cmd_train_video(vid);
        if (csmp->parsed()) return cmd_sample(smp);
        if (clab->parsed()) return cmd_alias_lab(lab);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
