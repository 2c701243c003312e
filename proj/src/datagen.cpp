#include "evhar/datagen.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace evhar {

void SynthConfig::validate() const {
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
    if (width < 32 || height < 32) throw ConfigError("synthetic resolution must be at least 32x32");
    if (clip_duration <= 0) throw ConfigError("clip_duration must be > 0");
    if (event_rate_scale <= 0) throw ConfigError("event_rate_scale must be > 0");
    if (noise_events_per_frame < 0) throw ConfigError("noise_events_per_frame must be >= 0");
}

std::vector<std::string> synth_class_names() {
    // already lexicographically sorted: label index == position
    return {"contract", "expand", "translate-down", "translate-left", "translate-right",
            "translate-up"};
}

namespace {

constexpr double kSimFps = 120.0;
constexpr double kAccumFps = 30.0;
constexpr uint8_t kBackgroundGray = 24;
constexpr uint8_t kBlobGray = 200;

enum ClassIdx { kContract = 0, kExpand, kDown, kLeft, kRight, kUp };

}  // namespace

BlobTrajectory sample_trajectory(int class_idx, const SynthConfig& config, Rng& rng) {
    const double s_min = std::min(config.width, config.height);
    const double speed = 0.47 * s_min * config.event_rate_scale * rng.uniform(0.7, 1.3);
    const double burst = config.clip_duration * rng.uniform(0.35, 0.55);

    BlobTrajectory tr;
    tr.t_start = rng.uniform(0.0, config.clip_duration - burst);
    tr.t_end = tr.t_start + burst;

    if (class_idx == kExpand || class_idx == kContract) {
        const double r_small = rng.uniform(0.06, 0.09) * s_min;
        const double r_cap = 0.42 * s_min;
        const double rate = std::min(speed, (r_cap - r_small) / burst);
        const double r_big = r_small + rate * burst;
        const double margin = r_big + 3;
        tr.cx0 = rng.uniform(std::min(margin, config.width - 1 - margin),
                             std::max(margin, config.width - 1 - margin));
        tr.cy0 = rng.uniform(std::min(margin, config.height - 1 - margin),
                             std::max(margin, config.height - 1 - margin));
        if (class_idx == kExpand) {
            tr.r0 = r_small;
            tr.vr = rate;
        } else {
            tr.r0 = r_big;
            tr.vr = -rate;
        }
        return tr;
    }

    tr.r0 = rng.uniform(0.08, 0.14) * s_min;
    const double margin = tr.r0 + 4;
    double disp = speed * burst;
    const double room_x = config.width - 1 - 2 * margin;
    const double room_y = config.height - 1 - 2 * margin;
    disp = std::min(disp, 0.9 * std::min(room_x, room_y));
    const double v = disp / burst;

    double lo_x = margin, hi_x = config.width - 1 - margin;
    double lo_y = margin, hi_y = config.height - 1 - margin;
    switch (class_idx) {
        case kLeft:
            tr.vx = -v;
            lo_x += disp;
            break;
        case kRight:
            tr.vx = v;
            hi_x -= disp;
            break;
        case kUp:
            tr.vy = -v;
            lo_y += disp;
            break;
        case kDown:
            tr.vy = v;
            hi_y -= disp;
            break;
        default:
            throw ConfigError("unknown synthetic class index");
    }
    tr.cx0 = rng.uniform(lo_x, hi_x);
    tr.cy0 = rng.uniform(lo_y, hi_y);
    return tr;
}

namespace {

void render_frame(const BlobTrajectory& tr, double t_s, int width, int height,
                  std::vector<uint8_t>& pixels) {
    const double dt = std::clamp(t_s, tr.t_start, tr.t_end) - tr.t_start;
    const double cx = tr.cx0 + tr.vx * dt;
    const double cy = tr.cy0 + tr.vy * dt;
    const double r = std::max(2.0, tr.r0 + tr.vr * dt);

    std::fill(pixels.begin(), pixels.end(), kBackgroundGray);
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
    const double r2 = r * r;
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2)
                pixels[static_cast<size_t>(y) * width + x] = kBlobGray;
}

}  // namespace

EventStream render_blob_events(const BlobTrajectory& trajectory, const SynthConfig& config) {
    const int n_frames = static_cast<int>(std::lround(config.clip_duration * kSimFps)) + 1;
    std::vector<TimedFrame> video(static_cast<size_t>(n_frames));
    for (int k = 0; k < n_frames; ++k) {
        TimedFrame& f = video[static_cast<size_t>(k)];
        f.t_us = static_cast<int64_t>(std::llround(k * 1e6 / kSimFps));
        f.width = config.width;
        f.height = config.height;
        f.pixels.resize(static_cast<size_t>(config.width) * config.height);
        render_frame(trajectory, k / kSimFps, config.width, config.height, f.pixels);
    }
    EncoderConfig enc;
    return video_to_events(video, enc);
}

void add_noise_events(EventStream& stream, double events_per_frame, double duration_s, double fps,
                      Rng& rng) {
    const int64_t n = static_cast<int64_t>(std::llround(events_per_frame * duration_s * fps));
    const int64_t duration_us = static_cast<int64_t>(std::llround(duration_s * 1e6));
    for (int64_t i = 0; i < n; ++i) {
        Event e;
        e.t = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(duration_us)));
        e.x = static_cast<uint16_t>(rng.uniform_int(static_cast<uint64_t>(stream.width)));
        e.y = static_cast<uint16_t>(rng.uniform_int(static_cast<uint64_t>(stream.height)));
        e.polarity = rng.bernoulli(0.5) ? int8_t(1) : int8_t(-1);
        stream.events.push_back(e);
    }
    std::stable_sort(stream.events.begin(), stream.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
}

void generate_dataset(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory: " + out_dir);

    const std::vector<std::string> classes = synth_class_names();
    const int total = static_cast<int>(classes.size()) * config.samples_per_class;

#pragma omp parallel for schedule(dynamic) num_threads(worker_threads())
    for (int job = 0; job < total; ++job) {
        const int class_idx = job / config.samples_per_class;
        const int sample_idx = job % config.samples_per_class;
        Rng rng(mix_seed(config.seed, static_cast<uint64_t>(class_idx),
                         static_cast<uint64_t>(sample_idx)));
        const BlobTrajectory tr = sample_trajectory(class_idx, config, rng);
        EventStream stream = render_blob_events(tr, config);
        add_noise_events(stream, config.noise_events_per_frame, config.clip_duration, kAccumFps, rng);

        EncoderConfig enc;
        const std::vector<EventFrame> frames = accumulate_events(stream, enc);
        char seq[32];
        std::snprintf(seq, sizeof(seq), "seq_%04d", sample_idx);
        const fs::path dir = fs::path(out_dir) / classes[static_cast<size_t>(class_idx)] / seq;
        write_clip_dir(dir.string(), frames, kAccumFps);
    }

    std::ofstream manifest(fs::path(out_dir) / "manifest.txt", std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest.txt in " + out_dir);
    manifest << "generator=evhar-datagen/" << version() << "\n";
    std::string cls;
    for (size_t i = 0; i < classes.size(); ++i) cls += (i ? "," : "") + classes[i];
    manifest << "classes=" << cls << "\n";
    manifest << "per_class=" << config.samples_per_class << "\n";
    manifest << "seed=" << config.seed << "\n";
    manifest << "noise_events_per_frame=" << config.noise_events_per_frame << "\n";
}

DatasetSummary describe_dataset(const std::string& root) {
    if (!fs::is_directory(root)) throw FormatError("dataset root is not a directory: " + root);
    DatasetSummary s;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) s.class_names.push_back(entry.path().filename().string());
    std::sort(s.class_names.begin(), s.class_names.end());
    if (s.class_names.empty()) {
        s.empty = true;
        return s;
    }

    s.min_frames = INT32_MAX;
    for (const std::string& cls : s.class_names) {
        std::vector<std::string> seqs;
        for (const auto& entry : fs::directory_iterator(fs::path(root) / cls))
            if (entry.is_directory()) seqs.push_back(entry.path().string());
        std::sort(seqs.begin(), seqs.end());
        int64_t count = 0;
        double density_sum = 0;
        int64_t frame_count = 0;
        for (const std::string& seq : seqs) {
            const ClipDirInfo info = read_clip_dir_info(seq);
            s.min_frames = std::min(s.min_frames, info.frames);
            s.max_frames = std::max(s.max_frames, info.frames);
            for (const std::string& fp : info.frame_paths) {
                const EventFrame f = read_pgm(fp);
                double sum = 0;
                for (float v : f.values) sum += v;
                density_sum += sum / static_cast<double>(f.values.size());
                frame_count++;
            }
            count++;
        }
        s.counts.push_back(count);
        s.mean_density.push_back(frame_count > 0 ? density_sum / static_cast<double>(frame_count) : 0.0);
    }
    if (s.min_frames == INT32_MAX) s.min_frames = 0;
    return s;
}

int classify_by_rule(const std::vector<EventFrame>& frames) {
    double max_mass = 0;
    std::vector<double> mass(frames.size(), 0);
    for (size_t i = 0; i < frames.size(); ++i) {
        for (float v : frames[i].values) mass[i] += v;
        max_mass = std::max(max_mass, mass[i]);
    }
    if (max_mass <= 0) return -1;

    std::vector<size_t> active;
    for (size_t i = 0; i < frames.size(); ++i)
        if (mass[i] > 0.05 * max_mass) active.push_back(i);
    if (active.size() < 2) return -1;

    auto centroid_area = [](const EventFrame& f, double m) {
        double cx = 0, cy = 0;
        int64_t area = 0;
        for (int y = 0; y < f.height; ++y)
            for (int x = 0; x < f.width; ++x) {
                const double v = f.at(y, x);
                cx += v * x;
                cy += v * y;
                if (v > 0.1) area++;
            }
        return std::tuple<double, double, int64_t>{cx / m, cy / m, area};
    };

    const auto [cx0, cy0, a0] = centroid_area(frames[active.front()], mass[active.front()]);
    const auto [cx1, cy1, a1] = centroid_area(frames[active.back()], mass[active.back()]);
    const double dx = cx1 - cx0, dy = cy1 - cy0;

    if (std::hypot(dx, dy) >= 4.0) {
        if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? kLeft : kRight;
        return dy < 0 ? kUp : kDown;
    }
    return a1 > a0 ? kExpand : kContract;
}

}  // namespace evhar
