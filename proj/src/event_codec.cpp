#include "evhar/event_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace evhar {

void EventStream::validate() const {
    int64_t prev_t = INT64_MIN;
    for (const Event& e : events) {
        if (e.t < 0 || e.t < prev_t) throw FormatError("event stream not sorted by timestamp");
        if (e.x >= width || e.y >= height) throw FormatError("event coordinates outside sensor resolution");
        if (e.polarity != 1 && e.polarity != -1) throw FormatError("event polarity must be +1 or -1");
        prev_t = e.t;
    }
}

void EncoderConfig::validate() const {
    if (accumulation_rate <= 0) throw ConfigError("accumulation_rate must be > 0");
    if (clip_length < 1) throw ConfigError("clip_length must be >= 1");
    if (target_height < 1 || target_width < 1) throw ConfigError("target resolution must be positive");
    if (dvs_threshold <= 0) throw ConfigError("dvs_threshold must be > 0");
}

EventStream video_to_events(const std::vector<TimedFrame>& frames, const EncoderConfig& config) {
    config.validate();
    if (frames.size() < 2) throw FormatError("need at least 2 frames to emit events");
    const int w = frames[0].width, h = frames[0].height;
    for (const TimedFrame& f : frames) {
        if (f.width != w || f.height != h) throw FormatError("frame resolutions differ");
        if (f.pixels.size() != static_cast<size_t>(w) * h) throw FormatError("frame pixel count mismatch");
    }
    for (size_t i = 1; i < frames.size(); ++i)
        if (frames[i].t_us <= frames[i - 1].t_us) throw FormatError("frame timestamps must be strictly increasing");

    const double c = config.dvs_threshold;
    const size_t n_px = static_cast<size_t>(w) * h;

    // reference log level per pixel; log(I + 1) with epsilon of one gray level
    std::vector<double> ref_log(n_px);
    std::vector<uint8_t> last_raw(frames[0].pixels);
    for (size_t i = 0; i < n_px; ++i) ref_log[i] = std::log(static_cast<double>(frames[0].pixels[i]) + 1.0);

    EventStream out;
    out.width = w;
    out.height = h;
    for (size_t k = 1; k < frames.size(); ++k) {
        const TimedFrame& f = frames[k];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                const uint8_t raw = f.pixels[i];
                if (raw == last_raw[i]) continue;  // unchanged intensity can't cross
                last_raw[i] = raw;
                const double lv = std::log(static_cast<double>(raw) + 1.0);
                const double d = lv - ref_log[i];
                const int n = static_cast<int>(std::floor(std::abs(d) / c));
                if (n == 0) continue;
                const int8_t pol = d > 0 ? int8_t(1) : int8_t(-1);
                for (int j = 0; j < n; ++j)
                    out.events.push_back(Event{f.t_us, static_cast<uint16_t>(x), static_cast<uint16_t>(y), pol});
                ref_log[i] += pol * n * c;
            }
        }
    }
    return out;
}

std::vector<EventFrame> accumulate_events(const EventStream& stream, const EncoderConfig& config) {
    config.validate();
    if (stream.width < 1 || stream.height < 1) throw FormatError("stream resolution must be positive");

    if (stream.events.empty()) return {EventFrame(stream.height, stream.width)};

    const double window_us = 1e6 / config.accumulation_rate;
    const int64_t t0 = stream.events.front().t;
    const double span = static_cast<double>(stream.events.back().t - t0);
    const size_t n_frames = std::max<size_t>(1, static_cast<size_t>(std::ceil(span / window_us)));

    std::vector<std::vector<int32_t>> acc(n_frames, std::vector<int32_t>(static_cast<size_t>(stream.width) * stream.height, 0));
    for (const Event& e : stream.events) {
        size_t k = static_cast<size_t>(static_cast<double>(e.t - t0) / window_us);
        if (k >= n_frames) k = n_frames - 1;  // span an exact multiple of the window
        const size_t i = static_cast<size_t>(e.y) * stream.width + e.x;
        acc[k][i] += config.mode == AccumulationMode::count ? 1 : e.polarity;
    }

    std::vector<EventFrame> frames;
    frames.reserve(n_frames);
    for (const auto& grid : acc) {
        EventFrame f(stream.height, stream.width);
        int32_t max_v = 0;
        for (int32_t v : grid) max_v = std::max(max_v, std::abs(v));
        if (max_v > 0)
            for (size_t i = 0; i < grid.size(); ++i)
                f.values[i] = static_cast<float>(std::abs(grid[i])) / static_cast<float>(max_v);
        frames.push_back(std::move(f));
    }
    return frames;
}

std::vector<EventFrame> uniform_downsample(const std::vector<EventFrame>& frames, int clip_length) {
    if (frames.empty()) throw FormatError("cannot downsample zero frames");
    if (clip_length < 1) throw ConfigError("clip_length must be >= 1");
    const int64_t n = static_cast<int64_t>(frames.size());
    std::vector<EventFrame> out;
    out.reserve(static_cast<size_t>(clip_length));
    for (int64_t k = 0; k < clip_length; ++k)
        out.push_back(frames[static_cast<size_t>(k * n / clip_length)]);
    return out;
}

EventFrame resize_pad(const EventFrame& frame, int target_height, int target_width) {
    if (target_height < 1 || target_width < 1) throw ConfigError("target resolution must be positive");
    if (frame.height < 1 || frame.width < 1) throw FormatError("source frame must be non-empty");

    const double scale = std::min(static_cast<double>(target_height) / frame.height,
                                  static_cast<double>(target_width) / frame.width);
    int new_h = std::min<int>(target_height, std::max<int>(1, static_cast<int>(std::lround(frame.height * scale))));
    int new_w = std::min<int>(target_width, std::max<int>(1, static_cast<int>(std::lround(frame.width * scale))));

    // bilinear with half-pixel centers; exact identity when sizes match
    EventFrame resized(new_h, new_w);
    const double ry = static_cast<double>(frame.height) / new_h;
    const double rx = static_cast<double>(frame.width) / new_w;
    for (int y = 0; y < new_h; ++y) {
        double sy = (y + 0.5) * ry - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(frame.height - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, frame.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < new_w; ++x) {
            double sx = (x + 0.5) * rx - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(frame.width - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, frame.width - 1);
            const double fx = sx - x0;
            const double v = (1 - fy) * ((1 - fx) * frame.at(y0, x0) + fx * frame.at(y0, x1)) +
                             fy * ((1 - fx) * frame.at(y1, x0) + fx * frame.at(y1, x1));
            resized.at(y, x) = static_cast<float>(v);
        }
    }

    EventFrame out(target_height, target_width);
    const int pad_top = (target_height - new_h) / 2;
    const int pad_left = (target_width - new_w) / 2;
    for (int y = 0; y < new_h; ++y)
        std::memcpy(&out.at(y + pad_top, pad_left), &resized.at(y, 0), sizeof(float) * new_w);
    return out;
}

ClipTensor encode_clip(const EventStream& stream, const EncoderConfig& config) {
    config.validate();
    const std::vector<EventFrame> accumulated = accumulate_events(stream, config);
    const std::vector<EventFrame> sampled = uniform_downsample(accumulated, config.clip_length);
    ClipTensor clip(config.clip_length, config.target_height, config.target_width);
    for (int t = 0; t < config.clip_length; ++t) {
        const EventFrame f = resize_pad(sampled[static_cast<size_t>(t)], config.target_height, config.target_width);
        std::memcpy(&clip.at(t, 0, 0), f.values.data(), sizeof(float) * f.values.size());
    }
    return clip;
}

// --- little-endian helpers ---

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
    for (size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const char* p) {
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return static_cast<T>(v);
}

constexpr char kEvs1Magic[8] = {'E', 'V', 'S', '1', 0, 0, 0, 0};

}  // namespace

void write_evs1(const std::string& path, const EventStream& stream) {
    stream.validate();
    std::string buf;
    buf.reserve(20 + stream.events.size() * 14);
    buf.append(kEvs1Magic, 8);
    put_le<uint16_t>(buf, static_cast<uint16_t>(stream.width));
    put_le<uint16_t>(buf, static_cast<uint16_t>(stream.height));
    put_le<uint64_t>(buf, stream.events.size());
    for (const Event& e : stream.events) {
        put_le<uint64_t>(buf, static_cast<uint64_t>(e.t));
        put_le<uint16_t>(buf, e.x);
        put_le<uint16_t>(buf, e.y);
        buf.push_back(static_cast<char>(e.polarity));
        buf.push_back(0);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

EventStream read_evs1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 20 || std::memcmp(buf.data(), kEvs1Magic, 8) != 0)
        throw FormatError("not an EVS1 file: " + path);
    EventStream s;
    s.width = get_le<uint16_t>(buf.data() + 8);
    s.height = get_le<uint16_t>(buf.data() + 10);
    const uint64_t count = get_le<uint64_t>(buf.data() + 12);
    if (buf.size() != 20 + count * 14) throw FormatError("EVS1 size does not match event count: " + path);
    s.events.resize(count);
    const char* p = buf.data() + 20;
    for (uint64_t i = 0; i < count; ++i, p += 14) {
        Event& e = s.events[i];
        e.t = static_cast<int64_t>(get_le<uint64_t>(p));
        e.x = get_le<uint16_t>(p + 8);
        e.y = get_le<uint16_t>(p + 10);
        e.polarity = static_cast<int8_t>(p[12]);
    }
    s.validate();
    return s;
}

void write_pgm(const std::string& path, const EventFrame& frame) {
    std::string buf = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
    buf.reserve(buf.size() + frame.values.size());
    for (float v : frame.values) {
        const int q = static_cast<int>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
        buf.push_back(static_cast<char>(q));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

namespace {

int pgm_token(std::istream& in) {
    // skips whitespace and # comments
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF) throw FormatError("truncated PGM header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

}  // namespace

EventFrame read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '5') throw FormatError("not a binary PGM: " + path);
    const int w = pgm_token(f);
    const int h = pgm_token(f);
    const int maxval = pgm_token(f);
    if (w < 1 || h < 1 || maxval != 255) throw FormatError("unsupported PGM header: " + path);
    std::vector<char> raw(static_cast<size_t>(w) * h);
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated PGM data: " + path);
    EventFrame frame(h, w);
    for (size_t i = 0; i < raw.size(); ++i)
        frame.values[i] = static_cast<float>(static_cast<uint8_t>(raw[i])) / 255.f;
    return frame;
}

void write_clip_dir(const std::string& dir, const std::vector<EventFrame>& frames, double fps) {
    fs::create_directories(dir);
    char name[32];
    for (size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%04zu.pgm", i);
        write_pgm((fs::path(dir) / name).string(), frames[i]);
    }
    std::ofstream meta(fs::path(dir) / "meta.txt", std::ios::trunc);
    if (!meta) throw IoError("cannot write meta.txt in " + dir);
    char fps_s[32];
    std::snprintf(fps_s, sizeof(fps_s), "%.10g", fps);
    meta << "fps=" << fps_s << "\n" << "frames=" << frames.size() << "\n";
}

ClipDirInfo read_clip_dir_info(const std::string& dir) {
    if (!fs::is_directory(dir)) throw FormatError("not a clip directory: " + dir);
    ClipDirInfo info;
    std::ifstream meta(fs::path(dir) / "meta.txt");
    if (!meta) throw FormatError("missing meta.txt in " + dir);
    std::string line;
    while (std::getline(meta, line)) {
        if (line.rfind("fps=", 0) == 0) info.fps = std::stod(line.substr(4));
        else if (line.rfind("frames=", 0) == 0) info.frames = std::stoi(line.substr(7));
    }
    if (info.fps <= 0 || info.frames < 1) throw FormatError("invalid meta.txt in " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string n = entry.path().filename().string();
        if (n.rfind("frame_", 0) == 0 && n.size() > 4 && n.substr(n.size() - 4) == ".pgm")
            info.frame_paths.push_back(entry.path().string());
    }
    std::sort(info.frame_paths.begin(), info.frame_paths.end());
    if (static_cast<int>(info.frame_paths.size()) != info.frames)
        throw FormatError("meta.txt frame count does not match files in " + dir);
    return info;
}

std::vector<EventFrame> read_clip_frames(const ClipDirInfo& info) {
    std::vector<EventFrame> frames;
    frames.reserve(info.frame_paths.size());
    for (const std::string& p : info.frame_paths) frames.push_back(read_pgm(p));
    return frames;
}

std::vector<TimedFrame> read_clip_dir_video(const std::string& dir) {
    const ClipDirInfo info = read_clip_dir_info(dir);
    std::vector<TimedFrame> video;
    video.reserve(info.frame_paths.size());
    for (size_t k = 0; k < info.frame_paths.size(); ++k) {
        const EventFrame f = read_pgm(info.frame_paths[k]);
        TimedFrame tf;
        tf.t_us = static_cast<int64_t>(std::llround(static_cast<double>(k) * 1e6 / info.fps));
        tf.width = f.width;
        tf.height = f.height;
        tf.pixels.resize(f.values.size());
        for (size_t i = 0; i < f.values.size(); ++i)
            tf.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(f.values[i], 0.f, 1.f) * 255.f));
        video.push_back(std::move(tf));
    }
    return video;
}

ClipTensor load_sequence_clip(const std::string& dir, int frames, int height, int width) {
    if (frames < 1 || height < 1 || width < 1) throw ConfigError("clip dimensions must be positive");
    const ClipDirInfo info = read_clip_dir_info(dir);
    ClipTensor clip(frames, height, width);
    const int64_t n = static_cast<int64_t>(info.frame_paths.size());
    for (int t = 0; t < frames; ++t) {
        const size_t src = static_cast<size_t>(static_cast<int64_t>(t) * n / frames);
        const EventFrame f = resize_pad(read_pgm(info.frame_paths[src]), height, width);
        std::memcpy(&clip.at(t, 0, 0), f.values.data(), sizeof(float) * f.values.size());
    }
    return clip;
}

DatasetIndex DatasetIndex::scan(const std::string& root) {
    if (!fs::is_directory(root)) throw FormatError("dataset root is not a directory: " + root);
    DatasetIndex idx;
    idx.root = root;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) idx.class_names.push_back(entry.path().filename().string());
    std::sort(idx.class_names.begin(), idx.class_names.end());
    if (idx.class_names.empty()) throw FormatError("dataset has no class directories: " + root);
    for (size_t c = 0; c < idx.class_names.size(); ++c) {
        std::vector<std::string> seqs;
        for (const auto& entry : fs::directory_iterator(fs::path(root) / idx.class_names[c]))
            if (entry.is_directory()) seqs.push_back(entry.path().string());
        std::sort(seqs.begin(), seqs.end());
        for (std::string& s : seqs) {
            idx.sequence_dirs.push_back(std::move(s));
            idx.labels.push_back(static_cast<int>(c));
        }
    }
    if (idx.sequence_dirs.empty()) throw FormatError("dataset has no sequences: " + root);
    return idx;
}

std::vector<int64_t> DatasetIndex::class_counts() const {
    std::vector<int64_t> counts(class_names.size(), 0);
    for (int l : labels) counts[static_cast<size_t>(l)]++;
    return counts;
}

}  // namespace evhar
