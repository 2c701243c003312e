#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evhar/common.hpp"

namespace evhar {

// One brightness-change event. Timestamps are microseconds.
struct Event {
    int64_t t = 0;
    uint16_t x = 0;
    uint16_t y = 0;
    int8_t polarity = 1;  // +1 brighter, -1 darker
};

struct EventStream {
    int width = 0;
    int height = 0;
    std::vector<Event> events;  // sorted non-decreasing by t

    // Throws FormatError on ordering/range/polarity violations.
    void validate() const;
};

// Accumulated 2D event frame, values normalized to [0, 1].
struct EventFrame {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    EventFrame() = default;
    EventFrame(int h, int w) : width(w), height(h), values(static_cast<size_t>(h) * w, 0.f) {}

    float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// Fixed-shape clip (channels, frames, height, width), row-major.
struct ClipTensor {
    int channels = 1;
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;

    ClipTensor() = default;
    ClipTensor(int t, int h, int w)
        : frames(t), height(h), width(w), values(static_cast<size_t>(t) * h * w, 0.f) {}

    float& at(int t, int y, int x) {
        return values[(static_cast<size_t>(t) * height + y) * width + x];
    }
    float at(int t, int y, int x) const {
        return values[(static_cast<size_t>(t) * height + y) * width + x];
    }
};

enum class AccumulationMode { count, polarity_sum };

struct EncoderConfig {
    double accumulation_rate = 30.0;  // event frames per second
    int clip_length = 10;             // frames per clip after downsampling
    int target_height = 128;
    int target_width = 128;
    double dvs_threshold = 0.2;  // log-intensity contrast threshold
    AccumulationMode mode = AccumulationMode::polarity_sum;

    void validate() const;
};

// Grayscale intensity frame with a capture timestamp, for DVS emulation.
struct TimedFrame {
    int64_t t_us = 0;
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // row-major, [0, 255]
};

// Per-pixel log-intensity threshold crossing with reference update.
// One event per crossed threshold, all stamped at the new frame's time,
// emitted in row-major pixel order within a frame.
EventStream video_to_events(const std::vector<TimedFrame>& frames, const EncoderConfig& config);

// Splits the stream into 1/rate windows from the first event's timestamp
// and max-normalizes each frame. Empty stream yields one all-zero frame.
std::vector<EventFrame> accumulate_events(const EventStream& stream, const EncoderConfig& config);

// Selects indices floor(k*N/T); duplicates frames when N < T.
std::vector<EventFrame> uniform_downsample(const std::vector<EventFrame>& frames, int clip_length);

// Aspect-preserving bilinear resize, then symmetric zero padding.
EventFrame resize_pad(const EventFrame& frame, int target_height, int target_width);

// accumulate -> downsample -> resize_pad, stacked as (1, T, H, W).
ClipTensor encode_clip(const EventStream& stream, const EncoderConfig& config);

// --- EVS1 binary event format (little-endian) ---
// magic "EVS1\0\0\0\0", {width u16, height u16, count u64},
// then count x {t u64, x u16, y u16, polarity i8, pad i8}.
void write_evs1(const std::string& path, const EventStream& stream);
EventStream read_evs1(const std::string& path);

// --- 8-bit binary PGM, values quantized as round(v * 255) ---
void write_pgm(const std::string& path, const EventFrame& frame);
EventFrame read_pgm(const std::string& path);

// --- clip directory: frame_0000.pgm ... plus meta.txt (fps=, frames=) ---
void write_clip_dir(const std::string& dir, const std::vector<EventFrame>& frames, double fps);

struct ClipDirInfo {
    double fps = 0;
    int frames = 0;
    std::vector<std::string> frame_paths;
};
ClipDirInfo read_clip_dir_info(const std::string& dir);
std::vector<EventFrame> read_clip_frames(const ClipDirInfo& info);
// Clip directory interpreted as an intensity video (frames timed by fps).
std::vector<TimedFrame> read_clip_dir_video(const std::string& dir);

// Sequence directory -> clip: floor-rule downsample to `frames` stored
// event frames, then resize/pad each to (height, width).
ClipTensor load_sequence_clip(const std::string& dir, int frames, int height, int width);

// --- dataset layout: root/<class_name>/<sequence_id>/ ---
// Class names sorted lexicographically define label indices.
struct DatasetIndex {
    std::string root;
    std::vector<std::string> class_names;
    std::vector<std::string> sequence_dirs;
    std::vector<int> labels;  // parallel to sequence_dirs

    static DatasetIndex scan(const std::string& root);
    std::vector<int64_t> class_counts() const;
};

}  // namespace evhar
