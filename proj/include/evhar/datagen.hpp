#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evhar/event_codec.hpp"

// Synthetic six-class moving-blob event dataset. The classes come in
// confusable pairs (left/right, up/down, expand/contract) that can only be
// told apart from temporal order, and the motion happens inside a short
// random burst window so temporal sampling density matters.

namespace evhar {

struct SynthConfig {
    int samples_per_class = 10;
    int width = 128;
    int height = 128;
    double clip_duration = 1.0;        // seconds
    double event_rate_scale = 1.0;     // scales motion speed, hence event rate
    double noise_events_per_frame = 20.0;
    uint64_t seed = 0;

    void validate() const;
};

// Label order is the lexicographic order of these directory names.
std::vector<std::string> synth_class_names();

struct BlobTrajectory {
    double cx0 = 0, cy0 = 0;   // center at burst start
    double r0 = 0;             // radius at burst start
    double vx = 0, vy = 0;     // translation, px/s during the burst
    double vr = 0;             // radial rate, px/s during the burst
    double t_start = 0, t_end = 0;  // active burst window, seconds
};

BlobTrajectory sample_trajectory(int class_idx, const SynthConfig& config, Rng& rng);

// Renders the trajectory as an intensity video and converts it with the
// DVS emulation; no noise.
EventStream render_blob_events(const BlobTrajectory& trajectory, const SynthConfig& config);

void add_noise_events(EventStream& stream, double events_per_frame, double duration_s,
                      double fps, Rng& rng);

// Writes root/<class>/seq_%04d/ clip directories plus manifest.txt.
void generate_dataset(const SynthConfig& config, const std::string& out_dir);

struct DatasetSummary {
    std::vector<std::string> class_names;
    std::vector<int64_t> counts;
    std::vector<double> mean_density;  // mean pixel value over the class's frames
    int min_frames = 0;
    int max_frames = 0;
    bool empty = false;  // warning status, not an error
};

DatasetSummary describe_dataset(const std::string& root);

// Hand-written centroid-drift / area-trend rule; the dataset is learnable
// by construction, so a classifier failing on it is a model bug.
int classify_by_rule(const std::vector<EventFrame>& frames);

}  // namespace evhar
