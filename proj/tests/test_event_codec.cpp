#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evhar/event_codec.hpp"
#include "oracles.hpp"

using namespace evhar;
namespace fs = std::filesystem;

namespace {

TimedFrame make_frame(int64_t t_us, int h, int w, uint8_t fill) {
    TimedFrame f;
    f.t_us = t_us;
    f.width = w;
    f.height = h;
    f.pixels.assign(static_cast<size_t>(w) * h, fill);
    return f;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("evhar_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("video_to_events: identical frames produce no events") {
    std::vector<TimedFrame> video{make_frame(0, 4, 4, 100), make_frame(33333, 4, 4, 100)};
    EncoderConfig cfg;
    const EventStream s = video_to_events(video, cfg);
    CHECK(s.events.empty());
    CHECK(s.width == 4);
    CHECK(s.height == 4);
}

TEST_CASE("video_to_events: threshold crossing count matches the log-ratio oracle") {
    // single pixel stepping 50 -> 150: floor(log(151/51)/0.2) crossings
    std::vector<TimedFrame> video{make_frame(0, 1, 1, 50), make_frame(1000, 1, 1, 150)};
    EncoderConfig cfg;
    const int expected = static_cast<int>(std::floor(std::log(151.0 / 51.0) / cfg.dvs_threshold));
    CHECK(expected == 5);

    const EventStream up = video_to_events(video, cfg);
    REQUIRE(up.events.size() == 5);
    for (const Event& e : up.events) {
        CHECK(e.polarity == 1);
        CHECK(e.x == 0);
        CHECK(e.y == 0);
        CHECK(e.t == 1000);
    }

    std::vector<TimedFrame> down{make_frame(0, 1, 1, 150), make_frame(1000, 1, 1, 50)};
    const EventStream dn = video_to_events(down, cfg);
    REQUIRE(dn.events.size() == 5);
    for (const Event& e : dn.events) CHECK(e.polarity == -1);
}

TEST_CASE("video_to_events: reference level update splits a big jump across frames") {
    // 50 -> 150 -> 150: second transition adds only the residual crossings (none)
    std::vector<TimedFrame> video{make_frame(0, 1, 1, 50), make_frame(1000, 1, 1, 150),
                                  make_frame(2000, 1, 1, 150)};
    const EventStream s = video_to_events(video, EncoderConfig{});
    CHECK(s.events.size() == 5);
}

TEST_CASE("video_to_events: input validation") {
    EncoderConfig cfg;
    std::vector<TimedFrame> one{make_frame(0, 2, 2, 0)};
    CHECK_THROWS_AS(video_to_events(one, cfg), FormatError);

    std::vector<TimedFrame> mismatched{make_frame(0, 2, 2, 0), make_frame(1000, 2, 3, 0)};
    CHECK_THROWS_AS(video_to_events(mismatched, cfg), FormatError);

    std::vector<TimedFrame> bad_time{make_frame(1000, 2, 2, 0), make_frame(1000, 2, 2, 10)};
    CHECK_THROWS_AS(video_to_events(bad_time, cfg), FormatError);
}

TEST_CASE("accumulate_events: empty stream yields one all-zero frame") {
    EventStream s;
    s.width = 8;
    s.height = 6;
    const auto frames = accumulate_events(s, EncoderConfig{});
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].width == 8);
    CHECK(frames[0].height == 6);
    for (float v : frames[0].values) CHECK(v == 0.f);
}

TEST_CASE("accumulate_events: count mode normalizes by the frame maximum") {
    EventStream s;
    s.width = 8;
    s.height = 8;
    s.events = {{10, 2, 3, 1}, {20, 2, 3, -1}, {30, 2, 3, 1}, {40, 5, 5, 1}};
    EncoderConfig cfg;
    cfg.mode = AccumulationMode::count;
    const auto frames = accumulate_events(s, cfg);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].at(3, 2) == 1.f);                  // 3 events, frame max
    CHECK(frames[0].at(5, 5) == doctest::Approx(1.f / 3.f));
}

TEST_CASE("accumulate_events: opposite polarities cancel in polarity_sum mode") {
    EventStream s;
    s.width = 4;
    s.height = 4;
    s.events = {{10, 1, 1, 1}, {20, 1, 1, -1}, {30, 2, 2, 1}};
    EncoderConfig cfg;
    cfg.mode = AccumulationMode::polarity_sum;
    const auto frames = accumulate_events(s, cfg);
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].at(1, 1) == 0.f);
    CHECK(frames[0].at(2, 2) == 1.f);
}

TEST_CASE("accumulate_events: matches the naive oracle on randomized streams") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        EventStream s;
        s.width = 3 + static_cast<int>(rng.uniform_int(6));
        s.height = 3 + static_cast<int>(rng.uniform_int(6));
        const int n = static_cast<int>(rng.uniform_int(40));
        int64_t t = 0;
        for (int i = 0; i < n; ++i) {
            t += static_cast<int64_t>(rng.uniform_int(30000));
            s.events.push_back({t, static_cast<uint16_t>(rng.uniform_int(s.width)),
                                static_cast<uint16_t>(rng.uniform_int(s.height)),
                                rng.bernoulli(0.5) ? int8_t(1) : int8_t(-1)});
        }
        EncoderConfig cfg;
        cfg.mode = rng.bernoulli(0.5) ? AccumulationMode::count : AccumulationMode::polarity_sum;
        cfg.accumulation_rate = rng.uniform(10.0, 120.0);
        const auto got = accumulate_events(s, cfg);
        const auto want = oracle::accumulate_naive(s, cfg);
        REQUIRE(got.size() == want.size());
        for (size_t k = 0; k < got.size(); ++k)
            for (size_t i = 0; i < got[k].values.size(); ++i)
                REQUIRE(got[k].values[i] == want[k].values[i]);
    }
}

TEST_CASE("accumulate_events: invariant under permutation of equal-timestamp events") {
    EventStream a;
    a.width = 4;
    a.height = 4;
    a.events = {{100, 0, 0, 1}, {100, 1, 1, -1}, {100, 2, 2, 1}, {200, 3, 3, 1}};
    EventStream b = a;
    std::swap(b.events[0], b.events[2]);
    const auto fa = accumulate_events(a, EncoderConfig{});
    const auto fb = accumulate_events(b, EncoderConfig{});
    REQUIRE(fa.size() == fb.size());
    for (size_t k = 0; k < fa.size(); ++k)
        CHECK(fa[k].values == fb[k].values);
}

TEST_CASE("uniform_downsample: floor-index selection") {
    std::vector<EventFrame> frames;
    for (int i = 0; i < 30; ++i) {
        EventFrame f(1, 1);
        f.values[0] = static_cast<float>(i);
        frames.push_back(f);
    }
    const auto picked = uniform_downsample(frames, 10);
    const std::vector<float> want{0, 3, 6, 9, 12, 15, 18, 21, 24, 27};
    REQUIRE(picked.size() == 10);
    for (size_t i = 0; i < 10; ++i) CHECK(picked[i].values[0] == want[i]);

    const auto identity = uniform_downsample(std::vector<EventFrame>(frames.begin(), frames.begin() + 10), 10);
    for (size_t i = 0; i < 10; ++i) CHECK(identity[i].values[0] == static_cast<float>(i));

    const auto dup = uniform_downsample(std::vector<EventFrame>(frames.begin(), frames.begin() + 5), 10);
    const std::vector<float> want_dup{0, 0, 1, 1, 2, 2, 3, 3, 4, 4};
    for (size_t i = 0; i < 10; ++i) CHECK(dup[i].values[0] == want_dup[i]);

    CHECK_THROWS_AS(uniform_downsample({}, 10), FormatError);
}

TEST_CASE("uniform_downsample: matches the naive index oracle and always returns T frames") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t n = 1 + rng.uniform_int(40);
        const size_t t = 1 + rng.uniform_int(25);
        std::vector<EventFrame> frames;
        for (size_t i = 0; i < n; ++i) {
            EventFrame f(1, 1);
            f.values[0] = static_cast<float>(i);
            frames.push_back(f);
        }
        const auto got = uniform_downsample(frames, static_cast<int>(t));
        const auto idx = oracle::downsample_indices_naive(n, t);
        REQUIRE(got.size() == t);
        for (size_t k = 0; k < t; ++k)
            REQUIRE(got[k].values[0] == static_cast<float>(idx[k]));
    }
}

TEST_CASE("resize_pad: identity, aspect padding arithmetic, zero preservation") {
    EventFrame same(128, 128);
    same.at(10, 20) = 0.5f;
    const EventFrame out = resize_pad(same, 128, 128);
    CHECK(out.values == same.values);

    EventFrame wide(480, 640);  // H=480, W=640
    for (auto& v : wide.values) v = 1.f;
    const EventFrame padded = resize_pad(wide, 128, 128);
    CHECK(padded.width == 128);
    CHECK(padded.height == 128);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 128; ++x) {
            CHECK(padded.at(y, x) == 0.f);
            CHECK(padded.at(127 - y, x) == 0.f);
        }
    for (int y = 16; y < 112; ++y)
        for (int x = 0; x < 128; ++x) CHECK(padded.at(y, x) == doctest::Approx(1.f));

    EventFrame zeros(33, 77);
    const EventFrame zout = resize_pad(zeros, 128, 128);
    for (float v : zout.values) CHECK(v == 0.f);

    CHECK_THROWS_AS(resize_pad(zeros, 0, 128), ConfigError);
}

TEST_CASE("resize_pad: output stays within [0, 1]") {
    Rng rng(3);
    EventFrame f(37, 53);
    for (auto& v : f.values) v = static_cast<float>(rng.uniform());
    const EventFrame out = resize_pad(f, 128, 128);
    for (float v : out.values) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("encode_clip: zero propagation, shape contract, composition") {
    EncoderConfig cfg;
    EventStream empty;
    empty.width = 64;
    empty.height = 48;
    const ClipTensor zero_clip = encode_clip(empty, cfg);
    CHECK(zero_clip.channels == 1);
    CHECK(zero_clip.frames == 10);
    CHECK(zero_clip.height == 128);
    CHECK(zero_clip.width == 128);
    for (float v : zero_clip.values) CHECK(v == 0.f);

    EventStream s;
    s.width = 64;
    s.height = 48;
    s.events = {{0, 10, 10, 1}, {50000, 20, 20, 1}, {90000, 30, 30, -1}};
    const ClipTensor clip = encode_clip(s, cfg);
    CHECK(clip.frames == cfg.clip_length);
    CHECK(clip.height == cfg.target_height);
    CHECK(clip.width == cfg.target_width);

    // equals manual composition of the three stages
    const auto acc = accumulate_events(s, cfg);
    const auto ds = uniform_downsample(acc, cfg.clip_length);
    for (int t = 0; t < cfg.clip_length; ++t) {
        const EventFrame f = resize_pad(ds[static_cast<size_t>(t)], cfg.target_height, cfg.target_width);
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x)
                REQUIRE(clip.at(t, y, x) == f.at(y, x));
    }

    for (float v : clip.values) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("encode_clip: static video yields a zero clip and encoding is deterministic") {
    std::vector<TimedFrame> video;
    for (int k = 0; k < 5; ++k) video.push_back(make_frame(k * 33333, 16, 16, 77));
    EncoderConfig cfg;
    const EventStream s = video_to_events(video, cfg);
    const ClipTensor clip = encode_clip(s, cfg);
    for (float v : clip.values) CHECK(v == 0.f);

    EventStream s2;
    s2.width = 32;
    s2.height = 32;
    Rng rng(5);
    int64_t t = 0;
    for (int i = 0; i < 200; ++i) {
        t += rng.uniform_int(5000);
        s2.events.push_back({t, static_cast<uint16_t>(rng.uniform_int(32)),
                             static_cast<uint16_t>(rng.uniform_int(32)),
                             rng.bernoulli(0.5) ? int8_t(1) : int8_t(-1)});
    }
    const ClipTensor a = encode_clip(s2, cfg);
    const ClipTensor b = encode_clip(s2, cfg);
    CHECK(a.values == b.values);
}

TEST_CASE("EVS1 round-trip is lossless and detects corruption") {
    const fs::path dir = temp_dir("evs1");
    EventStream s;
    s.width = 320;
    s.height = 240;
    Rng rng(13);
    int64_t t = 0;
    for (int i = 0; i < 500; ++i) {
        t += rng.uniform_int(10000);
        s.events.push_back({t, static_cast<uint16_t>(rng.uniform_int(320)),
                            static_cast<uint16_t>(rng.uniform_int(240)),
                            rng.bernoulli(0.5) ? int8_t(1) : int8_t(-1)});
    }
    const std::string path = (dir / "s.evs1").string();
    write_evs1(path, s);
    const EventStream r = read_evs1(path);
    CHECK(r.width == s.width);
    CHECK(r.height == s.height);
    REQUIRE(r.events.size() == s.events.size());
    for (size_t i = 0; i < s.events.size(); ++i) {
        CHECK(r.events[i].t == s.events[i].t);
        CHECK(r.events[i].x == s.events[i].x);
        CHECK(r.events[i].y == s.events[i].y);
        CHECK(r.events[i].polarity == s.events[i].polarity);
    }

    // encode -> decode -> encode is byte-identical
    const std::string path2 = (dir / "s2.evs1").string();
    write_evs1(path2, r);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    std::string truncated = b1.substr(0, b1.size() - 7);
    std::ofstream bad(dir / "bad.evs1", std::ios::binary);
    bad.write(truncated.data(), static_cast<std::streamsize>(truncated.size()));
    bad.close();
    CHECK_THROWS_AS(read_evs1((dir / "bad.evs1").string()), FormatError);
}

TEST_CASE("PGM round-trip and clip directory format") {
    const fs::path dir = temp_dir("clipdir");
    std::vector<EventFrame> frames;
    Rng rng(17);
    for (int k = 0; k < 7; ++k) {
        EventFrame f(24, 32);
        for (auto& v : f.values) v = static_cast<float>(rng.uniform_int(256)) / 255.f;
        frames.push_back(f);
    }
    write_clip_dir(dir.string(), frames, 30.0);

    const ClipDirInfo info = read_clip_dir_info(dir.string());
    CHECK(info.fps == 30.0);
    CHECK(info.frames == 7);
    REQUIRE(info.frame_paths.size() == 7);
    const auto loaded = read_clip_frames(info);
    for (size_t k = 0; k < 7; ++k) CHECK(loaded[k].values == frames[k].values);  // 8-bit grid round-trips

    CHECK_THROWS_AS(read_clip_dir_info((dir / "missing").string()), FormatError);
}

TEST_CASE("dataset scan: lexicographic label order and counting") {
    const fs::path root = temp_dir("scan");
    for (const std::string cls : {"walk", "run", "sit"})
        for (int i = 0; i < 3; ++i) {
            EventFrame f(8, 8);
            write_clip_dir((root / cls / ("seq_" + std::to_string(i))).string(), {f}, 30.0);
        }
    const DatasetIndex idx = DatasetIndex::scan(root.string());
    REQUIRE(idx.class_names == std::vector<std::string>{"run", "sit", "walk"});
    CHECK(idx.sequence_dirs.size() == 9);
    CHECK(idx.class_counts() == std::vector<int64_t>{3, 3, 3});

    const fs::path empty_root = temp_dir("scan_empty");
    CHECK_THROWS_AS(DatasetIndex::scan(empty_root.string()), FormatError);
}
