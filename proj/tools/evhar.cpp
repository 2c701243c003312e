// evhar: event-based human action recognition toolkit.
// Subcommands: datagen, encode, train, eval, infer, ablate.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "evhar/datagen.hpp"
#include "evhar/event_codec.hpp"
#include "evhar/model.hpp"
#include "evhar/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// RunManifest: written before work starts, finalized on exit either way.
class ManifestGuard {
public:
    ManifestGuard(const std::string& out_dir, const std::string& subcommand, json config,
                  uint64_t seed)
        : path_(fs::path(out_dir) / "manifest.json") {
        fs::create_directories(out_dir);
        j_["subcommand"] = subcommand;
        j_["config"] = std::move(config);
        j_["seed"] = seed;
        j_["version"] = evhar::version();
        j_["start_time"] = iso_now();
        j_["success"] = nullptr;
        j_["outputs"] = json::array();
        write();
    }

    ~ManifestGuard() {
        if (!finalized_) finalize(false);
    }

    void add_output(const std::string& p) { j_["outputs"].push_back(p); }
    void set(const std::string& key, const json& v) { j_[key] = v; }

    void finalize(bool success) {
        j_["end_time"] = iso_now();
        j_["success"] = success;
        write();
        finalized_ = true;
    }

private:
    void write() const {
        std::ofstream f(path_, std::ios::trunc);
        f << j_.dump(2) << "\n";
    }
    fs::path path_;
    json j_;
    bool finalized_ = false;
};

evhar::AccumulationMode parse_mode(const std::string& s) {
    if (s == "count") return evhar::AccumulationMode::count;
    if (s == "polarity_sum") return evhar::AccumulationMode::polarity_sum;
    throw evhar::ConfigError("unknown accumulation mode: " + s);
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100);
    return buf;
}

// ------------------------------------------------------------------ encode

struct EncodeArgs {
    std::string input, output;
    double fps = 30.0;
    int frames = 10;
    int res = 128;
    std::string mode = "polarity_sum";
    double threshold = 0.2;
};

int cmd_encode(const EncodeArgs& a) {
    ManifestGuard manifest(a.output, "encode",
                           {{"input", a.input},
                            {"output", a.output},
                            {"fps", a.fps},
                            {"frames", a.frames},
                            {"res", a.res},
                            {"mode", a.mode},
                            {"threshold", a.threshold}},
                           0);

    evhar::EncoderConfig cfg;
    cfg.accumulation_rate = a.fps;
    cfg.clip_length = a.frames;
    cfg.target_height = cfg.target_width = a.res;
    cfg.dvs_threshold = a.threshold;
    cfg.mode = parse_mode(a.mode);
    cfg.validate();

    evhar::EventStream stream;
    if (fs::is_directory(a.input)) {
        stream = evhar::video_to_events(evhar::read_clip_dir_video(a.input), cfg);
    } else if (fs::is_regular_file(a.input)) {
        stream = evhar::read_evs1(a.input);
    } else {
        throw evhar::IoError("input not found: " + a.input);
    }
    if (stream.events.empty())
        std::cerr << "warning: no events in input; writing all-zero frames\n";

    const auto accumulated = evhar::accumulate_events(stream, cfg);
    const auto sampled = evhar::uniform_downsample(accumulated, cfg.clip_length);
    std::vector<evhar::EventFrame> frames;
    frames.reserve(sampled.size());
    for (const auto& f : sampled)
        frames.push_back(evhar::resize_pad(f, cfg.target_height, cfg.target_width));
    evhar::write_clip_dir(a.output, frames, a.fps);
    manifest.add_output(a.output);

    double density = 0;
    for (const auto& f : frames) {
        double s = 0;
        for (float v : f.values) s += v;
        density += s / static_cast<double>(f.values.size());
    }
    density /= static_cast<double>(frames.size());
    std::cout << "events: " << stream.events.size() << "\n"
              << "accumulated frames: " << accumulated.size() << "\n"
              << "clip frames: " << frames.size() << "\n"
              << "mean frame density: " << density << "\n";
    manifest.set("metrics", {{"events", stream.events.size()},
                             {"accumulated_frames", accumulated.size()},
                             {"mean_density", density}});
    manifest.finalize(true);
    return 0;
}

// ----------------------------------------------------------------- datagen

struct DatagenArgs {
    std::string out;
    int per_class = 10;
    uint64_t seed = 0;
    double noise = 20.0;
    int res = 128;
    double duration = 1.0;
    double rate_scale = 1.0;
};

int cmd_datagen(const DatagenArgs& a) {
    ManifestGuard manifest(a.out, "datagen",
                           {{"out", a.out},
                            {"per_class", a.per_class},
                            {"noise", a.noise},
                            {"res", a.res},
                            {"duration", a.duration},
                            {"rate_scale", a.rate_scale}},
                           a.seed);
    evhar::SynthConfig cfg;
    cfg.samples_per_class = a.per_class;
    cfg.width = cfg.height = a.res;
    cfg.clip_duration = a.duration;
    cfg.event_rate_scale = a.rate_scale;
    cfg.noise_events_per_frame = a.noise;
    cfg.seed = a.seed;
    evhar::generate_dataset(cfg, a.out);
    manifest.add_output(a.out);

    const evhar::DatasetSummary s = evhar::describe_dataset(a.out);
    for (size_t i = 0; i < s.class_names.size(); ++i)
        std::cout << s.class_names[i] << ": " << s.counts[i]
                  << " sequences, mean density " << s.mean_density[i] << "\n";
    std::cout << "frames per sequence: " << s.min_frames << ".." << s.max_frames << "\n";
    manifest.finalize(true);
    return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string data, out = "train_out";
    int epochs = 1000;
    int batch = 32;
    double lr = 0.0009;
    double wd = 1e-4;
    double gamma = 2.0;
    int patience = 100;
    double channel_mult = 1.0;
    int frames = 10;
    bool attention = false;
    double dropout = 0.5;
    uint64_t seed = 0;
    int res = 128;
    std::string augment_classes;  // csv of class names; empty selects the defaults
    double train_frac = 0.7, val_frac = 0.15;
};

struct TrainOutcome {
    evhar::TrainReport report;
    std::vector<std::string> class_names;
};

TrainOutcome run_training(const TrainArgs& a, const std::string& out_dir) {
    evhar::DatasetIndex index = evhar::DatasetIndex::scan(a.data);
    evhar::ClipStore store(index, a.frames, a.res, a.res);

    evhar::ModelConfig model_cfg;
    model_cfg.num_classes = static_cast<int>(index.class_names.size());
    model_cfg.clip_length = a.frames;
    model_cfg.input_height = model_cfg.input_width = a.res;
    model_cfg.dropout_rate = a.dropout;
    model_cfg.attention_enabled = a.attention;
    model_cfg.channel_multiplier = a.channel_mult;

    evhar::TrainConfig train_cfg;
    train_cfg.batch_size = a.batch;
    train_cfg.max_epochs = a.epochs;
    train_cfg.patience = a.patience;
    train_cfg.train_frac = a.train_frac;
    train_cfg.val_frac = a.val_frac;
    train_cfg.test_frac = 1.0 - a.train_frac - a.val_frac;
    train_cfg.seed = a.seed;
    if (a.augment_classes.empty()) {
        train_cfg.augmentation_classes = evhar::default_augment_classes(index.class_names);
    } else {
        std::stringstream ss(a.augment_classes);
        std::string name;
        while (std::getline(ss, name, ',')) {
            const auto it = std::find(index.class_names.begin(), index.class_names.end(), name);
            if (it == index.class_names.end())
                throw evhar::ConfigError("unknown augmentation class: " + name);
            train_cfg.augmentation_classes.insert(
                static_cast<int>(it - index.class_names.begin()));
        }
    }

    evhar::OptimizerConfig opt_cfg;
    opt_cfg.learning_rate = a.lr;
    opt_cfg.weight_decay = a.wd;

    TrainOutcome outcome;
    outcome.report = evhar::train_model(store, model_cfg, train_cfg, opt_cfg, a.gamma, out_dir,
                                        &std::cout);
    outcome.class_names = index.class_names;
    return outcome;
}

json train_config_json(const TrainArgs& a) {
    return {{"data", a.data},       {"out", a.out},
            {"epochs", a.epochs},   {"batch", a.batch},
            {"lr", a.lr},           {"wd", a.wd},
            {"gamma", a.gamma},     {"patience", a.patience},
            {"channel_mult", a.channel_mult},
            {"frames", a.frames},   {"attention", a.attention},
            {"dropout", a.dropout}, {"res", a.res},
            {"augment_classes", a.augment_classes},
            {"train_frac", a.train_frac},
            {"val_frac", a.val_frac}};
}

int cmd_train(const TrainArgs& a) {
    ManifestGuard manifest(a.out, "train", train_config_json(a), a.seed);
    const TrainOutcome outcome = run_training(a, a.out);
    const evhar::TrainReport& r = outcome.report;
    manifest.add_output(r.checkpoint_path);
    manifest.add_output((fs::path(a.out) / "training_log.csv").string());
    manifest.add_output((fs::path(a.out) / "confusion.csv").string());
    manifest.set("metrics", {{"test_accuracy", r.test_metrics.accuracy},
                             {"test_weighted_f1", r.test_metrics.weighted_f1},
                             {"best_epoch", r.best_epoch},
                             {"best_val_f1", r.best_val_f1},
                             {"epochs_run", r.epochs_run},
                             {"param_count", r.param_count},
                             {"wall_minutes", r.wall_minutes}});

    std::cout << "test accuracy: " << fmt_pct(r.test_metrics.accuracy) << "\n"
              << "test weighted F1: " << r.test_metrics.weighted_f1 << "\n"
              << "parameters: " << r.param_count << "\n"
              << "elapsed minutes: " << r.wall_minutes << "\n";
    manifest.finalize(true);
    return 0;
}

// -------------------------------------------------------------- eval/infer

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& out) {
    ManifestGuard manifest(out, "eval",
                           {{"checkpoint", checkpoint}, {"data", data}, {"split", split}}, 0);
    evhar::Checkpoint ckpt = evhar::load_checkpoint(checkpoint);
    const evhar::ModelConfig& cfg = ckpt.params.config;
    evhar::DatasetIndex index = evhar::DatasetIndex::scan(data);
    if (static_cast<int>(index.class_names.size()) != cfg.num_classes)
        throw evhar::ConfigError("dataset class count does not match checkpoint");
    evhar::ClipStore store(index, cfg.clip_length, cfg.input_height, cfg.input_width);

    std::vector<size_t> indices;
    if (split == "all") {
        for (size_t i = 0; i < store.size(); ++i) indices.push_back(i);
    } else {
        if (!ckpt.meta.count("split_seed"))
            throw evhar::ConfigError("checkpoint has no split metadata; use --split all");
        const evhar::SplitIndices s =
            evhar::stratified_split(index.labels, std::stod(ckpt.meta.at("train_frac")),
                                    std::stod(ckpt.meta.at("val_frac")),
                                    std::stoull(ckpt.meta.at("split_seed")));
        if (split == "test") indices = s.test;
        else if (split == "val") indices = s.val;
        else if (split == "train") indices = s.train;
        else throw evhar::ConfigError("unknown split: " + split);
    }

    evhar::FocalLossConfig loss_cfg;
    loss_cfg.alpha.assign(static_cast<size_t>(cfg.num_classes), 1.0);
    const evhar::EvalResult result =
        evhar::evaluate_model(ckpt.params, store, indices, 32, loss_cfg);
    const evhar::MetricsResult metrics =
        evhar::compute_metrics(result.predictions, result.labels, cfg.num_classes);
    const std::string confusion_path = (fs::path(out) / "confusion.csv").string();
    evhar::write_confusion_csv(confusion_path, metrics);
    manifest.add_output(confusion_path);

    std::cout << "samples: " << indices.size() << "\n"
              << "accuracy: " << fmt_pct(metrics.accuracy) << "\n"
              << "weighted F1: " << metrics.weighted_f1 << "\n";
    manifest.set("metrics",
                 {{"accuracy", metrics.accuracy}, {"weighted_f1", metrics.weighted_f1}});
    manifest.finalize(true);
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& sequence, const std::string& out) {
    ManifestGuard manifest(out, "infer", {{"checkpoint", checkpoint}, {"sequence", sequence}}, 0);
    evhar::Checkpoint ckpt = evhar::load_checkpoint(checkpoint);
    const evhar::ModelConfig& cfg = ckpt.params.config;

    std::vector<std::string> class_names;
    if (ckpt.meta.count("classes")) {
        std::stringstream ss(ckpt.meta.at("classes"));
        std::string name;
        while (std::getline(ss, name, ',')) class_names.push_back(name);
    }
    const evhar::ClipTensor clip =
        evhar::load_sequence_clip(sequence, cfg.clip_length, cfg.input_height, cfg.input_width);
    evhar::TensorF batch({1, 1, cfg.clip_length, cfg.input_height, cfg.input_width});
    std::copy(clip.values.begin(), clip.values.end(), batch.data());

    const evhar::TensorF logits = evhar::model_forward(ckpt.params, batch, evhar::nn::Mode::eval,
                                                       0, nullptr);
    const evhar::TensorF probs = evhar::nn::softmax_rows(logits);
    int best = 0;
    for (int k = 0; k < cfg.num_classes; ++k) {
        const std::string name =
            k < static_cast<int>(class_names.size()) ? class_names[static_cast<size_t>(k)]
                                                     : "class_" + std::to_string(k);
        std::cout << name << ": " << probs[k] << "\n";
        if (probs[k] > probs[best]) best = k;
    }
    const std::string best_name = best < static_cast<int>(class_names.size())
                                      ? class_names[static_cast<size_t>(best)]
                                      : "class_" + std::to_string(best);
    std::cout << "predicted: " << best_name << "\n";
    manifest.set("metrics", {{"predicted", best_name}});
    manifest.finalize(true);
    return 0;
}

// ------------------------------------------------------------------ ablate

struct AblateVariant {
    std::string name;
    TrainArgs args;
};

int cmd_ablate(const TrainArgs& base, const std::string& grid_path, const std::string& out) {
    ManifestGuard manifest(out, "ablate", train_config_json(base), base.seed);

    std::vector<AblateVariant> variants;
    variants.push_back({"baseline", base});
    if (grid_path.empty()) {
        // the published four-variant grid
        AblateVariant half_ch{"half_channels", base};
        half_ch.args.channel_mult = 0.5;
        AblateVariant double_ch{"double_channels", base};
        double_ch.args.channel_mult = 2.0;
        AblateVariant half_fr{"half_frames", base};
        half_fr.args.frames = std::max(1, base.frames / 2);
        AblateVariant double_fr{"double_frames", base};
        double_fr.args.frames = base.frames * 2;
        variants.insert(variants.end(), {half_ch, double_ch, half_fr, double_fr});
    } else {
        std::ifstream f(grid_path);
        if (!f) throw evhar::IoError("cannot open grid file: " + grid_path);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#') continue;
            const size_t colon = line.find(':');
            if (colon == std::string::npos)
                throw evhar::ConfigError("grid line needs 'name: key=value ...': " + line);
            AblateVariant v{line.substr(0, colon), base};
            std::stringstream ss(line.substr(colon + 1));
            std::string kv;
            while (ss >> kv) {
                const size_t eq = kv.find('=');
                if (eq == std::string::npos)
                    throw evhar::ConfigError("grid entry needs key=value: " + kv);
                const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
                if (key == "channel_mult") v.args.channel_mult = std::stod(value);
                else if (key == "frames") v.args.frames = std::stoi(value);
                else if (key == "attention") v.args.attention = value == "1" || value == "true";
                else if (key == "dropout") v.args.dropout = std::stod(value);
                else if (key == "gamma") v.args.gamma = std::stod(value);
                else throw evhar::ConfigError("unknown grid key: " + key);
            }
            variants.push_back(std::move(v));
        }
    }

    const std::string csv_path = (fs::path(out) / "ablation.csv").string();
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw evhar::IoError("cannot write " + csv_path);
    csv << "config,f1,accuracy,best_val_loss,minutes,status\n";

    bool any_failed = false;
    for (const AblateVariant& v : variants) {
        std::cout << "=== ablation: " << v.name << " ===" << std::endl;
        try {
            const TrainOutcome outcome = run_training(v.args, (fs::path(out) / v.name).string());
            const evhar::TrainReport& r = outcome.report;
            double best_val_loss = r.val_loss.empty() ? 0.0 : r.val_loss[0];
            for (double l : r.val_loss) best_val_loss = std::min(best_val_loss, l);
            char row[256];
            std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f,%.2f,ok\n", v.name.c_str(),
                          r.test_metrics.weighted_f1, r.test_metrics.accuracy, best_val_loss,
                          r.wall_minutes);
            csv << row;
        } catch (const std::exception& e) {
            std::cerr << "variant " << v.name << " failed: " << e.what() << "\n";
            csv << v.name << ",,,,,failed\n";
            any_failed = true;
        }
        csv.flush();
    }
    manifest.add_output(csv_path);
    manifest.finalize(!any_failed);
    return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-based human action recognition toolkit"};
    app.require_subcommand(1);
    app.footer("EVHAR_THREADS caps worker parallelism (default: all cores).");

    EncodeArgs enc;
    CLI::App* encode = app.add_subcommand("encode", "convert a video or EVS1 event file to a clip directory");
    encode->add_option("--input", enc.input, "EVS1 file or PGM clip directory")->required();
    encode->add_option("--output", enc.output, "output clip directory")->required();
    encode->add_option("--fps", enc.fps, "accumulation rate, frames per second");
    encode->add_option("--frames", enc.frames, "clip length after downsampling");
    encode->add_option("--res", enc.res, "target resolution (square)");
    encode->add_option("--mode", enc.mode, "count or polarity_sum");
    encode->add_option("--threshold", enc.threshold, "DVS log-intensity threshold");

    DatagenArgs dg;
    CLI::App* datagen = app.add_subcommand("datagen", "generate the synthetic six-class event dataset");
    datagen->add_option("--out", dg.out, "output dataset root")->required();
    datagen->add_option("--per-class", dg.per_class, "sequences per class");
    datagen->add_option("--seed", dg.seed, "generator seed");
    datagen->add_option("--noise", dg.noise, "noise events per frame");
    datagen->add_option("--res", dg.res, "sensor resolution (square)");
    datagen->add_option("--duration", dg.duration, "clip duration in seconds");
    datagen->add_option("--rate-scale", dg.rate_scale, "motion speed / event rate scale");

    auto add_train_flags = [](CLI::App* cmd, TrainArgs& a) {
        cmd->add_option("--data", a.data, "dataset root")->required();
        cmd->add_option("--epochs", a.epochs, "maximum epochs");
        cmd->add_option("--batch", a.batch, "batch size");
        cmd->add_option("--lr", a.lr, "learning rate");
        cmd->add_option("--wd", a.wd, "decoupled weight decay");
        cmd->add_option("--gamma", a.gamma, "focal loss focusing parameter");
        cmd->add_option("--patience", a.patience, "early stopping patience (epochs)");
        cmd->add_option("--channel-mult", a.channel_mult, "width multiplier for all blocks");
        cmd->add_option("--frames", a.frames, "frames per clip");
        cmd->add_flag("--attention", a.attention, "enable channel attention");
        cmd->add_option("--dropout", a.dropout, "dropout rate before the head");
        cmd->add_option("--seed", a.seed, "training seed");
        cmd->add_option("--res", a.res, "input resolution (square)");
        cmd->add_option("--augment-classes", a.augment_classes,
                        "comma-separated class names receiving heavy augmentation");
        cmd->add_option("--train-frac", a.train_frac, "training split fraction");
        cmd->add_option("--val-frac", a.val_frac, "validation split fraction");
    };

    TrainArgs tr;
    CLI::App* train = app.add_subcommand("train", "train the 3D-CNN on a dataset");
    add_train_flags(train, tr);
    train->add_option("--out", tr.out, "output directory");

    std::string eval_ckpt, eval_data, eval_split = "test", eval_out = ".";
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--split", eval_split, "test, val, train or all");
    eval->add_option("--out", eval_out, "directory for confusion.csv and manifest");

    std::string infer_ckpt, infer_seq, infer_out = ".";
    CLI::App* infer = app.add_subcommand("infer", "classify a single sequence directory");
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--sequence", infer_seq)->required();
    infer->add_option("--out", infer_out, "directory for the manifest");

    TrainArgs ab;
    ab.out = "ablate_out";
    std::string grid_path;
    CLI::App* ablate = app.add_subcommand("ablate", "run the network-configuration ablation grid");
    add_train_flags(ablate, ab);
    ablate->add_option("--out", ab.out, "output directory");
    ablate->add_option("--grid", grid_path, "grid file: one 'name: key=value ...' per line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2, --help exits 0
    }

    try {
        if (encode->parsed()) return cmd_encode(enc);
        if (datagen->parsed()) {
            if (dg.per_class < 1) throw evhar::ConfigError("--per-class must be >= 1");
            return cmd_datagen(dg);
        }
        if (train->parsed()) return cmd_train(tr);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out);
        if (infer->parsed()) return cmd_infer(infer_ckpt, infer_seq, infer_out);
        if (ablate->parsed()) return cmd_ablate(ab, grid_path, ab.out);
    } catch (const evhar::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
