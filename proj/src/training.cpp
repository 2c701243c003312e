#include "evhar/training.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace evhar {

void FocalLossConfig::validate(int64_t num_classes) const {
    if (gamma < 0) throw ConfigError("focal gamma must be >= 0");
    if (static_cast<int64_t>(alpha.size()) != num_classes)
        throw ConfigError("focal alpha length must equal the class count");
    for (double a : alpha)
        if (!(a > 0)) throw ConfigError("focal alpha weights must be > 0");
}

std::vector<double> class_weights(const std::vector<int64_t>& counts) {
    if (counts.empty()) throw ConfigError("class_weights needs at least one class");
    int64_t total = 0;
    for (int64_t c : counts) {
        if (c <= 0) throw ConfigError("class_weights: degenerate class with zero samples");
        total += c;
    }
    std::vector<double> alpha(counts.size());
    for (size_t i = 0; i < counts.size(); ++i)
        alpha[i] = static_cast<double>(total) /
                   (static_cast<double>(counts.size()) * static_cast<double>(counts[i]));
    return alpha;
}

void OptimizerConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("adam betas must be in [0, 1)");
    if (epsilon <= 0) throw ConfigError("adam epsilon must be > 0");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (train_frac <= 0 || val_frac <= 0 || test_frac <= 0 ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must be positive and sum to 1");
}

// ------------------------------------------------------------ augmentation

std::set<int> default_augment_classes(const std::vector<std::string>& class_names) {
    std::set<int> out;
    for (size_t i = 0; i < class_names.size(); ++i) {
        std::string lower = class_names[i];
        std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
        if (lower.find("eating") != std::string::npos || lower.find("washing") != std::string::npos)
            out.insert(static_cast<int>(i));
    }
    return out;
}

ClipTensor flip_horizontal(const ClipTensor& clip) {
    ClipTensor out(clip.frames, clip.height, clip.width);
    for (int t = 0; t < clip.frames; ++t)
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x) out.at(t, y, x) = clip.at(t, y, clip.width - 1 - x);
    return out;
}

namespace {

// Inverse-mapped bilinear warp shared by rotation and translation; source
// coordinates outside the frame read as zero ("no events").
ClipTensor warp_clip(const ClipTensor& clip, double m00, double m01, double m10, double m11,
                     double tx, double ty) {
    ClipTensor out(clip.frames, clip.height, clip.width);
    const double cx = (clip.width - 1) * 0.5, cy = (clip.height - 1) * 0.5;
    for (int t = 0; t < clip.frames; ++t)
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x) {
                const double dx = x - cx - tx, dy = y - cy - ty;
                const double sx = m00 * dx + m01 * dy + cx;
                const double sy = m10 * dx + m11 * dy + cy;
                const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                auto sample = [&](int yy, int xx) -> double {
                    if (xx < 0 || xx >= clip.width || yy < 0 || yy >= clip.height) return 0.0;
                    return clip.at(t, yy, xx);
                };
                const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                 fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                out.at(t, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return out;
}

}  // namespace

ClipTensor rotate_clip(const ClipTensor& clip, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    // inverse rotation
    return warp_clip(clip, c, s, -s, c, 0, 0);
}

ClipTensor translate_clip(const ClipTensor& clip, double dx_frac, double dy_frac) {
    return warp_clip(clip, 1, 0, 0, 1, dx_frac * clip.width, dy_frac * clip.height);
}

ClipTensor gaussian_blur_clip(const ClipTensor& clip, double sigma) {
    if (sigma <= 0) return clip;
    const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& k : kernel) k /= sum;

    ClipTensor tmp(clip.frames, clip.height, clip.width);
    ClipTensor out(clip.frames, clip.height, clip.width);
    for (int t = 0; t < clip.frames; ++t) {
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x) {
                double v = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = x + i;
                    if (xx >= 0 && xx < clip.width) v += kernel[static_cast<size_t>(i + radius)] * clip.at(t, y, xx);
                }
                tmp.at(t, y, x) = static_cast<float>(v);
            }
        for (int y = 0; y < clip.height; ++y)
            for (int x = 0; x < clip.width; ++x) {
                double v = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = y + i;
                    if (yy >= 0 && yy < clip.height) v += kernel[static_cast<size_t>(i + radius)] * tmp.at(t, yy, x);
                }
                out.at(t, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    }
    return out;
}

ClipTensor augment_clip(const ClipTensor& clip, int class_idx, const AugmentConfig& config,
                        Rng& rng) {
    if (!config.classes.count(class_idx)) return clip;
    ClipTensor out = clip;
    if (rng.bernoulli(0.5)) out = flip_horizontal(out);
    if (rng.bernoulli(0.5)) out = rotate_clip(out, rng.uniform(-15.0, 15.0));
    if (rng.bernoulli(0.5)) out = translate_clip(out, rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    if (rng.bernoulli(0.5)) out = gaussian_blur_clip(out, rng.uniform(0.1, 1.0));
    return out;
}

// ---------------------------------------------------------------- metrics

MetricsResult compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                              int num_classes) {
    if (predictions.size() != labels.size()) throw ShapeError("metrics: prediction/label length mismatch");
    if (predictions.empty()) throw ConfigError("metrics: empty evaluation");
    if (num_classes < 1) throw ConfigError("metrics: num_classes must be >= 1");

    MetricsResult r;
    r.num_classes = num_classes;
    r.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
            throw Error("metrics: class index out of range");
        r.confusion[static_cast<size_t>(y) * num_classes + p]++;
        if (y == p) correct++;
    }
    const double n = static_cast<double>(labels.size());
    r.accuracy = static_cast<double>(correct) / n;

    double weighted = 0;
    for (int c = 0; c < num_classes; ++c) {
        int64_t tp = r.confusion_at(c, c), row = 0, col = 0;
        for (int j = 0; j < num_classes; ++j) {
            row += r.confusion_at(c, j);
            col += r.confusion_at(j, c);
        }
        const double precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        const double recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        const double f1 = (precision + recall > 0) ? 2 * precision * recall / (precision + recall) : 0.0;
        weighted += (static_cast<double>(row) / n) * f1;
    }
    r.weighted_f1 = weighted;
    return r;
}

void write_confusion_csv(const std::string& path, const MetricsResult& metrics) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (int i = 0; i < metrics.num_classes; ++i) {
        for (int j = 0; j < metrics.num_classes; ++j)
            f << (j ? "," : "") << metrics.confusion_at(i, j);
        f << "\n";
    }
}

// ------------------------------------------------------------- clip store

ClipStore::ClipStore(DatasetIndex index, int frames, int height, int width)
    : index_(std::move(index)), frames_(frames), height_(height), width_(width) {
    if (frames_ < 1 || height_ < 1 || width_ < 1) throw ConfigError("clip store dimensions must be positive");
    cache_.resize(index_.sequence_dirs.size());
}

ClipTensor ClipStore::load(size_t i) const {
    if (i >= index_.sequence_dirs.size()) throw Error("clip index out of range");
    {
        std::lock_guard<std::mutex> lock(log_mutex_);
        log_.push_back({i, phase_});
    }
    if (cache_[i]) return *cache_[i];
    ClipTensor clip = load_sequence_clip(index_.sequence_dirs[i], frames_, height_, width_);
    cache_[i] = std::make_unique<ClipTensor>(clip);
    return clip;
}

std::vector<ClipStore::AccessRecord> ClipStore::access_log() const {
    std::lock_guard<std::mutex> lock(log_mutex_);
    return log_;
}

// -------------------------------------------------------------- train loop

SplitIndices stratified_split(const std::vector<int>& labels, double train_frac, double val_frac,
                              uint64_t seed) {
    int num_classes = 0;
    for (int l : labels) num_classes = std::max(num_classes, l + 1);
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < labels.size(); ++i) by_class[static_cast<size_t>(labels[i])].push_back(i);

    SplitIndices out;
    for (int c = 0; c < num_classes; ++c) {
        auto& idx = by_class[static_cast<size_t>(c)];
        const int64_t n = static_cast<int64_t>(idx.size());
        if (n < 3) throw ConfigError("every class needs at least 3 samples to populate all splits");
        Rng rng(mix_seed(seed, static_cast<uint64_t>(c), 0x73706c6974ULL));
        rng.shuffle(idx);
        int64_t n_train = std::llround(train_frac * static_cast<double>(n));
        n_train = std::clamp<int64_t>(n_train, 1, n - 2);
        int64_t n_val = std::llround(val_frac * static_cast<double>(n));
        n_val = std::clamp<int64_t>(n_val, 1, n - n_train - 1);
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_train) out.train.push_back(idx[static_cast<size_t>(i)]);
            else if (i < n_train + n_val) out.val.push_back(idx[static_cast<size_t>(i)]);
            else out.test.push_back(idx[static_cast<size_t>(i)]);
        }
    }
    return out;
}

namespace {

// Assembles a (B,1,T,H,W) batch; augmentation parameters derive from
// (seed, epoch, position) so results are independent of worker count.
TensorF build_batch(const ClipStore& store, const std::vector<size_t>& order, size_t begin,
                    size_t count, const AugmentConfig& aug, uint64_t seed, int64_t epoch,
                    bool training, std::vector<int>& labels_out) {
    const int t = store.frames(), h = store.height(), w = store.width();
    TensorF batch({static_cast<int64_t>(count), 1, t, h, w});
    labels_out.resize(count);
    const int64_t sample = static_cast<int64_t>(t) * h * w;
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (int64_t j = 0; j < static_cast<int64_t>(count); ++j) {
        const size_t ds_index = order[begin + static_cast<size_t>(j)];
        ClipTensor clip = store.load(ds_index);
        if (training) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch) * 1000003ULL + begin + static_cast<size_t>(j),
                             0x617567ULL));
            clip = augment_clip(clip, store.index().labels[ds_index], aug, rng);
        }
        std::copy(clip.values.begin(), clip.values.end(), batch.data() + j * sample);
        labels_out[static_cast<size_t>(j)] = store.index().labels[ds_index];
    }
    return batch;
}

std::vector<int> argmax_rows(const TensorF& logits) {
    const int64_t b = logits.dim(0), k = logits.dim(1);
    std::vector<int> preds(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        const float* row = logits.data() + i * k;
        int best = 0;
        for (int64_t j = 1; j < k; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        preds[static_cast<size_t>(i)] = best;
    }
    return preds;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

EvalResult evaluate_model(ModelParams<float>& params, const ClipStore& store,
                          const std::vector<size_t>& indices, int batch_size,
                          const FocalLossConfig& loss_config) {
    if (indices.empty()) throw ConfigError("evaluate_model: empty index set");
    EvalResult out;
    AugmentConfig no_aug;
    double loss_sum = 0;
    for (size_t begin = 0; begin < indices.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t count = std::min<size_t>(static_cast<size_t>(batch_size), indices.size() - begin);
        std::vector<int> labels;
        TensorF batch = build_batch(store, indices, begin, count, no_aug, 0, 0, false, labels);
        TensorF logits = model_forward(params, batch, nn::Mode::eval, 0, nullptr);
        const FocalLossResult<float> fl = focal_loss(logits, labels, loss_config);
        loss_sum += fl.loss * static_cast<double>(count);
        const std::vector<int> preds = argmax_rows(logits);
        out.predictions.insert(out.predictions.end(), preds.begin(), preds.end());
        out.labels.insert(out.labels.end(), labels.begin(), labels.end());
    }
    out.loss = loss_sum / static_cast<double>(indices.size());
    return out;
}

TrainReport train_model(ClipStore& store, const ModelConfig& model_config,
                        const TrainConfig& train_config, const OptimizerConfig& optimizer_config,
                        double focal_gamma, const std::string& out_dir, std::ostream* progress) {
    const auto t_start = std::chrono::steady_clock::now();
    model_config.validate();
    train_config.validate();
    optimizer_config.validate();
    if (static_cast<int>(store.index().class_names.size()) != model_config.num_classes)
        throw ConfigError("model num_classes does not match dataset class count");
    if (store.frames() != model_config.clip_length)
        throw ConfigError("clip store frame count does not match model clip_length");
    fs::create_directories(out_dir);

    const SplitIndices split =
        stratified_split(store.index().labels, train_config.train_frac, train_config.val_frac,
                         train_config.seed);
    if (split.train.empty() || split.val.empty() || split.test.empty())
        throw ConfigError("empty split");

    std::vector<int64_t> train_counts(static_cast<size_t>(model_config.num_classes), 0);
    for (size_t i : split.train) train_counts[static_cast<size_t>(store.index().labels[i])]++;
    FocalLossConfig loss_config;
    loss_config.gamma = focal_gamma;
    loss_config.alpha = class_weights(train_counts);

    AugmentConfig aug;
    aug.classes = train_config.augmentation_classes;

    ModelParams<float> params = build_model<float>(model_config, train_config.seed);
    AdamW<float> optimizer(optimizer_config);

    TrainReport report;
    report.param_count = params.learnable_count();
    report.checkpoint_path = (fs::path(out_dir) / "best.ckpt").string();

    std::map<std::string, std::string> ckpt_meta;
    {
        std::string classes;
        for (size_t i = 0; i < store.index().class_names.size(); ++i)
            classes += (i ? "," : "") + store.index().class_names[i];
        ckpt_meta["classes"] = classes;
        ckpt_meta["split_seed"] = std::to_string(train_config.seed);
        ckpt_meta["train_frac"] = fmt_g(train_config.train_frac);
        ckpt_meta["val_frac"] = fmt_g(train_config.val_frac);
    }

    std::ofstream log_csv(fs::path(out_dir) / "training_log.csv", std::ios::trunc);
    if (!log_csv) throw IoError("cannot write training_log.csv in " + out_dir);
    log_csv << "epoch,train_loss,val_loss,val_acc,val_f1\n";

    double best_f1 = -1;
    int epochs_since_improvement = 0;

    std::vector<size_t> train_order = split.train;
    for (int epoch = 0; epoch < train_config.max_epochs; ++epoch) {
        store.set_phase("train");
        Rng shuffle_rng(mix_seed(train_config.seed, static_cast<uint64_t>(epoch), 0x65706f6368ULL));
        shuffle_rng.shuffle(train_order);

        double loss_sum = 0;
        int64_t correct = 0;
        for (size_t begin = 0, step = 0; begin < train_order.size();
             begin += static_cast<size_t>(train_config.batch_size), ++step) {
            const size_t count =
                std::min<size_t>(static_cast<size_t>(train_config.batch_size), train_order.size() - begin);
            std::vector<int> labels;
            TensorF batch = build_batch(store, train_order, begin, count, aug, train_config.seed,
                                        epoch, true, labels);
            params.zero_grads();
            ForwardTrace<float> trace;
            TensorF logits = model_forward(params, batch, nn::Mode::train,
                                           mix_seed(train_config.seed, static_cast<uint64_t>(epoch), step),
                                           &trace);
            const FocalLossResult<float> fl = focal_loss(logits, labels, loss_config);
            model_backward(params, trace, fl.grad_logits, false);
            optimizer.step(params);

            loss_sum += fl.loss * static_cast<double>(count);
            const std::vector<int> preds = argmax_rows(logits);
            for (size_t j = 0; j < count; ++j)
                if (preds[j] == labels[j]) correct++;
        }
        const double train_loss = loss_sum / static_cast<double>(train_order.size());
        const double train_acc = static_cast<double>(correct) / static_cast<double>(train_order.size());

        store.set_phase("validate");
        const EvalResult val = evaluate_model(params, store, split.val, train_config.batch_size, loss_config);
        const MetricsResult val_metrics =
            compute_metrics(val.predictions, val.labels, model_config.num_classes);

        report.train_loss.push_back(train_loss);
        report.train_acc.push_back(train_acc);
        report.val_loss.push_back(val.loss);
        report.val_acc.push_back(val_metrics.accuracy);
        report.val_f1.push_back(val_metrics.weighted_f1);
        report.epochs_run = epoch + 1;

        log_csv << epoch << ',' << fmt_g(train_loss) << ',' << fmt_g(val.loss) << ','
                << fmt_g(val_metrics.accuracy) << ',' << fmt_g(val_metrics.weighted_f1) << '\n';
        log_csv.flush();
        if (progress)
            (*progress) << "epoch " << epoch << " train_loss=" << fmt_g(train_loss)
                        << " train_acc=" << fmt_g(train_acc) << " val_loss=" << fmt_g(val.loss)
                        << " val_acc=" << fmt_g(val_metrics.accuracy)
                        << " val_f1=" << fmt_g(val_metrics.weighted_f1) << std::endl;

        if (val_metrics.weighted_f1 > best_f1) {
            best_f1 = val_metrics.weighted_f1;
            report.best_epoch = epoch;
            report.best_val_f1 = best_f1;
            epochs_since_improvement = 0;
            save_checkpoint(report.checkpoint_path, params, ckpt_meta,
                            {{"best_epoch", static_cast<double>(epoch)}, {"val_f1", best_f1}});
        } else {
            epochs_since_improvement++;
        }
        if (epochs_since_improvement >= train_config.patience) break;
    }

    store.set_phase("final_eval");
    load_checkpoint_into(report.checkpoint_path, params);
    const EvalResult test = evaluate_model(params, store, split.test, train_config.batch_size, loss_config);
    report.test_metrics = compute_metrics(test.predictions, test.labels, model_config.num_classes);
    report.test_loss = test.loss;
    write_confusion_csv((fs::path(out_dir) / "confusion.csv").string(), report.test_metrics);

    report.wall_minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() / 60.0;
    return report;
}

}  // namespace evhar
