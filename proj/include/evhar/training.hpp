#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "evhar/event_codec.hpp"
#include "evhar/model.hpp"
#include "evhar/tensor.hpp"

namespace evhar {

// ------------------------------------------------------------ focal loss

struct FocalLossConfig {
    double gamma = 2.0;
    std::vector<double> alpha;  // per-class weights, length K

    void validate(int64_t num_classes) const;
};

// alpha_c = N / (K * n_c); balanced counts give all-ones.
std::vector<double> class_weights(const std::vector<int64_t>& counts);

template <typename T>
struct FocalLossResult {
    double loss = 0;
    Tensor<T> grad_logits;
};

// Mean-reduced multiclass focal loss with analytic logit gradient.
template <typename T>
FocalLossResult<T> focal_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                              const FocalLossConfig& config) {
    if (logits.rank() != 2) throw ShapeError("focal_loss expects (B, K) logits");
    const int64_t b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) throw ShapeError("focal_loss label count mismatch");
    config.validate(k);
    if (!logits.all_finite()) throw Error("focal_loss requires finite logits");

    FocalLossResult<T> result;
    result.grad_logits = Tensor<T>({b, k});
    const double gamma = config.gamma;
    double total = 0;
    std::vector<double> p(static_cast<size_t>(k));
    for (int64_t bi = 0; bi < b; ++bi) {
        const int y = labels[static_cast<size_t>(bi)];
        if (y < 0 || y >= k) throw Error("focal_loss label out of range");
        const T* z = logits.data() + bi * k;
        double mx = static_cast<double>(z[0]);
        for (int64_t i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(z[i]));
        double sum = 0;
        for (int64_t i = 0; i < k; ++i) {
            p[static_cast<size_t>(i)] = std::exp(static_cast<double>(z[i]) - mx);
            sum += p[static_cast<size_t>(i)];
        }
        for (int64_t i = 0; i < k; ++i) p[static_cast<size_t>(i)] /= sum;

        const double alpha = config.alpha[static_cast<size_t>(y)];
        const double pt_raw = p[static_cast<size_t>(y)];
        const double pt = std::max(pt_raw, 1e-12);
        const double u = 1.0 - pt_raw;
        const double modulator = std::pow(u, gamma);  // (1-pt)^gamma, 0^0 == 1
        total += -alpha * modulator * std::log(pt);

        // d/dz_j = [a*g*(1-pt)^(g-1)*pt*log(pt) - a*(1-pt)^g] * (1{j==y} - p_j)
        const double lead =
            alpha * ((gamma > 0 && u > 0) ? gamma * std::pow(u, gamma - 1.0) * pt * std::log(pt) : 0.0) -
            alpha * modulator;
        T* g = result.grad_logits.data() + bi * k;
        for (int64_t j = 0; j < k; ++j) {
            const double ind = (j == y) ? 1.0 : 0.0;
            g[j] = static_cast<T>(lead * (ind - p[static_cast<size_t>(j)]) / static_cast<double>(b));
        }
    }
    result.loss = total / static_cast<double>(b);
    return result;
}

// ---------------------------------------------------------------- optimizer

struct OptimizerConfig {
    double learning_rate = 0.0009;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

// One AdamW update on a single tensor. Decoupled decay is applied only when
// `decay` is set (conv/linear weights; never biases or norm parameters).
template <typename T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, int64_t t,
                  const OptimizerConfig& cfg, bool decay) {
    if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v))
        throw ShapeError("adamw_update shape mismatch");
    if (t < 1) throw ConfigError("adamw step index must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (int64_t i = 0; i < param.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        double update = m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        if (decay) update += cfg.weight_decay * static_cast<double>(param[i]);
        param[i] = static_cast<T>(static_cast<double>(param[i]) - cfg.learning_rate * update);
    }
}

template <typename T>
class AdamW {
public:
    explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) { cfg.validate(); }

    void step(ModelParams<T>& params) {
        if (m_.empty()) {
            for (const auto& p : params.tensors) {
                m_.emplace_back(p.value.shape());
                v_.emplace_back(p.value.shape());
            }
        }
        ++t_;
        for (size_t i = 0; i < params.tensors.size(); ++i) {
            auto& p = params.tensors[i];
            if (!p.learnable) continue;
            adamw_update(p.value, p.grad, m_[i], v_[i], t_, cfg_, p.decay);
        }
    }

    int64_t step_count() const { return t_; }

private:
    OptimizerConfig cfg_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

// ------------------------------------------------------------ augmentation

struct AugmentConfig {
    std::set<int> classes;  // classes receiving heavy augmentation
};

// Matches names like "Eating" / "Washing up" case-insensitively.
std::set<int> default_augment_classes(const std::vector<std::string>& class_names);

ClipTensor flip_horizontal(const ClipTensor& clip);
ClipTensor rotate_clip(const ClipTensor& clip, double degrees);
ClipTensor translate_clip(const ClipTensor& clip, double dx_frac, double dy_frac);
ClipTensor gaussian_blur_clip(const ClipTensor& clip, double sigma);

// Identity for classes outside the set; otherwise flip / rotate(+-15 deg) /
// translate(+-10%) / blur(sigma in [0.1,1]), each with probability 0.5 and
// frame-consistent parameters.
ClipTensor augment_clip(const ClipTensor& clip, int class_idx, const AugmentConfig& config,
                        Rng& rng);

// ---------------------------------------------------------------- metrics

struct MetricsResult {
    double accuracy = 0;
    double weighted_f1 = 0;
    int num_classes = 0;
    std::vector<int64_t> confusion;  // row = true class, row-major K x K

    int64_t confusion_at(int truth, int pred) const {
        return confusion[static_cast<size_t>(truth) * num_classes + pred];
    }
};

MetricsResult compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                              int num_classes);

void write_confusion_csv(const std::string& path, const MetricsResult& metrics);

// ------------------------------------------------------------- clip store

// Loads dataset sequences as clips (downsample to T frames, resize/pad),
// caches decoded clips, and records every access with the current phase so
// tests can assert the test split is untouched before final evaluation.
class ClipStore {
public:
    ClipStore(DatasetIndex index, int frames, int height, int width);

    const DatasetIndex& index() const { return index_; }
    size_t size() const { return index_.sequence_dirs.size(); }
    int frames() const { return frames_; }
    int height() const { return height_; }
    int width() const { return width_; }

    ClipTensor load(size_t i) const;

    void set_phase(const std::string& phase) { phase_ = phase; }

    struct AccessRecord {
        size_t index;
        std::string phase;
    };
    std::vector<AccessRecord> access_log() const;

private:
    DatasetIndex index_;
    int frames_, height_, width_;
    std::string phase_ = "init";
    mutable std::vector<std::unique_ptr<ClipTensor>> cache_;
    mutable std::vector<AccessRecord> log_;
    mutable std::mutex log_mutex_;
};

// -------------------------------------------------------------- train loop

struct TrainConfig {
    int batch_size = 32;
    int max_epochs = 1000;
    int patience = 100;  // epochs without weighted-F1 improvement
    double train_frac = 0.7;
    double val_frac = 0.15;
    double test_frac = 0.15;
    uint64_t seed = 0;
    std::set<int> augmentation_classes;

    void validate() const;
};

struct SplitIndices {
    std::vector<size_t> train, val, test;
};

// Per-class shuffle then fraction split; every class lands in every split.
SplitIndices stratified_split(const std::vector<int>& labels, double train_frac, double val_frac,
                              uint64_t seed);

struct TrainReport {
    std::vector<double> train_loss, train_acc, val_loss, val_acc, val_f1;  // per epoch
    int epochs_run = 0;
    int best_epoch = -1;
    double best_val_f1 = 0;
    MetricsResult test_metrics;
    double test_loss = 0;
    double wall_minutes = 0;
    int64_t param_count = 0;
    std::string checkpoint_path;
};

struct EvalResult {
    double loss = 0;
    std::vector<int> predictions;
    std::vector<int> labels;
};

EvalResult evaluate_model(ModelParams<float>& params, const ClipStore& store,
                          const std::vector<size_t>& indices, int batch_size,
                          const FocalLossConfig& loss_config);

// Full loop: stratified split, augmented mini-batches, AdamW, per-epoch
// validation, best-F1 checkpointing with early stopping, final test
// evaluation of the best checkpoint. Writes training_log.csv, confusion.csv
// and best.ckpt under out_dir.
TrainReport train_model(ClipStore& store, const ModelConfig& model_config,
                        const TrainConfig& train_config, const OptimizerConfig& optimizer_config,
                        double focal_gamma, const std::string& out_dir,
                        std::ostream* progress = nullptr);

}  // namespace evhar
